//! Task instances: annotated images plus prompt text, with ground truth.
//!
//! Prompts are identical across conditions; only the drawn mark changes.
//! The baseline condition draws keypoints but no axes, the full condition
//! draws the complete axis overlay, and the no-scale ablation drops tick
//! marks and tick labels.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::answer::{self, ParsedAnswer};
use crate::eval::{self, InstanceScore, MatchPrediction, TolerancePolicy};
use crate::geometry::{Handedness, Pixel, Vec3};
use crate::overlay::{tick_label, AnnotatedImage, Keypoint, OverlayError};
use crate::raster::RgbImage;
use crate::scene::{Box3D, Category, DatasetEntry};

/// The template file shipped with the crate.
pub const DEFAULT_TEMPLATES: &str = include_str!("../templates/default.txt");

/// Distractor candidates shown next to the true point in each matching target.
pub const MATCH_DISTRACTORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("unknown keypoint label {0:?}")]
    UnknownLabel(String),
    #[error("known point set is empty")]
    EmptyKnownSet,
    #[error("label {0:?} is both known and queried")]
    OverlappingLabels(String),
    #[error("nothing to query")]
    EmptyQuery,
    #[error("view index {0} out of range")]
    ViewIndexOutOfRange(usize),
    #[error("reference view {0} is also a target view")]
    ReferenceIsTarget(usize),
    #[error("no target views")]
    NoTargets,
    #[error("expected {expected} base images, got {got}")]
    BaseCountMismatch { expected: usize, got: usize },
    #[error("unbound placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
    #[error("no template for {0}")]
    MissingTemplate(TaskKind),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TaskKind {
    Reconstruction,
    Matching,
    Detection,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Reconstruction, TaskKind::Matching, TaskKind::Detection];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Reconstruction => "reconstruction",
            TaskKind::Matching => "matching",
            TaskKind::Detection => "detection",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What gets drawn on the images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Condition {
    /// Keypoints only, no axes.
    #[cfg_attr(feature = "serde", serde(rename = "baseline"))]
    Baseline,
    /// Full axis overlay with ticks and tick labels.
    #[cfg_attr(feature = "serde", serde(rename = "3dap"))]
    Full,
    /// Axis overlay without tick marks or tick labels.
    #[cfg_attr(feature = "serde", serde(rename = "3dap-scale"))]
    NoScale,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::Full, Condition::NoScale];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Full => "3dap",
            Condition::NoScale => "3dap-scale",
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Report row label for a model, e.g. `GPT-4v+3DAP-scale`.
    pub fn row_label(self, model: &str) -> String {
        match self {
            Condition::Baseline => model.to_string(),
            Condition::Full => format!("{model}+3DAP"),
            Condition::NoScale => format!("{model}+3DAP-scale"),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchCandidate {
    /// Label drawn next to the marker, e.g. `P2`.
    pub label: String,
    /// Keypoint the marker sits on.
    pub keypoint: String,
    pub pixel: Pixel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchTarget {
    /// View index within the entry.
    pub view: usize,
    /// 1-based position among the instance images.
    pub image_number: usize,
    pub candidates: Vec<MatchCandidate>,
    /// Label of the candidate on the reference keypoint.
    pub correct: String,
    /// Projection of the reference keypoint in this view.
    pub pixel: Pixel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GroundTruth {
    /// Queried label → frame coordinates.
    Reconstruction(BTreeMap<String, Vec3>),
    Matching {
        label: String,
        reference_view: usize,
        targets: Vec<MatchTarget>,
    },
    Detection(Box3D),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    pub condition: Condition,
    pub entry_id: String,
    pub category: Category,
    /// Entry view index of each image.
    pub views: Vec<usize>,
    pub images: Vec<AnnotatedImage>,
    pub prompt: String,
    pub ground_truth: GroundTruth,
    pub tolerance: TolerancePolicy,
    /// Object bounding-box diagonal, the scale for point tolerance.
    pub diag: f64,
    pub template_version: u32,
}

impl TaskInstance {
    /// Parses a reply and scores it against the ground truth.
    pub fn score(&self, reply: &str) -> (ParsedAnswer, InstanceScore) {
        let mut parsed = answer::parse_all(reply);
        let score = match &self.ground_truth {
            GroundTruth::Reconstruction(gt) => eval::score_reconstruction(&self.id, &parsed, gt, self.diag, &self.tolerance),
            GroundTruth::Detection(b) => eval::score_detection(&self.id, &parsed.ranges, b, &self.tolerance),
            GroundTruth::Matching { targets, .. } => {
                let mut preds = Vec::with_capacity(targets.len());
                let mut truth = Vec::with_capacity(targets.len());
                for t in targets {
                    let labels: Vec<&str> = t.candidates.iter().map(|c| c.label.as_str()).collect();
                    let choice = answer::parse_choice(reply, &labels);
                    if let Some(c) = &choice {
                        parsed.choices.insert(t.image_number, c.clone());
                    }
                    preds.push(MatchPrediction::Choice(choice));
                    truth.push((t.correct.clone(), t.pixel));
                }
                if !parsed.choices.is_empty() {
                    parsed.unparsed = None;
                }
                eval::score_matching(&self.id, &preds, &truth, &self.tolerance)
            }
        };
        (parsed, score)
    }

    /// Renders every image with its mark.
    pub fn render_images(&self) -> Result<Vec<RgbImage>, OverlayError> {
        self.images.iter().map(AnnotatedImage::render).collect()
    }
}

pub fn instance_id(condition: Condition, entry_id: &str, kind: TaskKind, view: usize) -> String {
    format!("{}__{}__{}_v{}", condition.name(), entry_id, kind.name(), view)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub kind: TaskKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub version: u32,
    pub templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    /// Parses a template file: an optional `version = N` line, then
    /// `[template <kind>]` … `[/template]` sections. Lines starting with `#`
    /// outside sections are comments.
    pub fn parse(src: &str) -> Result<TemplateSet, TaskError> {
        let mut version = 0;
        let mut templates: Vec<PromptTemplate> = Vec::new();
        let mut current: Option<(TaskKind, Vec<&str>)> = None;
        for (n, line) in src.lines().enumerate() {
            let t = line.trim();
            if let Some((kind, body)) = current.as_mut() {
                if t == "[/template]" {
                    let text = body.join("\n");
                    templates.retain(|p| p.kind != *kind);
                    templates.push(PromptTemplate { kind: *kind, text });
                    current = None;
                } else {
                    body.push(line);
                }
                continue;
            }
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix("[template").and_then(|r| r.strip_suffix(']')) {
                let kind = TaskKind::parse(rest).ok_or_else(|| TaskError::MalformedTemplate(format!("line {}: unknown kind {:?}", n + 1, rest.trim())))?;
                current = Some((kind, Vec::new()));
            } else if let Some(v) = t.strip_prefix("version").map(str::trim_start).and_then(|r| r.strip_prefix('=')) {
                version = v
                    .trim()
                    .parse()
                    .map_err(|_| TaskError::MalformedTemplate(format!("line {}: bad version", n + 1)))?;
            } else {
                return Err(TaskError::MalformedTemplate(format!("line {}: text outside a template section", n + 1)));
            }
        }
        if current.is_some() {
            return Err(TaskError::MalformedTemplate("unterminated [template] section".to_string()));
        }
        Ok(TemplateSet { version, templates })
    }

    pub fn builtin() -> TemplateSet {
        TemplateSet::parse(DEFAULT_TEMPLATES).expect("built-in templates parse")
    }

    pub fn get(&self, kind: TaskKind) -> Result<&PromptTemplate, TaskError> {
        self.templates.iter().find(|t| t.kind == kind).ok_or(TaskError::MissingTemplate(kind))
    }
}

/// Single-pass placeholder substitution. `{name}` is replaced by its binding,
/// `{{` and `}}` produce literal braces, and bound values are inserted
/// verbatim (braces inside them are not expanded).
pub fn compose_prompt(template: &str, bindings: &BTreeMap<String, String>) -> Result<String, TaskError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(r) = tail.strip_prefix("{{") {
            out.push('{');
            rest = r;
        } else if let Some(r) = tail.strip_prefix("}}") {
            out.push('}');
            rest = r;
        } else if tail.starts_with('}') {
            return Err(TaskError::MalformedTemplate("unmatched '}'".to_string()));
        } else {
            let close = tail
                .find('}')
                .ok_or_else(|| TaskError::MalformedTemplate("unterminated placeholder".to_string()))?;
            let name = &tail[1..close];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(TaskError::MalformedTemplate(format!("bad placeholder {{{name}}}")));
            }
            let value = bindings.get(name).ok_or_else(|| TaskError::UnboundPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &tail[close + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Inputs shared by all instance builders.
#[derive(Debug, Clone, Copy)]
pub struct TaskContext<'a> {
    pub entry: &'a DatasetEntry,
    /// Rendered (unannotated) view images, one per entry view.
    pub bases: &'a [RgbImage],
    pub templates: &'a TemplateSet,
    pub policy: &'a TolerancePolicy,
    pub condition: Condition,
}

impl<'a> TaskContext<'a> {
    fn check(&self) -> Result<(), TaskError> {
        let expected = self.entry.views.len();
        if self.bases.len() != expected {
            return Err(TaskError::BaseCountMismatch {
                expected,
                got: self.bases.len(),
            });
        }
        Ok(())
    }

    fn view_index(&self, view: usize) -> Result<(), TaskError> {
        if view < self.entry.views.len() {
            Ok(())
        } else {
            Err(TaskError::ViewIndexOutOfRange(view))
        }
    }

    fn keypoint(&self, label: &str) -> Result<Keypoint, TaskError> {
        self.entry
            .object
            .gt_keypoints
            .iter()
            .find(|k| k.label == label)
            .cloned()
            .ok_or_else(|| TaskError::UnknownLabel(label.to_string()))
    }

    /// The view's image with the condition's mark settings applied.
    fn image(&self, view: usize, keypoints: Vec<Keypoint>, axes: bool) -> Result<AnnotatedImage, TaskError> {
        let rec = &self.entry.views[view];
        let mut style = rec.style.clone();
        let mut show_axes = axes;
        match self.condition {
            Condition::Baseline => show_axes = false,
            Condition::Full => {}
            Condition::NoScale => style.show_scale = false,
        }
        let mut img = AnnotatedImage::new(self.bases[view].clone(), rec.camera, rec.frame, style, keypoints)?;
        img.show_axes = show_axes;
        Ok(img)
    }

    fn bindings(&self) -> BTreeMap<String, String> {
        let entry = self.entry;
        let cat = entry.category.name();
        let frame = entry.frame();
        let hand = match frame.handedness() {
            Handedness::Right => "right-handed",
            Handedness::Left => "left-handed",
        };
        let axis_description = format!(
            "A 3D coordinate system is drawn on it: the origin is at the back-left-bottom corner of the {cat}, \
             the X axis (red) runs along its width, the Y axis (green) points from its back to its front \
             and the Z axis (blue) points up. The system is {hand}."
        );
        let mut b = BTreeMap::new();
        b.insert("category".to_string(), cat.to_string());
        b.insert("unit".to_string(), tick_label(1, frame.unit_length()));
        b.insert("axis_description".to_string(), axis_description);
        for key in ["known_points", "query_labels", "object_dims", "candidates"] {
            b.insert(key.to_string(), String::new());
        }
        b
    }

    fn finish(
        &self,
        kind: TaskKind,
        view: usize,
        views: Vec<usize>,
        images: Vec<AnnotatedImage>,
        bindings: &BTreeMap<String, String>,
        ground_truth: GroundTruth,
    ) -> Result<TaskInstance, TaskError> {
        let template = self.templates.get(kind)?;
        let prompt = compose_prompt(&template.text, bindings)?;
        Ok(TaskInstance {
            id: instance_id(self.condition, &self.entry.id, kind, view),
            kind,
            condition: self.condition,
            entry_id: self.entry.id.clone(),
            category: self.entry.category,
            views,
            images,
            prompt,
            ground_truth,
            tolerance: *self.policy,
            diag: self.entry.object.diagonal(),
            template_version: self.templates.version,
        })
    }
}

fn fmt_coord(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v}")
}

fn join(items: &[String], sep: &str) -> String {
    let mut out = String::new();
    for (i, s) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        out.push_str(s);
    }
    out
}

/// One view showing the known and queried keypoints; the prompt gives
/// coordinates for the known ones and asks for the rest.
pub fn make_reconstruction_instance(ctx: &TaskContext<'_>, view: usize, known: &[&str], queried: &[&str]) -> Result<TaskInstance, TaskError> {
    ctx.check()?;
    ctx.view_index(view)?;
    if known.is_empty() {
        return Err(TaskError::EmptyKnownSet);
    }
    if queried.is_empty() {
        return Err(TaskError::EmptyQuery);
    }
    let known: BTreeSet<&str> = known.iter().copied().collect();
    let queried: BTreeSet<&str> = queried.iter().copied().collect();
    if let Some(l) = known.intersection(&queried).next() {
        return Err(TaskError::OverlappingLabels(l.to_string()));
    }
    let mut drawn = Vec::new();
    let mut known_text = Vec::new();
    let mut gt = BTreeMap::new();
    for l in &known {
        let k = ctx.keypoint(l)?;
        let p = k.position;
        known_text.push(format!("{} = ({}, {}, {})", k.label, fmt_coord(p.x), fmt_coord(p.y), fmt_coord(p.z)));
        drawn.push(k);
    }
    for l in &queried {
        let k = ctx.keypoint(l)?;
        gt.insert(k.label.clone(), k.position);
        drawn.push(k);
    }
    let mut b = ctx.bindings();
    b.insert("known_points".to_string(), join(&known_text, "; "));
    let q: Vec<String> = queried.iter().map(|s| s.to_string()).collect();
    b.insert("query_labels".to_string(), join(&q, ", "));
    let image = ctx.image(view, drawn, true)?;
    ctx.finish(
        TaskKind::Reconstruction,
        view,
        alloc::vec![view],
        alloc::vec![image],
        &b,
        GroundTruth::Reconstruction(gt),
    )
}

fn match_seed(entry: &DatasetEntry, label: &str, ref_view: usize) -> u64 {
    // FNV-1a over the identifying parts
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&entry.rng_seed.to_le_bytes());
    eat(label.as_bytes());
    eat(&(ref_view as u64).to_le_bytes());
    h
}

/// The reference view carries the labeled keypoint (plus the mark); each
/// target view shows the true point and up to three distractor keypoints as
/// candidates `P1..P4` (second target `Q1..`, and so on), without axes.
pub fn make_matching_instance(ctx: &TaskContext<'_>, ref_view: usize, target_views: &[usize], label: &str) -> Result<TaskInstance, TaskError> {
    ctx.check()?;
    ctx.view_index(ref_view)?;
    if target_views.is_empty() {
        return Err(TaskError::NoTargets);
    }
    for &t in target_views {
        ctx.view_index(t)?;
        if t == ref_view {
            return Err(TaskError::ReferenceIsTarget(ref_view));
        }
    }
    let key = ctx.keypoint(label)?;
    let frame = ctx.entry.frame();
    let mut rng = ChaCha8Rng::seed_from_u64(match_seed(ctx.entry, label, ref_view));
    let others: Vec<&Keypoint> = ctx.entry.object.gt_keypoints.iter().filter(|k| k.label != label).collect();

    let mut images = alloc::vec![ctx.image(ref_view, alloc::vec![key.clone()], true)?];
    let mut targets = Vec::new();
    let mut cand_text = Vec::new();
    for (ti, &view) in target_views.iter().enumerate() {
        let camera = &ctx.entry.views[view].camera;
        let mut pool = others.clone();
        pool.shuffle(&mut rng);
        let mut chosen: Vec<&Keypoint> = pool.into_iter().take(MATCH_DISTRACTORS).collect();
        chosen.push(&key);
        chosen.shuffle(&mut rng);
        let prefix = char::from(b'P' + (ti % 10) as u8);
        let mut candidates = Vec::new();
        let mut markers = Vec::new();
        let mut correct = String::new();
        for (ci, k) in chosen.iter().enumerate() {
            let name = format!("{prefix}{}", ci + 1);
            let pixel = camera
                .project(frame.frame_to_world(k.position))
                .map_err(|_| OverlayError::KeypointBehindCamera(k.label.clone()))?;
            if k.label == key.label {
                correct = name.clone();
            }
            markers.push(Keypoint::new(name.clone(), k.position));
            candidates.push(MatchCandidate {
                label: name,
                keypoint: k.label.clone(),
                pixel,
            });
        }
        let pixel = camera
            .project(frame.frame_to_world(key.position))
            .map_err(|_| OverlayError::KeypointBehindCamera(key.label.clone()))?;
        let names: Vec<String> = candidates.iter().map(|c| c.label.clone()).collect();
        cand_text.push(format!("Image {} shows candidates {}.", ti + 2, join(&names, ", ")));
        images.push(ctx.image(view, markers, false)?);
        targets.push(MatchTarget {
            view,
            image_number: ti + 2,
            candidates,
            correct,
            pixel,
        });
    }
    let mut b = ctx.bindings();
    b.insert("query_labels".to_string(), key.label.clone());
    b.insert("candidates".to_string(), join(&cand_text, " "));
    let mut views = alloc::vec![ref_view];
    views.extend_from_slice(target_views);
    let gt = GroundTruth::Matching {
        label: key.label.clone(),
        reference_view: ref_view,
        targets,
    };
    ctx.finish(TaskKind::Matching, ref_view, views, images, &b, gt)
}

/// One annotated view; the prompt asks for the object's extent along each
/// axis, optionally stating the object's part dimensions as a reference.
pub fn make_detection_instance(ctx: &TaskContext<'_>, view: usize, reference_dims_in_prompt: bool) -> Result<TaskInstance, TaskError> {
    ctx.check()?;
    ctx.view_index(view)?;
    let mut b = ctx.bindings();
    if reference_dims_in_prompt {
        let dims: Vec<String> = ctx
            .entry
            .object
            .dims
            .iter()
            .map(|(name, v)| format!("{} {} cm", name.replace('_', " "), fmt_coord(*v)))
            .collect();
        b.insert(
            "object_dims".to_string(),
            format!(
                "For reference, the {} has these dimensions: {}.\n",
                ctx.entry.category.name(),
                join(&dims, ", ")
            ),
        );
    }
    let image = ctx.image(view, Vec::new(), true)?;
    ctx.finish(
        TaskKind::Detection,
        view,
        alloc::vec![view],
        alloc::vec![image],
        &b,
        GroundTruth::Detection(ctx.entry.object.gt_box),
    )
}

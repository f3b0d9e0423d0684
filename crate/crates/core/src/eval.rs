//! Scoring and accuracy tables.
//!
//! Accuracy is the fraction of items judged correct under a
//! [`TolerancePolicy`]; reports always carry the policy they were computed
//! under.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::answer::ParsedAnswer;
use crate::geometry::{Axis, Pixel, Vec3};
use crate::scene::{Box3D, Category};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("instance {0} has no category")]
    UnknownInstance(String),
    #[error("invalid tolerance policy: {0}")]
    InvalidPolicy(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TolerancePolicy {
    /// Point tolerance as a fraction of the object's bounding-box diagonal.
    pub point_rel_tol: f64,
    /// Pixel distance tolerance for pixel-form matching answers.
    pub pixel_tol: f64,
    /// Minimum 3D IoU for a detection to count.
    pub iou_threshold: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            point_rel_tol: 0.10,
            pixel_tol: 10.0,
            iou_threshold: 0.5,
        }
    }
}

impl TolerancePolicy {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.point_rel_tol > 0.0 && self.point_rel_tol <= 1.0) {
            return Err(EvalError::InvalidPolicy("point_rel_tol must be in (0, 1]"));
        }
        if !(self.pixel_tol >= 0.0 && self.pixel_tol.is_finite()) {
            return Err(EvalError::InvalidPolicy("pixel_tol must be a finite non-negative number"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::InvalidPolicy("iou_threshold must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "point_rel_tol={} pixel_tol={} iou_threshold={}",
            self.point_rel_tol, self.pixel_tol, self.iou_threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InstanceScore {
    pub instance_id: String,
    pub flags: Vec<bool>,
    pub accuracy: f64,
    pub parse_failed: bool,
}

impl InstanceScore {
    pub fn from_flags(instance_id: impl Into<String>, flags: Vec<bool>) -> Self {
        let accuracy = if flags.is_empty() {
            0.0
        } else {
            flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
        };
        InstanceScore {
            instance_id: instance_id.into(),
            flags,
            accuracy,
            parse_failed: false,
        }
    }

    pub fn failed(instance_id: impl Into<String>, items: usize) -> Self {
        InstanceScore {
            instance_id: instance_id.into(),
            flags: alloc::vec![false; items],
            accuracy: 0.0,
            parse_failed: true,
        }
    }
}

/// A label is correct iff present and within `point_rel_tol · diag` (inclusive).
pub fn score_reconstruction(instance_id: &str, answer: &ParsedAnswer, gt: &BTreeMap<String, Vec3>, diag: f64, policy: &TolerancePolicy) -> InstanceScore {
    if answer.points.is_empty() {
        return InstanceScore::failed(instance_id, gt.len());
    }
    let tol = policy.point_rel_tol * diag;
    let flags = gt
        .iter()
        .map(|(label, truth)| answer.points.get(label).is_some_and(|p| p.distance(*truth) <= tol))
        .collect();
    InstanceScore::from_flags(instance_id, flags)
}

/// One matching prediction per target view.
#[derive(Debug, Clone, PartialEq)]
pub enum MatchPrediction {
    Choice(Option<String>),
    Pixel(Option<Pixel>),
}

impl MatchPrediction {
    fn is_empty(&self) -> bool {
        matches!(self, MatchPrediction::Choice(None) | MatchPrediction::Pixel(None))
    }
}

/// Per target view: label form is correct iff the labels are equal; pixel
/// form iff within `pixel_tol` (inclusive). `truth[i]` is `(label, pixel)`.
pub fn score_matching(instance_id: &str, predictions: &[MatchPrediction], truth: &[(String, Pixel)], policy: &TolerancePolicy) -> InstanceScore {
    if predictions.iter().all(MatchPrediction::is_empty) {
        return InstanceScore::failed(instance_id, truth.len());
    }
    let flags = truth
        .iter()
        .enumerate()
        .map(|(i, (label, px))| match predictions.get(i) {
            Some(MatchPrediction::Choice(Some(c))) => c.eq_ignore_ascii_case(label),
            Some(MatchPrediction::Pixel(Some(p))) => p.distance(*px) <= policy.pixel_tol,
            _ => false,
        })
        .collect();
    InstanceScore::from_flags(instance_id, flags)
}

/// Intersection over union of two axis-aligned boxes; 0 when disjoint or
/// when both are degenerate.
pub fn iou_aabb(a: &Box3D, b: &Box3D) -> f64 {
    let overlap = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| (hi1.min(hi2) - lo1.max(lo2)).max(0.0);
    let ix = overlap(a.min.x, a.max.x, b.min.x, b.max.x);
    let iy = overlap(a.min.y, a.max.y, b.min.y, b.max.y);
    let iz = overlap(a.min.z, a.max.z, b.min.z, b.max.z);
    let inter = ix * iy * iz;
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Builds the predicted box from the three parsed axis ranges; a missing axis
/// is a parse failure. Correct iff IoU ≥ `iou_threshold`.
pub fn score_detection(instance_id: &str, ranges: &BTreeMap<Axis, (f64, f64)>, gt: &Box3D, policy: &TolerancePolicy) -> InstanceScore {
    let (Some(x), Some(y), Some(z)) = (ranges.get(&Axis::X), ranges.get(&Axis::Y), ranges.get(&Axis::Z)) else {
        return InstanceScore::failed(instance_id, 1);
    };
    let pred = Box3D::from_corners(Vec3::new(x.0, y.0, z.0), Vec3::new(x.1, y.1, z.1));
    InstanceScore::from_flags(instance_id, alloc::vec![iou_aabb(&pred, gt) >= policy.iou_threshold])
}

/// One table row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub condition: String,
    pub per_category: BTreeMap<Category, f64>,
    pub overall: f64,
    pub n_instances: usize,
}

/// Per-category means, and the overall mean over all instances (not the mean
/// of the category means).
pub fn aggregate(scores: &[InstanceScore], category_of: &BTreeMap<String, Category>, condition: &str) -> Result<EvalReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for s in scores {
        let cat = category_of
            .get(&s.instance_id)
            .ok_or_else(|| EvalError::UnknownInstance(s.instance_id.clone()))?;
        let e = sums.entry(*cat).or_insert((0.0, 0));
        e.0 += s.accuracy;
        e.1 += 1;
        total += s.accuracy;
    }
    Ok(EvalReport {
        condition: condition.to_string(),
        per_category: sums.into_iter().map(|(c, (sum, n))| (c, sum / n as f64)).collect(),
        overall: total / scores.len() as f64,
        n_instances: scores.len(),
    })
}

/// Two-decimal rendering, rounding half up on the value's shortest decimal
/// representation (so `0.855` becomes `"0.86"` even though the nearest binary
/// double is slightly below it).
pub fn format_2dp(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let neg = x < 0.0;
    let repr = format!("{}", libm::fabs(x));
    let (int_part, frac_part) = match repr.split_once('.') {
        Some((i, f)) => (i, f),
        None => (repr.as_str(), ""),
    };
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').chain(core::iter::repeat(0)).take(3).collect();
    digits.push(frac[0]);
    digits.push(frac[1]);
    if frac[2] >= 5 {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let n = digits.len();
    let mut out = String::new();
    let all_zero = digits.iter().all(|d| *d == 0);
    if neg && !all_zero {
        out.push('-');
    }
    for d in &digits[..n - 2] {
        out.push((b'0' + d) as char);
    }
    out.push('.');
    for d in &digits[n - 2..] {
        out.push((b'0' + d) as char);
    }
    out
}

fn columns(reports: &[EvalReport]) -> Vec<Category> {
    Category::ALL
        .into_iter()
        .filter(|c| reports.iter().any(|r| r.per_category.contains_key(c)))
        .collect()
}

fn cell(r: &EvalReport, c: Category) -> String {
    r.per_category.get(&c).map_or_else(|| "-".to_string(), |v| format_2dp(*v))
}

/// Markdown table, one row per condition. Category columns appear in
/// chair/table/sofa/cabinet order when any row has them.
pub fn emit_markdown(reports: &[EvalReport], policy: Option<&TolerancePolicy>) -> String {
    let cols = columns(reports);
    let mut out = String::new();
    if let Some(p) = policy {
        let _ = writeln!(out, "Tolerance: {}", p.describe());
        out.push('\n');
    }
    out.push_str("| condition |");
    for c in &cols {
        let _ = write!(out, " {} |", c.name());
    }
    out.push_str(" overall |\n|---|");
    for _ in &cols {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for r in reports {
        let _ = write!(out, "| {} |", r.condition);
        for c in &cols {
            let _ = write!(out, " {} |", cell(r, *c));
        }
        let _ = writeln!(out, " {} |", format_2dp(r.overall));
    }
    out
}

/// CSV table with header `condition,<categories...>,overall`. With a policy,
/// a leading `# tolerance:` comment line records it.
pub fn emit_csv(reports: &[EvalReport], policy: Option<&TolerancePolicy>) -> String {
    let cols = columns(reports);
    let mut out = String::new();
    if let Some(p) = policy {
        let _ = writeln!(out, "# tolerance: {}", p.describe());
    }
    out.push_str("condition");
    for c in &cols {
        let _ = write!(out, ",{}", c.name());
    }
    out.push_str(",overall\n");
    for r in reports {
        out.push_str(&r.condition);
        for c in &cols {
            let _ = write!(out, ",{}", cell(r, *c));
        }
        let _ = writeln!(out, ",{}", format_2dp(r.overall));
    }
    out
}

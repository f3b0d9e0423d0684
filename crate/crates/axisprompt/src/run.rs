//! Evaluation runs: build instances for every condition × task × entry,
//! query a backend, score the replies and write reports.
//!
//! Run directory layout:
//!
//! ```text
//! run_meta.json            configuration, template version, seeds, tool version
//! instances/<id>.json      prompt, ground truth, image paths
//! instances/<id>/image_<k>.png
//! replies/<id>.json        reply text and latency
//! exchanges/<id>.json      raw remote request/response (remote backend only)
//! scores.json              per-instance scores
//! report.md, report.csv    tables per task, one row per condition
//! INCOMPLETE               present while a run is unfinished
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use axisprompt_core::eval::{aggregate, emit_csv, emit_markdown, EvalReport, InstanceScore, TolerancePolicy};
use axisprompt_core::scene::{Category, DatasetEntry};
use axisprompt_core::tasks::{
    make_detection_instance, make_matching_instance, make_reconstruction_instance, Condition, GroundTruth, TaskContext, TaskError, TaskInstance, TaskKind,
    TemplateSet,
};
use axisprompt_core::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{send_all, BackendError, BackendSpec, ModelReply};
use crate::dataset::{Dataset, DatasetError};
use crate::io::{self, IoError};

pub const RUN_META: &str = "run_meta.json";
pub const SCORES: &str = "scores.json";
pub const INCOMPLETE: &str = "INCOMPLETE";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("building instance for {entry}: {source}")]
    Task { entry: String, source: TaskError },
    #[error("backend failed on {failed} instance(s), first: {id}: {source}; completed replies are kept, rerun with --resume")]
    Backend { failed: usize, id: String, source: BackendError },
    #[error("run has no scores yet")]
    NoScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub backend: BackendSpec,
    /// Row label prefix in reports, e.g. `GPT-4v`.
    pub model_label: String,
    pub tasks: Vec<TaskKind>,
    pub conditions: Vec<Condition>,
    pub policy: TolerancePolicy,
    pub seed: u64,
    /// State the object's part dimensions in detection prompts.
    pub reference_dims: bool,
    /// Template file; the built-in templates when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, backend: BackendSpec) -> Self {
        RunConfig {
            dataset: dataset.into(),
            backend,
            model_label: "model".into(),
            tasks: TaskKind::ALL.to_vec(),
            conditions: Condition::ALL.to_vec(),
            policy: TolerancePolicy::default(),
            seed: 0,
            reference_dims: true,
            templates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub config: RunConfig,
    pub template_version: u32,
    pub dataset_seed: u64,
    pub dataset_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub kind: TaskKind,
    pub condition: Condition,
    pub entry_id: String,
    pub category: Category,
    pub views: Vec<usize>,
    /// Paths relative to the run directory.
    pub images: Vec<String>,
    pub prompt: String,
    pub ground_truth: GroundTruth,
    pub tolerance: TolerancePolicy,
    pub diag: f64,
    pub template_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub kind: TaskKind,
    pub condition: Condition,
    pub category: Category,
    pub entry_id: String,
    pub accuracy: f64,
    pub flags: Vec<bool>,
    pub parse_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub tolerance: TolerancePolicy,
    pub template_version: u32,
    pub scores: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub instances: usize,
    pub sent: usize,
    /// Per task, one report per condition.
    pub reports: BTreeMap<TaskKind, Vec<EvalReport>>,
}

pub fn load_templates(path: Option<&Path>) -> Result<TemplateSet, RunError> {
    match path {
        None => Ok(TemplateSet::builtin()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| IoError::fs(p, e))?;
            TemplateSet::parse(&text).map_err(|e| RunError::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// View used for single-view tasks of an entry.
fn primary_view(entry: &DatasetEntry) -> usize {
    (entry.rng_seed % entry.views.len() as u64) as usize
}

/// Builds every instance of one entry for one condition, in task order.
pub fn build_entry_instances(
    entry: &DatasetEntry,
    bases: &[RgbImage],
    templates: &TemplateSet,
    config: &RunConfig,
    condition: Condition,
) -> Result<Vec<TaskInstance>, TaskError> {
    let ctx = TaskContext {
        entry,
        bases,
        templates,
        policy: &config.policy,
        condition,
    };
    let view = primary_view(entry);
    let labels: Vec<&str> = entry.object.gt_keypoints.iter().map(|k| k.label.as_str()).collect();
    let mut out = Vec::new();
    for kind in &config.tasks {
        out.push(match kind {
            TaskKind::Reconstruction => {
                let queried: Vec<&str> = labels.iter().copied().filter(|l| *l != "A").collect();
                make_reconstruction_instance(&ctx, view, &["A"], &queried)?
            }
            TaskKind::Matching => {
                let pool: Vec<&str> = labels.iter().copied().filter(|l| *l != "A").collect();
                let pool = if pool.is_empty() { labels.clone() } else { pool };
                let label = pool[((entry.rng_seed ^ config.seed) % pool.len() as u64) as usize];
                let targets: Vec<usize> = (0..entry.views.len()).filter(|v| *v != view).collect();
                make_matching_instance(&ctx, view, &targets, label)?
            }
            TaskKind::Detection => make_detection_instance(&ctx, view, config.reference_dims)?,
        });
    }
    Ok(out)
}

fn check_config(config: &RunConfig) -> Result<(), RunError> {
    if config.conditions.is_empty() {
        return Err(RunError::Config("at least one condition is required".into()));
    }
    if config.tasks.is_empty() {
        return Err(RunError::Config("at least one task is required".into()));
    }
    config.policy.validate().map_err(|e| RunError::Config(e.to_string()))?;
    config.backend.validate().map_err(|e| RunError::Config(e.to_string()))?;
    Ok(())
}

fn reply_path(run_dir: &Path, id: &str) -> PathBuf {
    run_dir.join("replies").join(format!("{id}.json"))
}

/// Runs (or, with `resume`, finishes) an evaluation in `run_dir`.
pub fn run(config: &RunConfig, run_dir: &Path, resume: bool) -> Result<RunSummary, RunError> {
    check_config(config)?;
    let dataset = Dataset::load(&config.dataset)?;
    let templates = load_templates(config.templates.as_deref())?;
    let meta = RunMeta {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        template_version: templates.version,
        dataset_seed: dataset.manifest.config.seed,
        dataset_entries: dataset.entries.len(),
    };
    if resume {
        let old: RunMeta = io::read_json(&run_dir.join(RUN_META)).map_err(|e| RunError::Config(format!("cannot resume: {e}")))?;
        if old != meta {
            return Err(RunError::Config("cannot resume: configuration differs from the interrupted run".into()));
        }
    } else if !io::is_empty_or_missing(run_dir)? {
        return Err(RunError::Config(format!("run directory {} is not empty", run_dir.display())));
    }
    io::create_dir_all(run_dir)?;
    io::write_atomic(&run_dir.join(INCOMPLETE), b"run not finished; rerun with --resume\n")?;
    io::write_json(&run_dir.join(RUN_META), &meta)?;

    let backend = config.backend.build().map_err(|e| RunError::Config(e.to_string()))?;

    // Build and write instances, entry by entry in parallel.
    let per_entry: Vec<Vec<(TaskInstance, Vec<Vec<u8>>)>> = (0..dataset.entries.len())
        .into_par_iter()
        .map(|i| -> Result<_, RunError> {
            let entry = &dataset.entries[i];
            let bases = dataset.load_bases(i)?;
            let mut out = Vec::new();
            for &cond in &config.conditions {
                let insts = build_entry_instances(entry, &bases, &templates, config, cond).map_err(|source| RunError::Task {
                    entry: entry.id.clone(),
                    source,
                })?;
                for inst in insts {
                    let pngs = write_instance(run_dir, &inst)?;
                    out.push((inst, pngs));
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    // condition × task × entry order
    let mut all: Vec<(TaskInstance, Vec<Vec<u8>>)> = per_entry.into_iter().flatten().collect();
    let cond_pos = |c: &Condition| config.conditions.iter().position(|x| x == c);
    let task_pos = |k: &TaskKind| config.tasks.iter().position(|x| x == k);
    all.sort_by(|a, b| (cond_pos(&a.0.condition), task_pos(&a.0.kind), &a.0.entry_id).cmp(&(cond_pos(&b.0.condition), task_pos(&b.0.kind), &b.0.entry_id)));

    // Replies already on disk (resume) are reused.
    let mut texts: Vec<Option<String>> = Vec::with_capacity(all.len());
    for (inst, _) in &all {
        let p = reply_path(run_dir, &inst.id);
        texts.push(if resume && p.is_file() {
            Some(io::read_json::<ModelReply>(&p)?.text)
        } else {
            None
        });
    }
    let pending: Vec<usize> = (0..all.len()).filter(|i| texts[*i].is_none()).collect();
    let jobs: Vec<(&TaskInstance, Vec<Vec<u8>>)> = pending.iter().map(|&i| (&all[i].0, all[i].1.clone())).collect();
    let write_err: Mutex<Option<IoError>> = Mutex::new(None);
    let results = send_all(backend.as_ref(), &jobs, |j, r| {
        if let Ok(reply) = r {
            if let Err(e) = persist_reply(run_dir, &jobs[j].0.id, reply) {
                write_err.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_err.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e.into());
    }
    let mut first_err = None;
    let mut failed = 0;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(reply) => texts[pending[j]] = Some(reply.text),
            Err(e) => {
                failed += 1;
                first_err.get_or_insert((jobs[j].0.id.clone(), e));
            }
        }
    }
    if let Some((id, source)) = first_err {
        return Err(RunError::Backend { failed, id, source });
    }

    let scores: Vec<ScoreRecord> = all
        .iter()
        .zip(&texts)
        .map(|((inst, _), text)| {
            let (_, s) = inst.score(text.as_deref().unwrap_or_default());
            score_record(inst, s)
        })
        .collect();
    let file = ScoresFile {
        tolerance: config.policy,
        template_version: templates.version,
        scores,
    };
    io::write_json(&run_dir.join(SCORES), &file)?;
    let reports = write_reports(run_dir, &file, &config.model_label, &config.conditions, &config.tasks)?;
    std::fs::remove_file(run_dir.join(INCOMPLETE)).map_err(|e| IoError::fs(&run_dir.join(INCOMPLETE), e))?;
    Ok(RunSummary {
        instances: all.len(),
        sent: pending.len(),
        reports,
    })
}

fn score_record(inst: &TaskInstance, s: InstanceScore) -> ScoreRecord {
    ScoreRecord {
        instance_id: s.instance_id,
        kind: inst.kind,
        condition: inst.condition,
        category: inst.category,
        entry_id: inst.entry_id.clone(),
        accuracy: s.accuracy,
        flags: s.flags,
        parse_failed: s.parse_failed,
    }
}

fn write_instance(run_dir: &Path, inst: &TaskInstance) -> Result<Vec<Vec<u8>>, RunError> {
    let rendered = inst.render_images().map_err(|e| RunError::Task {
        entry: inst.entry_id.clone(),
        source: e.into(),
    })?;
    let mut paths = Vec::new();
    let mut pngs = Vec::new();
    for (k, img) in rendered.iter().enumerate() {
        let rel = format!("instances/{}/image_{k}.png", inst.id);
        let png = io::encode_png(img);
        io::write_atomic(&run_dir.join(&rel), &png)?;
        paths.push(rel);
        pngs.push(png);
    }
    let rec = InstanceRecord {
        id: inst.id.clone(),
        kind: inst.kind,
        condition: inst.condition,
        entry_id: inst.entry_id.clone(),
        category: inst.category,
        views: inst.views.clone(),
        images: paths,
        prompt: inst.prompt.clone(),
        ground_truth: inst.ground_truth.clone(),
        tolerance: inst.tolerance,
        diag: inst.diag,
        template_version: inst.template_version,
    };
    io::write_json(&run_dir.join("instances").join(format!("{}.json", inst.id)), &rec)?;
    Ok(pngs)
}

fn persist_reply(run_dir: &Path, id: &str, reply: &ModelReply) -> Result<(), IoError> {
    if let Some(raw) = &reply.raw_exchange {
        io::write_json(&run_dir.join("exchanges").join(format!("{id}.json")), raw)?;
    }
    let slim = ModelReply {
        raw_exchange: None,
        ..reply.clone()
    };
    io::write_json(&reply_path(run_dir, id), &slim)
}

/// Aggregates scores into one report per task and condition.
pub fn build_reports(
    file: &ScoresFile,
    model_label: &str,
    conditions: &[Condition],
    tasks: &[TaskKind],
) -> Result<BTreeMap<TaskKind, Vec<EvalReport>>, RunError> {
    let mut out = BTreeMap::new();
    for &kind in tasks {
        let mut rows = Vec::new();
        for &cond in conditions {
            let sel: Vec<&ScoreRecord> = file.scores.iter().filter(|s| s.kind == kind && s.condition == cond).collect();
            if sel.is_empty() {
                continue;
            }
            let scores: Vec<InstanceScore> = sel
                .iter()
                .map(|s| InstanceScore {
                    instance_id: s.instance_id.clone(),
                    flags: s.flags.clone(),
                    accuracy: s.accuracy,
                    parse_failed: s.parse_failed,
                })
                .collect();
            let cats: BTreeMap<String, Category> = sel.iter().map(|s| (s.instance_id.clone(), s.category)).collect();
            rows.push(aggregate(&scores, &cats, &cond.row_label(model_label)).map_err(|_| RunError::NoScores)?);
        }
        if !rows.is_empty() {
            out.insert(kind, rows);
        }
    }
    Ok(out)
}

pub fn render_reports(reports: &BTreeMap<TaskKind, Vec<EvalReport>>, tasks: &[TaskKind], policy: &TolerancePolicy) -> (String, String) {
    let mut md = String::from("# Results\n");
    let mut csv = String::new();
    for kind in tasks {
        let Some(rows) = reports.get(kind) else { continue };
        md.push_str(&format!("\n## {kind}\n\n"));
        md.push_str(&emit_markdown(rows, Some(policy)));
        if !csv.is_empty() {
            csv.push('\n');
        }
        csv.push_str(&format!("# task: {kind}\n"));
        csv.push_str(&emit_csv(rows, Some(policy)));
    }
    (md, csv)
}

fn write_reports(
    run_dir: &Path,
    file: &ScoresFile,
    model_label: &str,
    conditions: &[Condition],
    tasks: &[TaskKind],
) -> Result<BTreeMap<TaskKind, Vec<EvalReport>>, RunError> {
    let reports = build_reports(file, model_label, conditions, tasks)?;
    let (md, csv) = render_reports(&reports, tasks, &file.tolerance);
    io::write_atomic(&run_dir.join("report.md"), md.as_bytes())?;
    io::write_atomic(&run_dir.join("report.csv"), csv.as_bytes())?;
    Ok(reports)
}

/// Regenerates `report.md` and `report.csv` from a finished run's scores,
/// optionally with a different row label.
pub fn report(run_dir: &Path, model_label: Option<&str>) -> Result<BTreeMap<TaskKind, Vec<EvalReport>>, RunError> {
    let meta: RunMeta = io::read_json(&run_dir.join(RUN_META))?;
    let path = run_dir.join(SCORES);
    if !path.is_file() {
        return Err(RunError::NoScores);
    }
    let file: ScoresFile = io::read_json(&path)?;
    let label = model_label.unwrap_or(&meta.config.model_label);
    write_reports(run_dir, &file, label, &meta.config.conditions, &meta.config.tasks)
}

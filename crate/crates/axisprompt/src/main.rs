use std::path::PathBuf;
use std::process::ExitCode;

use axisprompt::annotate::{annotate, AnnotationSpec};
use axisprompt::backend::{BackendSpec, RemoteConfig};
use axisprompt::dataset::{generate_dataset, DatasetError, GenConfig};
use axisprompt::io;
use axisprompt::run::{self, RunConfig, RunError};
use axisprompt::service;
use axisprompt_core::eval::TolerancePolicy;
use axisprompt_core::scene::{DEFAULT_HEIGHT, DEFAULT_WIDTH};
use axisprompt_core::tasks::{Condition, TaskKind};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_BACKEND: u8 = 4;
const EXIT_BIND: u8 = 5;

#[derive(Parser)]
#[command(name = "axisprompt", version, about = "Coordinate-frame visual prompts for vision-language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-view furniture dataset.
    GenDataset {
        #[arg(long, default_value_t = 5)]
        per_category: usize,
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: u32,
        #[arg(long, default_value_t = DEFAULT_HEIGHT)]
        height: u32,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Draw a frame (and optional keypoints) described by a JSON spec onto an image.
    Annotate {
        #[arg(long)]
        image: PathBuf,
        /// JSON with camera, frame, style and optional keypoints; a saved annotation record also works.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build task instances, query a backend, score and report.
    Run(RunArgs),
    /// Re-render report.md and report.csv from a run's scores.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        model_label: Option<String>,
    },
    /// Serve the annotation API and UI.
    Serve {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with the built UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    Scripted,
    Remote,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, value_enum)]
    backend: BackendArg,
    /// Comma-separated: reconstruction, matching, detection.
    #[arg(long, value_delimiter = ',', default_value = "reconstruction,matching,detection", value_parser = parse_task)]
    tasks: Vec<TaskKind>,
    /// Comma-separated: baseline, 3dap, 3dap-scale.
    #[arg(long, value_delimiter = ',', default_value = "baseline,3dap,3dap-scale", value_parser = parse_condition)]
    conditions: Vec<Condition>,
    #[arg(long, default_value = "model")]
    model_label: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.10)]
    point_tol: f64,
    #[arg(long, default_value_t = 10.0)]
    pixel_tol: f64,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Leave part dimensions out of detection prompts.
    #[arg(long)]
    no_reference_dims: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    // oracle
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    oracle_seed: u64,
    // scripted
    #[arg(long)]
    fixtures: Option<PathBuf>,
    // remote
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long, default_value = "AXISPROMPT_API_TOKEN")]
    token_env: String,
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    #[arg(long, default_value_t = 4)]
    max_retries: u32,
    #[arg(long, default_value_t = 2)]
    concurrency: usize,
    /// Requests per second.
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    TaskKind::parse(s).ok_or_else(|| format!("unknown task {s:?}"))
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    Condition::parse(s).ok_or_else(|| format!("unknown condition {s:?}"))
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run_config(a: &RunArgs) -> Result<RunConfig, String> {
    let backend = match a.backend {
        BackendArg::Oracle => BackendSpec::Oracle {
            noise_sigma: a.noise_sigma,
            seed: a.oracle_seed,
        },
        BackendArg::Scripted => BackendSpec::Scripted {
            fixtures: a.fixtures.clone().ok_or("--fixtures is required for the scripted backend")?,
        },
        BackendArg::Remote => {
            let endpoint = a.endpoint.clone().ok_or("--endpoint is required for the remote backend")?;
            let model = a.model.clone().ok_or("--model is required for the remote backend")?;
            let mut c = RemoteConfig::new(endpoint, model, a.token_env.clone());
            c.timeout_secs = a.timeout;
            c.max_retries = a.max_retries;
            c.concurrency = a.concurrency;
            c.requests_per_sec = a.rate;
            BackendSpec::RemoteHttp(c)
        }
    };
    Ok(RunConfig {
        dataset: a.dataset.clone(),
        backend,
        model_label: a.model_label.clone(),
        tasks: a.tasks.clone(),
        conditions: a.conditions.clone(),
        policy: TolerancePolicy {
            point_rel_tol: a.point_tol,
            pixel_tol: a.pixel_tol,
            iou_threshold: a.iou_threshold,
        },
        seed: a.seed,
        reference_dims: !a.no_reference_dims,
        templates: a.templates.clone(),
    })
}

fn run_exit(e: &RunError) -> u8 {
    match e {
        RunError::Config(_) => EXIT_USAGE,
        RunError::Dataset(DatasetError::Config(_)) => EXIT_USAGE,
        RunError::Backend { .. } => EXIT_BACKEND,
        _ => EXIT_IO,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::GenDataset {
            per_category,
            views,
            out,
            seed,
            width,
            height,
            force,
        } => {
            let cfg = GenConfig {
                per_category,
                views,
                seed,
                width,
                height,
            };
            match generate_dataset(&cfg, &out, force) {
                Ok(m) => {
                    println!("wrote {} entries to {}", m.entries.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e @ DatasetError::Config(_)) => fail(EXIT_USAGE, e),
                Err(e) => fail(EXIT_IO, e),
            }
        }
        Command::Annotate { image, spec, out } => {
            let spec: AnnotationSpec = match io::read_json(&spec) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_IO, e),
            };
            let img = match io::read_png(&image) {
                Ok(i) => i,
                Err(e) => return fail(EXIT_IO, e),
            };
            let drawn = match annotate(img, &spec) {
                Ok(d) => d,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            match io::write_png(&out, &drawn) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_IO, e),
            }
        }
        Command::Run(args) => {
            let cfg = match run_config(&args) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            match run::run(&cfg, &args.run_dir, args.resume) {
                Ok(summary) => {
                    println!("{} instances, {} sent; reports in {}", summary.instances, summary.sent, args.run_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(run_exit(&e), e),
            }
        }
        Command::Report { run_dir, model_label } => match run::report(&run_dir, model_label.as_deref()) {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => fail(run_exit(&e), e),
        },
        Command::Serve { images, port, host, ui } => {
            if !images.is_dir() {
                return fail(EXIT_IO, format!("{} is not a directory", images.display()));
            }
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => return fail(EXIT_IO, e),
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind((host.as_str(), port)).await {
                    Ok(l) => l,
                    Err(e) => return fail(EXIT_BIND, format!("cannot bind {host}:{port}: {e}")),
                };
                eprintln!("serving {} on http://{host}:{port}", images.display());
                match service::serve(listener, images, ui, service::shutdown_signal()).await {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(EXIT_IO, e),
                }
            })
        }
    }
}

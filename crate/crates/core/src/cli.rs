//! Command-line front end for the pipeline stages.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::catalog::QuestionCatalog;
use crate::eval::{EvalOptions, UnansweredPolicy};
use crate::gateway::{
    AnswerBackend, Gateway, MockOracleBackend, RecordedBackend, RecordingBackend, RemoteBackend, RemoteConfig,
    DEFAULT_MAX_IN_FLIGHT,
};
use crate::pipeline::{
    cmd_eval, cmd_map, cmd_query, cmd_score, load_ground_truth, PipelineError, RunConfig, SequenceManifest,
};
use crate::risk::{Thresholds, WeightConfig};

#[derive(Debug, Parser)]
#[command(
    name = "riskmap",
    version,
    about = "Pedestrian risk event maps from keyframes and VQA answers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask the question cascade for every keyframe and write sessions.
    Query(QueryArgs),
    /// Turn sessions into per-image risk scores.
    Score(CommonArgs),
    /// Build the risk event map GeoJSON.
    Map(MapArgs),
    /// Evaluate sessions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Recorded,
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnansweredArg {
    Negative,
    Exclude,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory shared by all stages.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Question catalog JSON (defaults to the built-in catalog).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Per-category weight overrides, `{"stairs": 0.8, ...}`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Category boundaries as `safe_max,danger_min,high_risk_min`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub thresholds: Option<Vec<f64>>,
    /// Read sessions from here instead of `<out>/sessions`.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    /// Recompute outputs that already exist.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Sequence manifest; repeat for several sequences.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "recorded")]
    pub backend: BackendArg,
    /// Recorded answers to replay (`recorded`).
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Ground truth the mock oracle answers from (`mock`).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Model server base URL (`remote`).
    #[arg(long, env = "RISKMAP_BACKEND_URL")]
    pub backend_url: Option<String>,
    /// Save every remote reply here for later replay.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Remote timeout per call, in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_IN_FLIGHT)]
    pub max_in_flight: usize,
    /// Record remote failures as unanswered instead of aborting.
    #[arg(long)]
    pub lenient: bool,
    /// Images processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// OSM XML extract of the street network.
    #[arg(long)]
    pub osm: PathBuf,
    /// Keyframe to segment match radius in metres.
    #[arg(long, default_value_t = crate::geo::DEFAULT_MATCH_RADIUS_M)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ground-truth annotations.
    #[arg(long)]
    pub gt: PathBuf,
    /// How a predicted unanswered is counted.
    #[arg(long, value_enum, default_value = "negative")]
    pub unanswered: UnansweredArg,
}

fn config_error(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_config(common: &CommonArgs) -> Result<RunConfig, PipelineError> {
    let mut config = RunConfig::new(&common.out);
    if let Some(path) = &common.catalog {
        config.catalog = QuestionCatalog::from_json(&read(path)?)?;
    }
    if let Some(path) = &common.weights {
        config.weights = WeightConfig::from_override_json(&read(path)?)?;
    }
    if let Some(t) = &common.thresholds {
        config.thresholds = Thresholds::new(t[0], t[1], t[2])?;
    }
    config.sessions_dir = common.sessions.clone();
    config.force = common.force;
    Ok(config)
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<SequenceManifest>, PipelineError> {
    paths.iter().map(|p| SequenceManifest::load(p)).collect()
}

fn remote_backend(args: &QueryArgs) -> Result<RemoteBackend, PipelineError> {
    let url = args
        .backend_url
        .clone()
        .ok_or_else(|| config_error("--backend remote needs --backend-url or RISKMAP_BACKEND_URL"))?;
    if args.timeout.is_nan() || args.timeout <= 0.0 {
        return Err(config_error("--timeout must be positive"));
    }
    let mut remote = RemoteConfig::new(url);
    remote.timeout = Duration::from_secs_f64(args.timeout);
    remote.retries = args.retries;
    remote.max_in_flight = args.max_in_flight;
    RemoteBackend::new(remote).map_err(|e| config_error(e.to_string()))
}

fn query(args: &QueryArgs) -> Result<String, PipelineError> {
    let mut config = run_config(&args.common)?;
    config.jobs = args.jobs;
    let manifests = load_manifests(&args.manifest)?;

    let mut recorder = None;
    let backend: Arc<dyn AnswerBackend> = match args.backend {
        BackendArg::Recorded => {
            let path = args
                .answers
                .as_ref()
                .ok_or_else(|| config_error("--backend recorded needs --answers"))?;
            Arc::new(RecordedBackend::from_file(path).map_err(|e| config_error(e.to_string()))?)
        }
        BackendArg::Mock => {
            let path = args
                .gt
                .as_ref()
                .ok_or_else(|| config_error("--backend mock needs --gt"))?;
            let gt = load_ground_truth(path)?;
            Arc::new(MockOracleBackend::new(gt.sessions()))
        }
        BackendArg::Remote => {
            let remote = remote_backend(args)?;
            match &args.record {
                Some(path) => {
                    let r = Arc::new(RecordingBackend::new(remote, path).map_err(|e| config_error(e.to_string()))?);
                    recorder = Some(r.clone());
                    r
                }
                None => Arc::new(remote),
            }
        }
    };
    let gateway = Gateway::new(backend)
        .lenient(args.lenient)
        .max_in_flight(args.max_in_flight);

    let result = cmd_query(&manifests, &gateway, &config);
    if let Some(r) = recorder {
        r.flush().map_err(|e| config_error(e.to_string()))?;
    }
    let summary = result?;
    Ok(format!(
        "queried {} image(s), skipped {} with existing sessions",
        summary.completed.len(),
        summary.skipped.len()
    ))
}

/// Runs one parsed command and returns its one-line summary.
pub fn run(cli: &Cli) -> Result<String, PipelineError> {
    match &cli.command {
        Command::Query(args) => query(args),
        Command::Score(common) => {
            let risks = cmd_score(&run_config(common)?)?;
            Ok(format!("scored {} image(s)", risks.len()))
        }
        Command::Map(args) => {
            let mut config = run_config(&args.common)?;
            config.match_radius = args.radius;
            let manifests = load_manifests(&args.manifest)?;
            let (_, summary) = cmd_map(&manifests, &args.osm, &config)?;
            let mut line = format!(
                "mapped {} segment(s), {} of {} keyframes observed",
                summary.segments, summary.observed_keyframes, summary.keyframes
            );
            if !summary.unmatched_keyframes.is_empty() {
                line += &format!("; {} keyframe(s) unmatched", summary.unmatched_keyframes.len());
            }
            Ok(line)
        }
        Command::Eval(args) => {
            let mut config = run_config(&args.common)?;
            config.eval = EvalOptions {
                unanswered: match args.unanswered {
                    UnansweredArg::Negative => UnansweredPolicy::Negative,
                    UnansweredArg::Exclude => UnansweredPolicy::Exclude,
                },
            };
            let gt = load_ground_truth(&args.gt)?;
            let report = cmd_eval(&gt, &config)?;
            let f1 = report
                .overall
                .metrics
                .f1
                .map_or("n/a".to_string(), |f| format!("{f:.4}"));
            Ok(format!("evaluated {} image(s), overall F1 {f1}", report.n_images))
        }
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

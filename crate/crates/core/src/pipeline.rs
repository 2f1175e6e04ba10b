//! The four pipeline stages and the files they exchange.
//!
//! All stages share a run directory:
//!
//! ```text
//! <out>/sessions/<image_id>.json   query  → score, map, eval
//! <out>/query_log.json             query (latencies; not deterministic)
//! <out>/partial.json               query, only when a run aborted
//! <out>/embeddings.jsonl           query, when the backend returns embeddings
//! <out>/risks.json                 score  → map
//! <out>/event_map.geojson          map
//! <out>/events.json                map
//! <out>/map_summary.json           map
//! <out>/report.json, report.txt    eval
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, QuerySession, QuestionCatalog, SessionError};
use crate::eval::{build_report, render_tables, EvalError, EvalOptions, EvalReport, GroundTruthSet};
use crate::gateway::{BackendKind, Gateway, GatewayError, ImageRef, PromptEnvelope};
use crate::geo::{
    build_event_map_from_risks, parse_osm, render_geojson, EmbeddingEntry, EmbeddingStore, GeoError, GpsPoint,
    Keyframe, Label, MapConfig, RiskEventMap,
};
use crate::io::write_atomic;
use crate::risk::{image_risk, CategoryAnswers, RiskCategory, RiskError, RiskScore, Thresholds, WeightConfig};

pub const SESSIONS_DIR: &str = "sessions";
pub const QUERY_LOG_FILE: &str = "query_log.json";
pub const PARTIAL_FILE: &str = "partial.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const RISKS_FILE: &str = "risks.json";
pub const MAP_FILE: &str = "event_map.geojson";
pub const EVENTS_FILE: &str = "events.json";
pub const MAP_SUMMARY_FILE: &str = "map_summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("{path}: {source}")]
    Session { path: PathBuf, source: SessionError },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("backend failure on `{image_id}`: {source}")]
    Backend { image_id: String, source: GatewayError },
    #[error("run aborted: {failures} image(s) failed, partial output kept (see {marker})")]
    Partial { marker: PathBuf, failures: usize },
}

impl PipelineError {
    /// 1 input/config error, 2 backend failure, 3 partial output preserved.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Backend { .. } => 2,
            PipelineError::Partial { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("pipeline output serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub image_id: String,
    /// Local image file, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Reference resolvable by the backend (e.g. an upstream image key).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<String>,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: f64,
}

/// One captured sequence of keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub city: String,
    pub continent: String,
    pub images: Vec<ManifestImage>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn check_image_id(id: &str) -> Result<(), PipelineError> {
    let bad = id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) || id.contains('\0');
    if bad {
        return Err(PipelineError::Config(format!(
            "image id `{id}` cannot be used as a file name"
        )));
    }
    Ok(())
}

impl SequenceManifest {
    pub fn from_json(source: &str) -> Result<Self, PipelineError> {
        let manifest: Self =
            serde_json::from_str(source).map_err(|e| PipelineError::Config(format!("invalid manifest: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut manifest = Self::from_json(&read_text(path)?)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf);
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = HashSet::new();
        let mut last = f64::NEG_INFINITY;
        for image in &self.images {
            check_image_id(&image.image_id)?;
            if !seen.insert(image.image_id.as_str()) {
                return Err(PipelineError::Config(format!(
                    "sequence `{}` lists image `{}` twice",
                    self.sequence_id, image.image_id
                )));
            }
            if image.timestamp < last {
                return Err(PipelineError::Config(format!(
                    "sequence `{}`: timestamps decrease at `{}`",
                    self.sequence_id, image.image_id
                )));
            }
            last = image.timestamp;
            GpsPoint::new(image.lat, image.lon)?;
        }
        Ok(())
    }

    pub fn keyframes(&self) -> Vec<Keyframe> {
        self.images
            .iter()
            .map(|i| Keyframe {
                image_id: i.image_id.clone(),
                position: GpsPoint { lat: i.lat, lon: i.lon },
                timestamp: i.timestamp,
                sequence_id: self.sequence_id.clone(),
            })
            .collect()
    }

    fn image_path(&self, image: &ManifestImage) -> Option<PathBuf> {
        image.path.as_ref().map(|p| match &self.base_dir {
            Some(dir) => dir.join(p),
            None => PathBuf::from(p),
        })
    }
}

fn all_keyframes(manifests: &[SequenceManifest]) -> Result<Vec<Keyframe>, PipelineError> {
    let keyframes: Vec<Keyframe> = manifests.iter().flat_map(SequenceManifest::keyframes).collect();
    let mut seen = HashSet::new();
    for k in &keyframes {
        if !seen.insert(k.image_id.as_str()) {
            return Err(PipelineError::Config(format!(
                "image `{}` appears in two manifests",
                k.image_id
            )));
        }
    }
    Ok(keyframes)
}

/// Settings shared by every stage.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub catalog: QuestionCatalog,
    pub weights: WeightConfig,
    pub thresholds: Thresholds,
    pub match_radius: f64,
    pub out_dir: PathBuf,
    /// Overrides `<out>/sessions` as the session source for later stages.
    pub sessions_dir: Option<PathBuf>,
    pub jobs: usize,
    pub force: bool,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            catalog: QuestionCatalog::default_catalog(),
            weights: WeightConfig::default(),
            thresholds: Thresholds::default(),
            match_radius: crate::geo::DEFAULT_MATCH_RADIUS_M,
            out_dir: out_dir.into(),
            sessions_dir: None,
            jobs: 1,
            force: false,
            eval: EvalOptions::default(),
        }
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.sessions_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join(SESSIONS_DIR))
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn map_config(&self) -> MapConfig {
        MapConfig {
            weights: self.weights.clone(),
            thresholds: self.thresholds,
            max_radius: self.match_radius,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.match_radius.is_nan() || self.match_radius <= 0.0 {
            return Err(PipelineError::Config(format!(
                "radius must be positive, got {}",
                self.match_radius
            )));
        }
        if self.jobs == 0 {
            return Err(PipelineError::Config("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn session_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.json"))
}

/// Reads every `*.json` session in `dir`, sorted by image id.
pub fn load_sessions(dir: &Path, catalog: &QuestionCatalog) -> Result<BTreeMap<String, QuerySession>, PipelineError> {
    let mut sessions = BTreeMap::new();
    if !dir.exists() {
        return Ok(sessions);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let session = QuerySession::from_json(&read_text(&path)?)
            .and_then(|s| s.validate(catalog).map(|_| s))
            .map_err(|source| PipelineError::Session {
                path: path.clone(),
                source,
            })?;
        sessions.insert(session.image_id.clone(), session);
    }
    Ok(sessions)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub image_id: String,
    pub status: String,
    pub questions: usize,
    pub latency_ms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedQuestion {
    pub image_id: String,
    pub question_id: String,
    pub error: String,
    /// Answers gathered before the failure.
    pub partial_session: QuerySession,
}

/// Marker left behind when a query run aborts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialMarker {
    pub completed: Vec<String>,
    pub failed: Vec<FailedQuestion>,
    pub not_started: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuerySummary {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
}

struct Job<'a> {
    manifest: &'a SequenceManifest,
    image: &'a ManifestImage,
}

enum JobOutcome {
    Done {
        session: QuerySession,
        latencies: Vec<f64>,
        embedding: Option<EmbeddingEntry>,
    },
    Failed(FailedQuestion, GatewayError),
}

fn envelope_image(job: &Job<'_>, kind: BackendKind) -> Result<ImageRef, GatewayError> {
    let id = job.image.image_id.clone();
    if kind != BackendKind::Remote {
        return Ok(ImageRef::Id(id));
    }
    match job.manifest.image_path(job.image) {
        Some(path) => fs::read(&path)
            .map(|bytes| ImageRef::Inline { image_id: id, bytes })
            .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display()))),
        None => Ok(ImageRef::Id(id)),
    }
}

/// Drives the cascade for one image until nothing is pending.
fn run_cascade(job: &Job<'_>, gateway: &Gateway, catalog: &QuestionCatalog) -> JobOutcome {
    let image_id = &job.image.image_id;
    let mut session = catalog.new_session(image_id.clone());
    let mut latencies = Vec::new();
    let mut embedding = None;
    let fail = |session: &QuerySession, qid: &str, e: GatewayError| {
        JobOutcome::Failed(
            FailedQuestion {
                image_id: image_id.clone(),
                question_id: qid.to_string(),
                error: e.to_string(),
                partial_session: session.clone(),
            },
            e,
        )
    };
    let image = match envelope_image(job, gateway.kind()) {
        Ok(image) => image,
        Err(e) => return fail(&session, "", e),
    };

    while let Some(qid) = catalog.next_questions(&session).first().map(|q| q.to_string()) {
        let question = catalog.get(&qid).expect("pending ids come from the catalog");
        let envelope = PromptEnvelope::new(image.clone(), question.text.clone());
        let answered = match gateway.ask(&envelope, &qid) {
            Ok(a) => a,
            Err(e) => return fail(&session, &qid, e),
        };
        if let Some(ms) = answered.raw.latency_ms {
            latencies.push(ms);
        }
        if embedding.is_none() {
            if let Some(vector) = answered.raw.embedding.clone() {
                embedding = Some(EmbeddingEntry::new(
                    image_id.clone(),
                    GpsPoint {
                        lat: job.image.lat,
                        lon: job.image.lon,
                    },
                    answered.raw.model_id.clone().unwrap_or_else(|| "unknown".into()),
                    vector,
                ));
            }
        }
        session = session
            .record_answer(catalog, &qid, answered.answer)
            .expect("pending question accepts an answer");
    }
    JobOutcome::Done {
        session,
        latencies,
        embedding,
    }
}

/// Asks every pending question for every image and writes one session per
/// image. Images with an existing session file are skipped unless
/// `config.force` is set.
pub fn cmd_query(
    manifests: &[SequenceManifest],
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<QuerySummary, PipelineError> {
    config.validate()?;
    all_keyframes(manifests)?;
    let catalog = &config.catalog;
    let sessions_dir = config.out_dir.join(SESSIONS_DIR);
    fs::create_dir_all(&sessions_dir).map_err(io_err(&sessions_dir))?;

    let mut summary = QuerySummary::default();
    let mut jobs = Vec::new();
    for manifest in manifests {
        for image in &manifest.images {
            if !config.force && session_path(&sessions_dir, &image.image_id).exists() {
                summary.skipped.push(image.image_id.clone());
            } else {
                jobs.push(Job { manifest, image });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<JobOutcome>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let write_error: Mutex<Option<PipelineError>> = Mutex::new(None);

    thread::scope(|scope| {
        for _ in 0..config.jobs.min(jobs.len()) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let outcome = run_cascade(job, gateway, catalog);
                match &outcome {
                    JobOutcome::Done { session, .. } => {
                        let path = session_path(&sessions_dir, &session.image_id);
                        if let Err(e) = write_text(&path, &(session.to_json() + "\n")) {
                            write_error.lock().unwrap().get_or_insert(e);
                            abort.store(true, Ordering::SeqCst);
                        }
                    }
                    JobOutcome::Failed(..) => abort.store(true, Ordering::SeqCst),
                }
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }

    let mut log = Vec::new();
    let mut failures = Vec::new();
    let mut not_started = Vec::new();
    let mut embeddings = Vec::new();
    for id in &summary.skipped {
        log.push(QueryLogEntry {
            image_id: id.clone(),
            status: "skipped".into(),
            questions: 0,
            latency_ms: vec![],
        });
    }
    for (job, slot) in jobs.iter().zip(slots) {
        match slot.into_inner().unwrap() {
            Some(JobOutcome::Done {
                session,
                latencies,
                embedding,
            }) => {
                log.push(QueryLogEntry {
                    image_id: session.image_id.clone(),
                    status: "completed".into(),
                    questions: session.answers.len(),
                    latency_ms: latencies,
                });
                embeddings.extend(embedding);
                summary.completed.push(session.image_id);
            }
            Some(JobOutcome::Failed(failed, error)) => {
                log.push(QueryLogEntry {
                    image_id: failed.image_id.clone(),
                    status: "failed".into(),
                    questions: failed.partial_session.answers.len(),
                    latency_ms: vec![],
                });
                failures.push((failed, error));
            }
            None => not_started.push(job.image.image_id.clone()),
        }
    }
    log.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    write_text(&config.output(QUERY_LOG_FILE), &to_json_pretty(&log))?;

    if !embeddings.is_empty() {
        let path = config.output(EMBEDDINGS_FILE);
        let store = if path.exists() {
            EmbeddingStore::load(&path)?
        } else {
            EmbeddingStore::new()
        };
        for entry in embeddings {
            store.put(entry)?;
        }
        store.save(&path)?;
    }

    let marker_path = config.output(PARTIAL_FILE);
    if failures.is_empty() {
        if marker_path.exists() {
            fs::remove_file(&marker_path).map_err(io_err(&marker_path))?;
        }
        return Ok(summary);
    }

    failures.sort_by(|a, b| a.0.image_id.cmp(&b.0.image_id));
    let marker = PartialMarker {
        completed: summary.completed.clone(),
        failed: failures.iter().map(|(f, _)| f.clone()).collect(),
        not_started,
    };
    write_text(&marker_path, &to_json_pretty(&marker))?;

    let any_output = !summary.completed.is_empty() || !summary.skipped.is_empty();
    if any_output {
        Err(PipelineError::Partial {
            marker: marker_path,
            failures: failures.len(),
        })
    } else {
        let (failed, source) = failures.swap_remove(0);
        Err(PipelineError::Backend {
            image_id: failed.image_id,
            source,
        })
    }
}

pub fn load_risks(path: &Path) -> Result<BTreeMap<String, RiskScore>, PipelineError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| PipelineError::Config(format!("{}: invalid risk file: {e}", path.display())))
}

/// Scores every session and writes `{image_id: risk}`.
pub fn cmd_score(config: &RunConfig) -> Result<BTreeMap<String, RiskScore>, PipelineError> {
    config.validate()?;
    let sessions = load_sessions(&config.sessions_dir(), &config.catalog)?;
    let path = config.output(RISKS_FILE);
    let previous = if path.exists() && !config.force {
        load_risks(&path)?
    } else {
        BTreeMap::new()
    };
    let risks: BTreeMap<String, RiskScore> = sessions
        .iter()
        .map(|(id, s)| {
            let risk = previous
                .get(id)
                .copied()
                .unwrap_or_else(|| image_risk(&CategoryAnswers::from_session(s, &config.catalog), &config.weights));
            (id.clone(), risk)
        })
        .collect();
    write_text(&path, &to_json_pretty(&risks))?;
    Ok(risks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub segments: usize,
    pub by_category: BTreeMap<RiskCategory, usize>,
    pub keyframes: usize,
    pub observed_keyframes: usize,
    pub unmatched_keyframes: Vec<String>,
}

impl MapSummary {
    fn of(map: &RiskEventMap) -> Self {
        Self {
            segments: map.segments.len(),
            by_category: map.category_counts(),
            keyframes: map.markers.len(),
            observed_keyframes: map.events.len(),
            unmatched_keyframes: map.unmatched.clone(),
        }
    }
}

/// Builds the event map from the manifests, `risks.json`, and an OSM
/// extract. Session files, when present, supply the event labels.
pub fn cmd_map(
    manifests: &[SequenceManifest],
    osm_path: &Path,
    config: &RunConfig,
) -> Result<(RiskEventMap, MapSummary), PipelineError> {
    config.validate()?;
    let keyframes = all_keyframes(manifests)?;
    let risks = load_risks(&config.output(RISKS_FILE))?;
    let graph = parse_osm(&read_text(osm_path)?)?;
    let mut map = build_event_map_from_risks(&keyframes, &risks, &graph, &config.map_config())?;

    let sessions = load_sessions(&config.sessions_dir(), &config.catalog)?;
    for event in &mut map.events {
        let Some(session) = sessions.get(&event.image_id) else {
            continue;
        };
        let recomputed = image_risk(
            &CategoryAnswers::from_session(session, &config.catalog),
            &config.weights,
        );
        if recomputed != event.risk {
            return Err(PipelineError::Config(format!(
                "risk for `{}` is {} in {RISKS_FILE} but {} from its session; re-run score",
                event.image_id, event.risk, recomputed
            )));
        }
        event.labels = session
            .answered_labels(&config.catalog)
            .into_iter()
            .map(|(question_id, answer)| Label { question_id, answer })
            .collect();
    }

    let embeddings = config.output(EMBEDDINGS_FILE);
    if embeddings.exists() {
        map.attach_embeddings(&EmbeddingStore::load(&embeddings)?);
    }

    for id in &map.unmatched {
        log::warn!(
            "keyframe `{id}` is farther than {} m from every segment",
            config.match_radius
        );
    }

    let summary = MapSummary::of(&map);
    write_text(&config.output(MAP_FILE), &render_geojson(&map))?;
    write_text(&config.output(EVENTS_FILE), &to_json_pretty(&map.events))?;
    write_text(&config.output(MAP_SUMMARY_FILE), &to_json_pretty(&summary))?;
    Ok((map, summary))
}

/// Compares the run's sessions with ground truth and writes the report.
pub fn cmd_eval(gt: &GroundTruthSet, config: &RunConfig) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    if gt.catalog_version != config.catalog.version() {
        return Err(EvalError::CatalogMismatch {
            left: gt.catalog_version.clone(),
            right: config.catalog.version().to_string(),
        }
        .into());
    }
    let preds = load_sessions(&config.sessions_dir(), &config.catalog)?;
    let report = build_report(gt, &preds, &config.catalog, &config.weights, config.eval)?;
    write_text(&config.output(REPORT_FILE), &report.to_json())?;
    write_text(&config.output(REPORT_TEXT_FILE), &render_tables(&report))?;
    Ok(report)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthSet, PipelineError> {
    Ok(GroundTruthSet::from_json(&read_text(path)?)?)
}

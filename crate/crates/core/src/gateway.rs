//! Answer backends behind one interface.
//!
//! Every backend receives the same [`PromptEnvelope`]: the fixed base
//! context, the question text, and an image reference. Raw replies are
//! reduced to a [`BinaryAnswer`] by [`normalize_answer`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BinaryAnswer, QuerySession};

/// Persona and output constraint prepended to every question.
pub const BASE_CONTEXT: &str =
    "You are an expert at detecting pedestrian obstacles for people with low vision. Answer only with Yes or No.";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageRef {
    /// Resolved by the backend from its own store.
    Id(String),
    /// Image bytes travel with the request.
    Inline { image_id: String, bytes: Vec<u8> },
}

impl ImageRef {
    pub fn image_id(&self) -> &str {
        match self {
            ImageRef::Id(id) => id,
            ImageRef::Inline { image_id, .. } => image_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEnvelope {
    pub base_context: &'static str,
    pub question_text: String,
    pub image: ImageRef,
}

impl PromptEnvelope {
    pub fn new(image: ImageRef, question_text: impl Into<String>) -> Self {
        Self {
            base_context: BASE_CONTEXT,
            question_text: question_text.into(),
            image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawAnswer {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

impl RawAnswer {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Default::default()
        }
    }
}

/// Maps free text to Yes/No: the first token wins if it is `yes` or `no`,
/// otherwise the first `yes`/`no` anywhere, otherwise Unanswered.
pub fn normalize_answer(raw: &RawAnswer) -> BinaryAnswer {
    let lowered = raw.text.to_lowercase();
    let verdict = |t: &str| match t {
        "yes" => Some(BinaryAnswer::Yes),
        "no" => Some(BinaryAnswer::No),
        _ => None,
    };
    lowered
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .find_map(verdict)
        .unwrap_or(BinaryAnswer::Unanswered)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Recorded,
    #[serde(rename = "mock")]
    MockOracle,
    Remote,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("no answer recorded for image `{image_id}`, question `{question_id}`")]
    AnswerNotFound { image_id: String, question_id: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend call timed out after {0:?}")]
    Timeout(Duration),
    #[error("could not persist recorded answers: {0}")]
    Io(String),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout(_) => true,
            GatewayError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }

    fn is_remote_failure(&self) -> bool {
        !matches!(self, GatewayError::AnswerNotFound { .. } | GatewayError::Io(_))
    }
}

/// Something that can answer one question about one image.
pub trait AnswerBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn answer(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError>;
}

impl<B: AnswerBackend + ?Sized> AnswerBackend for Arc<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn answer(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError> {
        (**self).answer(envelope, question_id)
    }
}

/// One stored reply in a recorded-answers file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedAnswer {
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

impl From<&RawAnswer> for RecordedAnswer {
    fn from(raw: &RawAnswer) -> Self {
        Self {
            answer_text: raw.text.clone(),
            confidence: raw.confidence,
            embedding: raw.embedding.clone(),
            model_id: raw.model_id.clone(),
        }
    }
}

impl From<&RecordedAnswer> for RawAnswer {
    fn from(rec: &RecordedAnswer) -> Self {
        Self {
            text: rec.answer_text.clone(),
            confidence: rec.confidence,
            embedding: rec.embedding.clone(),
            latency_ms: None,
            model_id: rec.model_id.clone(),
        }
    }
}

/// `{image_id: {question_id: answer}}`
pub type RecordedAnswers = BTreeMap<String, BTreeMap<String, RecordedAnswer>>;

pub fn load_recorded(path: &Path) -> Result<RecordedAnswers, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(format!("{}: {e}", path.display())))
}

/// Replays a recorded-answers file verbatim.
#[derive(Debug, Clone, Default)]
pub struct RecordedBackend {
    answers: RecordedAnswers,
}

impl RecordedBackend {
    pub fn new(answers: RecordedAnswers) -> Self {
        Self { answers }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        load_recorded(path).map(Self::new)
    }
}

impl AnswerBackend for RecordedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Recorded
    }

    fn answer(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError> {
        let image_id = envelope.image.image_id();
        self.answers
            .get(image_id)
            .and_then(|qs| qs.get(question_id))
            .map(RawAnswer::from)
            .ok_or_else(|| GatewayError::AnswerNotFound {
                image_id: image_id.to_string(),
                question_id: question_id.to_string(),
            })
    }
}

/// Answers with the ground-truth annotation for each (image, question).
#[derive(Debug, Clone, Default)]
pub struct MockOracleBackend {
    truth: BTreeMap<String, QuerySession>,
}

impl MockOracleBackend {
    pub fn new(sessions: impl IntoIterator<Item = QuerySession>) -> Self {
        Self {
            truth: sessions.into_iter().map(|s| (s.image_id.clone(), s)).collect(),
        }
    }
}

impl AnswerBackend for MockOracleBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::MockOracle
    }

    fn answer(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError> {
        let image_id = envelope.image.image_id();
        let session = self.truth.get(image_id).ok_or_else(|| GatewayError::AnswerNotFound {
            image_id: image_id.to_string(),
            question_id: question_id.to_string(),
        })?;
        let text = match session.answer(question_id) {
            Some(BinaryAnswer::Yes) => "Yes",
            Some(BinaryAnswer::No) => "No",
            _ => "unanswered",
        };
        Ok(RawAnswer::text(text))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(250),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Serialize)]
struct AnswerRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_id: Option<&'a str>,
    context: &'a str,
    question: &'a str,
    question_id: &'a str,
}

#[derive(Debug, Deserialize)]
struct AnswerResponse {
    answer_text: String,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    model_id: String,
}

#[derive(Debug, Deserialize)]
struct ErrorResponse {
    error: String,
}

/// Counting semaphore bounding concurrent remote calls.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// HTTP client for the `POST /v1/answer` protocol.
#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(Self {
            config,
            client,
            in_flight,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/answer", self.config.base_url.trim_end_matches('/'))
    }

    fn call_once(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError> {
        let (image, image_id) = match &envelope.image {
            ImageRef::Id(id) => (None, Some(id.as_str())),
            ImageRef::Inline { bytes, .. } => (Some(base64::engine::general_purpose::STANDARD.encode(bytes)), None),
        };
        let body = AnswerRequest {
            image,
            image_id,
            context: envelope.base_context,
            question: &envelope.question_text,
            question_id,
        };

        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let response = self
            .client
            .post(self.endpoint())
            .json(&body)
            .send()
            .map_err(|e| self.classify_transport(e))?;
        let status = response.status();
        let bytes = response.bytes().map_err(|e| self.classify_transport(e))?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;

        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorResponse>(&bytes)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(GatewayError::Status {
                status: status.as_u16(),
                message,
            });
        }

        let parsed: AnswerResponse =
            serde_json::from_slice(&bytes).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        if let Some(c) = parsed.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(GatewayError::Malformed(format!("confidence {c} outside [0, 1]")));
            }
        }
        Ok(RawAnswer {
            text: parsed.answer_text,
            confidence: parsed.confidence,
            embedding: parsed.embedding,
            latency_ms: Some(latency_ms),
            model_id: Some(parsed.model_id),
        })
    }

    fn classify_transport(&self, e: reqwest::Error) -> GatewayError {
        if e.is_timeout() {
            GatewayError::Timeout(self.config.timeout)
        } else {
            GatewayError::Transport(e.to_string())
        }
    }
}

impl AnswerBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn answer(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.call_once(envelope, question_id) {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    thread::sleep(self.config.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Wraps a backend and persists every successful reply, so a run can later
/// be replayed with [`RecordedBackend`]. One file holds one catalog version.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    recorded: Mutex<RecordedAnswers>,
}

impl<B: AnswerBackend> RecordingBackend<B> {
    /// Existing entries in `path` are kept and extended.
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let recorded = if path.exists() {
            load_recorded(&path)?
        } else {
            RecordedAnswers::new()
        };
        Ok(Self {
            inner,
            path,
            recorded: Mutex::new(recorded),
        })
    }

    pub fn snapshot(&self) -> RecordedAnswers {
        self.recorded.lock().unwrap().clone()
    }

    /// Writes the recorded answers, sorted by key, via temp-and-rename.
    pub fn flush(&self) -> Result<(), GatewayError> {
        let text = serde_json::to_string_pretty(&*self.recorded.lock().unwrap()).expect("recorded answers serialize");
        crate::io::write_atomic(&self.path, text.as_bytes()).map_err(|e| GatewayError::Io(e.to_string()))
    }
}

impl<B: AnswerBackend> AnswerBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn answer(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<RawAnswer, GatewayError> {
        let raw = self.inner.answer(envelope, question_id)?;
        self.recorded
            .lock()
            .unwrap()
            .entry(envelope.image.image_id().to_string())
            .or_default()
            .insert(question_id.to_string(), RecordedAnswer::from(&raw));
        Ok(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answered {
    pub raw: RawAnswer,
    pub answer: BinaryAnswer,
}

/// Front door for callers: normalization, lenient mode, and batching.
pub struct Gateway {
    backend: Box<dyn AnswerBackend>,
    lenient: bool,
    max_in_flight: usize,
}

impl Gateway {
    pub fn new(backend: impl AnswerBackend + 'static) -> Self {
        Self::from_boxed(Box::new(backend))
    }

    pub fn from_boxed(backend: Box<dyn AnswerBackend>) -> Self {
        Self {
            backend,
            lenient: false,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// In lenient mode remote failures become Unanswered instead of errors.
    pub fn lenient(mut self, lenient: bool) -> Self {
        self.lenient = lenient;
        self
    }

    pub fn max_in_flight(mut self, limit: usize) -> Self {
        self.max_in_flight = limit.max(1);
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn backend(&self) -> &dyn AnswerBackend {
        self.backend.as_ref()
    }

    pub fn ask(&self, envelope: &PromptEnvelope, question_id: &str) -> Result<Answered, GatewayError> {
        match self.backend.answer(envelope, question_id) {
            Ok(raw) => {
                let answer = normalize_answer(&raw);
                Ok(Answered { raw, answer })
            }
            Err(e) if self.lenient && self.kind() == BackendKind::Remote && e.is_remote_failure() => {
                log::warn!(
                    "{question_id} on {}: {e}; recording as unanswered",
                    envelope.image.image_id()
                );
                Ok(Answered {
                    raw: RawAnswer::default(),
                    answer: BinaryAnswer::Unanswered,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Asks every `(envelope, question_id)` pair; results keep input order.
    pub fn batch_ask(&self, requests: &[(PromptEnvelope, String)]) -> Vec<Result<Answered, GatewayError>> {
        let workers = self.max_in_flight.min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|(env, qid)| self.ask(env, qid)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Answered, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((env, qid)) = requests.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.ask(env, qid));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot filled"))
            .collect()
    }
}

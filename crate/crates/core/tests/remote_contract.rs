//! The `POST /v1/answer` wire contract, exercised against a small
//! in-process HTTP server.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use riskmap::gateway::{
    AnswerBackend, Gateway, GatewayError, ImageRef, PromptEnvelope, RecordedBackend, RecordingBackend, RemoteBackend,
    RemoteConfig, BASE_CONTEXT,
};
use riskmap::pipeline::{cmd_query, load_sessions, RunConfig};
use riskmap::{BinaryAnswer, QuestionCatalog};

use common::{fixture, manifests};

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

impl Reply {
    fn ok(body: Value) -> Self {
        Self {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    fn status(status: u16, body: &str) -> Self {
        Self {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }
}

type Handler = dyn Fn(usize, &Value) -> Reply + Send + Sync;

struct Server {
    url: String,
    requests: Arc<Mutex<Vec<Value>>>,
    peak_concurrency: Arc<AtomicUsize>,
}

impl Server {
    fn start(handler: impl Fn(usize, &Value) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let peak = Arc::new(AtomicUsize::new(0));
        let active = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let requests = requests.clone();
            let peak = peak.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (requests, peak, active, handler) =
                        (requests.clone(), peak.clone(), active.clone(), handler.clone());
                    thread::spawn(move || {
                        let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        serve(stream, &requests, handler.as_ref());
                        active.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            });
        }
        Self {
            url,
            requests,
            peak_concurrency: peak,
        }
    }

    fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, requests: &Mutex<Vec<Value>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let mut content_length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).unwrap();
    assert!(
        request_line.starts_with("POST /v1/answer "),
        "unexpected request {request_line}"
    );
    let parsed: Value = serde_json::from_slice(&body).unwrap();
    let index = {
        let mut all = requests.lock().unwrap();
        all.push(parsed.clone());
        all.len() - 1
    };
    let reply = handler(index, &parsed);
    thread::sleep(reply.delay);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
}

fn backend(url: &str, retries: u32) -> RemoteBackend {
    let mut config = RemoteConfig::new(url);
    config.retries = retries;
    config.backoff = Duration::from_millis(5);
    config.timeout = Duration::from_secs(5);
    RemoteBackend::new(config).unwrap()
}

fn envelope(image: ImageRef) -> PromptEnvelope {
    PromptEnvelope::new(image, "Is there a street crossing within approximately 10 meters?")
}

/// Answers by question id, so replies are a pure function of the request.
fn oracle_reply(body: &Value) -> Reply {
    let qid = body["question_id"].as_str().unwrap();
    let image = body["image_id"].as_str().unwrap_or("inline");
    let yes = (qid.len() + image.len()).is_multiple_of(3);
    Reply::ok(json!({
        "answer_text": if yes { "Yes, there is." } else { "no" },
        "confidence": 0.9,
        "embedding": [qid.len() as f64, image.len() as f64],
        "model_id": "echo-model",
    }))
}

#[test]
fn echo_no_normalizes_and_request_carries_the_envelope() {
    let server = Server::start(|_, _| Reply::ok(json!({"answer_text": "no", "model_id": "echo"})));
    let gateway = Gateway::new(backend(&server.url, 0));
    let answered = gateway
        .ask(&envelope(ImageRef::Id("img-1".into())), "crossings")
        .unwrap();
    assert_eq!(answered.answer, BinaryAnswer::No);
    assert_eq!(answered.raw.model_id.as_deref(), Some("echo"));
    assert!(answered.raw.latency_ms.is_some());

    let sent = &server.requests()[0];
    assert_eq!(sent["context"], BASE_CONTEXT);
    assert_eq!(
        sent["question"],
        "Is there a street crossing within approximately 10 meters?"
    );
    assert_eq!(sent["question_id"], "crossings");
    assert_eq!(sent["image_id"], "img-1");
    assert!(sent.get("image").is_none());
}

#[test]
fn inline_images_travel_as_base64() {
    let server = Server::start(|_, _| Reply::ok(json!({"answer_text": "Yes", "model_id": "echo"})));
    let bytes = vec![0xff, 0xd8, 0x00, 0x42];
    let raw = backend(&server.url, 0)
        .answer(
            &envelope(ImageRef::Inline {
                image_id: "img".into(),
                bytes: bytes.clone(),
            }),
            "stairs",
        )
        .unwrap();
    assert_eq!(raw.text, "Yes");
    let sent = &server.requests()[0];
    let decoded = base64::engine::general_purpose::STANDARD
        .decode(sent["image"].as_str().unwrap())
        .unwrap();
    assert_eq!(decoded, bytes);
    assert!(sent.get("image_id").is_none());
}

#[test]
fn client_errors_surface_without_retry() {
    let server = Server::start(|_, _| Reply::status(404, r#"{"error": "unknown image"}"#));
    let err = backend(&server.url, 3)
        .answer(&envelope(ImageRef::Id("missing".into())), "stairs")
        .unwrap_err();
    assert_eq!(
        err,
        GatewayError::Status {
            status: 404,
            message: "unknown image".into()
        }
    );
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn server_errors_are_retried_within_budget() {
    let server = Server::start(|i, _| {
        if i < 2 {
            Reply::status(503, r#"{"error": "warming up"}"#)
        } else {
            Reply::ok(json!({"answer_text": "Yes", "model_id": "m"}))
        }
    });
    let raw = backend(&server.url, 2)
        .answer(&envelope(ImageRef::Id("a".into())), "stairs")
        .unwrap();
    assert_eq!(raw.text, "Yes");
    assert_eq!(server.requests().len(), 3);

    let always = Server::start(|_, _| Reply::status(500, "boom"));
    let err = backend(&always.url, 2)
        .answer(&envelope(ImageRef::Id("a".into())), "stairs")
        .unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 500, .. }), "{err:?}");
    assert_eq!(always.requests().len(), 3);
}

#[test]
fn malformed_replies_are_rejected() {
    for body in [
        "not json".to_string(),
        json!({"answer_text": "Yes"}).to_string(),
        json!({"answer_text": "Yes", "model_id": "m", "confidence": 1.5}).to_string(),
    ] {
        let server = Server::start(move |_, _| Reply::status(200, &body));
        let err = backend(&server.url, 2)
            .answer(&envelope(ImageRef::Id("a".into())), "stairs")
            .unwrap_err();
        assert!(matches!(err, GatewayError::Malformed(_)), "{err:?}");
        assert_eq!(server.requests().len(), 1, "malformed replies are not retried");
    }
}

#[test]
fn slow_server_times_out() {
    let server = Server::start(|_, _| Reply {
        delay: Duration::from_secs(2),
        ..Reply::ok(json!({"answer_text": "Yes", "model_id": "m"}))
    });
    let mut config = RemoteConfig::new(&server.url);
    config.timeout = Duration::from_millis(200);
    config.retries = 0;
    let err = RemoteBackend::new(config)
        .unwrap()
        .answer(&envelope(ImageRef::Id("a".into())), "stairs")
        .unwrap_err();
    assert!(matches!(err, GatewayError::Timeout(_)), "{err:?}");
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend(&format!("http://127.0.0.1:{port}"), 0)
        .answer(&envelope(ImageRef::Id("a".into())), "stairs")
        .unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)), "{err:?}");
}

#[test]
fn lenient_gateway_turns_failures_into_unanswered() {
    let server = Server::start(|_, _| Reply::status(500, "down"));
    let gateway = Gateway::new(backend(&server.url, 0)).lenient(true);
    let answered = gateway.ask(&envelope(ImageRef::Id("a".into())), "stairs").unwrap();
    assert_eq!(answered.answer, BinaryAnswer::Unanswered);
}

#[test]
fn in_flight_limit_bounds_concurrent_calls() {
    let server = Server::start(|_, body| Reply {
        delay: Duration::from_millis(30),
        ..oracle_reply(body)
    });
    let mut config = RemoteConfig::new(&server.url);
    config.max_in_flight = 2;
    let gateway = Gateway::new(RemoteBackend::new(config).unwrap());
    let out = tempfile::tempdir().unwrap();
    let mut run = RunConfig::new(out.path());
    run.jobs = 8;
    cmd_query(&manifests(), &gateway, &run).unwrap();
    assert!(server.peak_concurrency.load(Ordering::SeqCst) <= 2);
}

#[test]
fn pipeline_sends_manifest_images_inline() {
    let server = Server::start(|_, body| oracle_reply(body));
    let gateway = Gateway::new(backend(&server.url, 0));
    let out = tempfile::tempdir().unwrap();
    cmd_query(&manifests()[..1], &gateway, &RunConfig::new(out.path())).unwrap();
    let expected = std::fs::read(fixture("images/bcn-01-00.jpg")).unwrap();
    let first = &server.requests()[0];
    let decoded = base64::engine::general_purpose::STANDARD
        .decode(first["image"].as_str().unwrap())
        .unwrap();
    assert_eq!(decoded, expected);
}

#[test]
fn recorded_replay_reproduces_the_live_run() {
    let catalog = QuestionCatalog::default_catalog();
    let server = Server::start(|_, body| oracle_reply(body));
    let tmp = tempfile::tempdir().unwrap();
    let record = tmp.path().join("recorded.json");

    let live_out = tmp.path().join("live");
    let recorder = Arc::new(RecordingBackend::new(backend(&server.url, 0), &record).unwrap());
    cmd_query(
        &manifests(),
        &Gateway::new(recorder.clone()),
        &RunConfig::new(&live_out),
    )
    .unwrap();
    recorder.flush().unwrap();
    let live_requests = server.requests().len();

    let replay_out = tmp.path().join("replay");
    let replay = Gateway::new(RecordedBackend::from_file(&record).unwrap());
    cmd_query(&manifests(), &replay, &RunConfig::new(&replay_out)).unwrap();
    assert_eq!(
        server.requests().len(),
        live_requests,
        "replay must not call the server"
    );

    let live = load_sessions(&live_out.join("sessions"), &catalog).unwrap();
    let replayed = load_sessions(&replay_out.join("sessions"), &catalog).unwrap();
    assert_eq!(live.len(), 24);
    assert_eq!(live, replayed);
    assert_eq!(
        std::fs::read(live_out.join("embeddings.jsonl")).unwrap(),
        std::fs::read(replay_out.join("embeddings.jsonl")).unwrap()
    );
}

#[test]
fn cli_reads_backend_url_from_the_environment() {
    let server = Server::start(|_, body| oracle_reply(body));
    let tmp = tempfile::tempdir().unwrap();
    let record = tmp.path().join("rec.json");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_riskmap"))
        .args(["query", "--backend", "remote", "--manifest"])
        .arg(fixture("manifests/bcn-01.json"))
        .arg("--record")
        .arg(&record)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .env("RISKMAP_BACKEND_URL", &server.url)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recorded: Value = serde_json::from_slice(&std::fs::read(&record).unwrap()).unwrap();
    assert_eq!(recorded.as_object().unwrap().len(), 12);
    assert_eq!(recorded["bcn-01-00"]["stairs"]["model_id"], "echo-model");
}

#[test]
fn cli_remote_failure_exits_with_backend_code() {
    let server = Server::start(|_, _| Reply::status(500, "down"));
    let tmp = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_riskmap"))
        .args(["query", "--backend", "remote", "--retries", "0", "--manifest"])
        .arg(fixture("manifests/bcn-01.json"))
        .arg("--backend-url")
        .arg(&server.url)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("partial.json").exists());
}

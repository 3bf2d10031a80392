use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use dmba::gateway::{
    record_fixtures, Backend, CallError, Completion, FixtureStore, Gateway, GatewayError, OpenRouterBackend, Pause,
    RecordingBackend, ReplayBackend,
};
use dmba_core::prompting::{Stimulus, StimulusKind, Variant};
use dmba_core::request::{DecodingConfig, FinishReason, GenerationRequest, RetryPolicy};
use serde_json::Value;

fn request(model: &str, text: &str) -> GenerationRequest {
    GenerationRequest::new(
        model,
        Stimulus { pair_id: "p1".into(), variant: Variant::Stereo, kind: StimulusKind::Agreement, text: text.into() },
        DecodingConfig::new(0.7, 0.85),
    )
}

/// Minimal HTTP/1.1 server answering each connection with the next scripted
/// `(status, body)` and keeping the request bodies it saw.
struct MockServer {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> (Vec<String>, Vec<u8>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        headers.push(line);
    }
    let len = headers
        .iter()
        .find_map(|h| h.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (headers, body)
}

impl MockServer {
    fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/api/v1/chat/completions", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let (b, a) = (Arc::clone(&bodies), Arc::clone(&auth));
        thread::spawn(move || {
            for (status, body) in script {
                let (mut stream, _) = listener.accept().unwrap();
                let (headers, req) = read_request(&mut stream);
                if let Some(h) = headers.iter().find(|h| h.to_ascii_lowercase().starts_with("authorization:")) {
                    a.lock().unwrap().push(h["authorization:".len()..].trim().to_string());
                }
                b.lock().unwrap().push(serde_json::from_slice(&req).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        Self { url, bodies, auth }
    }
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]}).to_string()
}

fn rate_limited() -> (u16, String) {
    (429, r#"{"error":{"message":"rate limited"}}"#.to_string())
}

fn recording_pause() -> (Pause, Arc<Mutex<Vec<Duration>>>) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&log);
    (Arc::new(move |d| sink.lock().unwrap().push(d)), log)
}

fn live(server: &MockServer) -> OpenRouterBackend {
    OpenRouterBackend::new(&server.url, "test-key", Duration::from_secs(5))
}

#[test]
fn two_rate_limits_then_success() {
    let server = MockServer::start(vec![rate_limited(), rate_limited(), (200, ok_body("85"))]);
    let (pause, delays) = recording_pause();
    let gw = Gateway::new(live(&server), RetryPolicy::default()).with_pause(pause);
    let resp = gw.generate(&request("vendor/model", "Rate: something")).unwrap();
    assert_eq!(resp.text, "85");
    assert_eq!(resp.finish_reason, FinishReason::Stop);
    assert_eq!(resp.attempt_count, 3);

    let delays: Vec<f64> = delays.lock().unwrap().iter().map(|d| d.as_secs_f64() * 1000.0).collect();
    assert_eq!(delays.len(), 2);
    assert!((400.0..=600.0).contains(&delays[0]), "{delays:?}");
    assert!((800.0..=1200.0).contains(&delays[1]), "{delays:?}");

    let bodies = server.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let b = &bodies[0];
    assert_eq!(b["model"], "vendor/model");
    assert_eq!(b["messages"].as_array().unwrap().len(), 1);
    assert_eq!(b["messages"][0]["role"], "user");
    assert_eq!(b["messages"][0]["content"], "Rate: something");
    assert_eq!(b["temperature"], 0.7);
    assert_eq!(b["top_p"], 0.85);
    assert_eq!(b["max_tokens"], 200);
    assert_eq!(server.auth.lock().unwrap()[0], "Bearer test-key");
}

#[test]
fn exhausted_retries_report_last_status() {
    let server = MockServer::start(vec![rate_limited(), (503, "down".into()), (502, "bad gateway".into())]);
    let (pause, _) = recording_pause();
    let policy = RetryPolicy { max_attempts: 3, ..RetryPolicy::default() };
    let gw = Gateway::new(live(&server), policy).with_pause(pause);
    match gw.generate(&request("m", "x")).unwrap_err() {
        GatewayError::Delivery { attempts, last_status, message, .. } => {
            assert_eq!((attempts, last_status), (3, Some(502)));
            assert_eq!(message, "bad gateway");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn unauthorized_is_fatal_without_retry() {
    let server = MockServer::start(vec![(401, r#"{"error":{"message":"No auth credentials found"}}"#.into())]);
    let gw = Gateway::new(live(&server), RetryPolicy::default());
    let err = gw.generate(&request("m", "x")).unwrap_err();
    assert!(matches!(err, GatewayError::Credential { status: 401, .. }), "{err}");
    assert!(err.is_fatal());
    assert_eq!(server.bodies.lock().unwrap().len(), 1);
}

#[test]
fn unknown_model_is_routing_error() {
    let server = MockServer::start(vec![(400, r#"{"error":{"message":"nobody/nothing is not a valid model ID"}}"#.into())]);
    let gw = Gateway::new(live(&server), RetryPolicy::default());
    let err = gw.generate(&request("nobody/nothing", "x")).unwrap_err();
    assert!(matches!(&err, GatewayError::UnknownModel { model_id, .. } if model_id == "nobody/nothing"), "{err}");
}

#[test]
fn connection_refused_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = OpenRouterBackend::new(format!("http://127.0.0.1:{port}/v1"), "k", Duration::from_secs(2));
    assert!(matches!(backend.call(&request("m", "x")), Err(CallError::Transient { status: None, .. })));
}

#[test]
fn record_against_server_then_replay() {
    let reqs = [request("m", "one"), request("m", "two")];
    let server = MockServer::start(vec![(200, ok_body("12")), (200, ok_body("  34\n"))]);
    let store = record_fixtures(live(&server), &reqs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixtures.jsonl");
    store.save(&path).unwrap();
    let loaded = FixtureStore::load(&path).unwrap();
    assert_eq!(loaded.len(), 2);

    let gw = Gateway::new(ReplayBackend::new(loaded), RetryPolicy::default());
    let replayed: Vec<String> = reqs.iter().map(|r| gw.generate(r).unwrap().text).collect();
    assert_eq!(replayed, ["12", "  34\n"]);

    let missing = request("m", "three");
    match gw.generate(&missing).unwrap_err() {
        e @ GatewayError::MissingFixture { .. } => assert!(e.to_string().contains(missing.request_id.as_str())),
        other => panic!("unexpected {other}"),
    }
}

/// Sleeps briefly inside each call and tracks the peak number of concurrent
/// calls per model.
#[derive(Default)]
struct Instrumented {
    in_flight: Mutex<std::collections::BTreeMap<String, usize>>,
    peak: Mutex<std::collections::BTreeMap<String, usize>>,
    calls: AtomicUsize,
}

impl Backend for Instrumented {
    fn call(&self, r: &GenerationRequest) -> Result<Completion, CallError> {
        {
            let mut f = self.in_flight.lock().unwrap();
            let n = f.entry(r.model_id.clone()).or_default();
            *n += 1;
            let mut p = self.peak.lock().unwrap();
            let peak = p.entry(r.model_id.clone()).or_default();
            *peak = (*peak).max(*n);
        }
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(2 + (k % 5) as u64));
        *self.in_flight.lock().unwrap().get_mut(&r.model_id).unwrap() -= 1;
        Ok(Completion { text: format!("re:{}", r.stimulus.text), finish_reason: FinishReason::Stop })
    }
}

#[test]
fn ten_requests_limit_three() {
    let backend = Arc::new(Instrumented::default());
    let gw = Gateway::new(Arc::clone(&backend), RetryPolicy::default());
    let reqs: Vec<_> = (0..10).map(|i| request("m", &format!("q{i}"))).collect();
    let out = gw.bounded_dispatch(&reqs, 3).unwrap();
    assert_eq!(backend.peak.lock().unwrap()["m"], 3);
    let texts: Vec<String> = out.into_iter().map(|r| r.unwrap().text).collect();
    let expected: Vec<String> = (0..10).map(|i| format!("re:q{i}")).collect();
    assert_eq!(texts, expected);
}

#[test]
fn limits_apply_per_model() {
    let backend = Arc::new(Instrumented::default());
    let gw = Gateway::new(Arc::clone(&backend), RetryPolicy::default());
    let reqs: Vec<_> = (0..40).map(|i| request(["a", "b"][i % 2], &format!("q{i}"))).collect();
    let out = gw.bounded_dispatch(&reqs, 2).unwrap();
    let peak = backend.peak.lock().unwrap();
    assert!(peak["a"] <= 2 && peak["b"] <= 2);
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().request_id, reqs[i].request_id);
    }
}

#[test]
fn recording_backend_keeps_successes_only() {
    struct Flaky;
    impl Backend for Flaky {
        fn call(&self, r: &GenerationRequest) -> Result<Completion, CallError> {
            if r.stimulus.text == "bad" {
                Err(CallError::Rejected { status: 422, message: "no".into() })
            } else {
                Ok(Completion { text: "ok".into(), finish_reason: FinishReason::Length })
            }
        }
    }
    let rec = RecordingBackend::new(Flaky);
    assert!(rec.call(&request("m", "good")).is_ok());
    assert!(rec.call(&request("m", "bad")).is_err());
    let store = rec.into_store();
    assert_eq!(store.len(), 1);
    assert_eq!(store.entries().next().unwrap().finish_reason, FinishReason::Length);
}

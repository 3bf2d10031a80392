//! Fault-tolerant access to chat-completion backends.
//!
//! A [`Backend`] performs exactly one attempt. [`Gateway`] layers the retry
//! policy on top and fans requests out with a per-model concurrency bound.

mod live;
mod replay;
mod synthetic;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use dmba_core::request::{FinishReason, GenerationRequest, GenerationResponse, RequestId, RetryPolicy};

pub use live::{OpenRouterBackend, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};
pub use replay::{record_fixtures, FixtureEntry, FixtureStore, RecordingBackend, ReplayBackend};
pub use synthetic::SyntheticBackend;

/// Text returned by a single successful attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Outcome of one failed attempt, classified for the retry loop.
#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    /// 429, 5xx, timeouts and connection failures.
    Transient { status: Option<u16>, message: String },
    /// 401 / 403.
    Credential { status: u16, message: String },
    /// The provider does not know the model.
    UnknownModel { message: String },
    /// Any other 4xx.
    Rejected { status: u16, message: String },
    /// Replay store has no entry for the request.
    MissingFixture,
}

pub trait Backend: Send + Sync {
    fn call(&self, request: &GenerationRequest) -> Result<Completion, CallError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn call(&self, request: &GenerationRequest) -> Result<Completion, CallError> {
        (**self).call(request)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn call(&self, request: &GenerationRequest) -> Result<Completion, CallError> {
        (**self).call(request)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("request {request_id}: delivery failed after {attempts} attempt(s), last status {}: {message}", fmt_status(*.last_status))]
    Delivery { request_id: RequestId, attempts: u32, last_status: Option<u16>, message: String },
    #[error("request {request_id}: credentials rejected (HTTP {status}): {message}")]
    Credential { request_id: RequestId, status: u16, message: String },
    #[error("request {request_id}: unknown model `{model_id}`: {message}")]
    UnknownModel { request_id: RequestId, model_id: String, message: String },
    #[error("request {request_id}: rejected with HTTP {status}: {message}")]
    Rejected { request_id: RequestId, status: u16, message: String },
    #[error("request {request_id}: no recorded fixture")]
    MissingFixture { request_id: RequestId },
    #[error("request {request_id}: not sent, dispatch for model `{model_id}` was aborted by an earlier fatal error")]
    Aborted { request_id: RequestId, model_id: String },
    #[error("per-model concurrency limit must be at least 1")]
    ZeroLimit,
}

fn fmt_status(status: Option<u16>) -> String {
    status.map_or_else(|| "none".to_string(), |s| s.to_string())
}

impl GatewayError {
    /// Errors that stop all further dispatch for the same model.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GatewayError::Credential { .. } | GatewayError::UnknownModel { .. } | GatewayError::Rejected { .. })
    }
}

pub type Pause = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    backend: Box<dyn Backend>,
    policy: RetryPolicy,
    pause: Pause,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, policy: RetryPolicy) -> Self {
        Self { backend: Box::new(backend), policy, pause: Arc::new(thread::sleep) }
    }

    /// Replaces the sleep used between attempts.
    pub fn with_pause(mut self, pause: Pause) -> Self {
        self.pause = pause;
        self
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// Sends one request, retrying transient failures with jittered
    /// exponential backoff. Fatal classes are never retried.
    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let id = || request.request_id.clone();
        let started = Instant::now();
        let mut attempt = 1;
        loop {
            match self.backend.call(request) {
                Ok(c) => {
                    return Ok(GenerationResponse {
                        request_id: id(),
                        text: c.text,
                        finish_reason: c.finish_reason,
                        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
                        attempt_count: attempt,
                    })
                }
                Err(CallError::Transient { status, message }) => {
                    if attempt >= self.policy.max_attempts {
                        return Err(GatewayError::Delivery { request_id: id(), attempts: attempt, last_status: status, message });
                    }
                    attempt += 1;
                    let delay = self.policy.jittered_delay_ms(attempt, rand::random::<f64>());
                    log::warn!(
                        "request {} ({}) transient failure {}: {message}; retry {attempt} in {delay:.0} ms",
                        request.request_id,
                        request.model_id,
                        fmt_status(status)
                    );
                    (self.pause)(Duration::from_secs_f64(delay / 1000.0));
                }
                Err(CallError::Credential { status, message }) => {
                    return Err(GatewayError::Credential { request_id: id(), status, message })
                }
                Err(CallError::UnknownModel { message }) => {
                    return Err(GatewayError::UnknownModel { request_id: id(), model_id: request.model_id.clone(), message })
                }
                Err(CallError::Rejected { status, message }) => {
                    return Err(GatewayError::Rejected { request_id: id(), status, message })
                }
                Err(CallError::MissingFixture) => return Err(GatewayError::MissingFixture { request_id: id() }),
            }
        }
    }

    /// Runs all requests with at most `per_model_limit` in flight per model.
    /// Results line up with `requests` whatever order they complete in. A
    /// fatal error for a model marks its not-yet-started requests aborted.
    pub fn bounded_dispatch(
        &self,
        requests: &[GenerationRequest],
        per_model_limit: usize,
    ) -> Result<Vec<Result<GenerationResponse, GatewayError>>, GatewayError> {
        if per_model_limit == 0 {
            return Err(GatewayError::ZeroLimit);
        }
        let mut by_model: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in requests.iter().enumerate() {
            by_model.entry(&r.model_id).or_default().push(i);
        }
        let slots: Vec<Mutex<Option<Result<GenerationResponse, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();

        thread::scope(|scope| {
            for indices in by_model.values() {
                let next = Arc::new(AtomicUsize::new(0));
                let aborted = Arc::new(AtomicBool::new(false));
                for _ in 0..per_model_limit.min(indices.len()) {
                    let (next, aborted, slots) = (Arc::clone(&next), Arc::clone(&aborted), &slots);
                    scope.spawn(move || loop {
                        let k = next.fetch_add(1, Ordering::SeqCst);
                        let Some(&idx) = indices.get(k) else { break };
                        let request = &requests[idx];
                        let outcome = if aborted.load(Ordering::SeqCst) {
                            Err(GatewayError::Aborted {
                                request_id: request.request_id.clone(),
                                model_id: request.model_id.clone(),
                            })
                        } else {
                            let r = self.generate(request);
                            if let Err(e) = &r {
                                if e.is_fatal() {
                                    log::error!("{e}; aborting remaining requests for {}", request.model_id);
                                    aborted.store(true, Ordering::SeqCst);
                                }
                            }
                            r
                        };
                        *slots[idx].lock().expect("slot lock") = Some(outcome);
                    });
                }
            }
        });

        Ok(slots.into_iter().map(|s| s.into_inner().expect("slot lock").expect("every request dispatched")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmba_core::prompting::{Stimulus, StimulusKind, Variant};
    use dmba_core::request::DecodingConfig;

    pub(crate) fn request(model: &str, text: &str) -> GenerationRequest {
        GenerationRequest::new(
            model,
            Stimulus { pair_id: "p".into(), variant: Variant::Stereo, kind: StimulusKind::Agreement, text: text.into() },
            DecodingConfig::new(0.0, 1.0),
        )
    }

    /// Fails with the scripted errors first, then succeeds.
    struct Scripted {
        failures: Mutex<Vec<CallError>>,
        calls: AtomicUsize,
    }

    impl Backend for Scripted {
        fn call(&self, r: &GenerationRequest) -> Result<Completion, CallError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.failures.lock().unwrap().pop() {
                Some(e) => Err(e),
                None => Ok(Completion { text: format!("echo {}", r.stimulus.text), finish_reason: FinishReason::Stop }),
            }
        }
    }

    fn scripted(mut failures: Vec<CallError>) -> Scripted {
        failures.reverse();
        Scripted { failures: Mutex::new(failures), calls: AtomicUsize::new(0) }
    }

    fn transient(status: u16) -> CallError {
        CallError::Transient { status: Some(status), message: "busy".into() }
    }

    fn recorder() -> (Pause, Arc<Mutex<Vec<Duration>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&log);
        (Arc::new(move |d| sink.lock().unwrap().push(d)), log)
    }

    #[test]
    fn retries_then_succeeds_with_growing_delays() {
        let (pause, delays) = recorder();
        let policy = RetryPolicy { jitter_fraction: 0.0, ..RetryPolicy::default() };
        let gw = Gateway::new(scripted(vec![transient(429), transient(429)]), policy).with_pause(pause);
        let resp = gw.generate(&request("m", "hi")).unwrap();
        assert_eq!(resp.attempt_count, 3);
        assert_eq!(resp.text, "echo hi");
        assert_eq!(*delays.lock().unwrap(), [Duration::from_millis(500), Duration::from_millis(1000)]);
    }

    #[test]
    fn jitter_stays_in_band() {
        let (pause, delays) = recorder();
        let gw = Gateway::new(scripted(vec![transient(503); 4]), RetryPolicy::default()).with_pause(pause);
        gw.generate(&request("m", "hi")).unwrap();
        for (k, d) in delays.lock().unwrap().iter().enumerate() {
            let nominal = 500.0 * 2f64.powi(k as i32);
            let ms = d.as_secs_f64() * 1000.0;
            assert!(ms >= nominal * 0.8 - 1e-6 && ms <= nominal * 1.2 + 1e-6, "{ms} vs {nominal}");
        }
    }

    #[test]
    fn exhausted_attempts_carry_last_status() {
        let (pause, _) = recorder();
        let policy = RetryPolicy { max_attempts: 3, ..RetryPolicy::default() };
        let gw = Gateway::new(scripted(vec![transient(500), transient(502), transient(503), transient(504)]), policy)
            .with_pause(pause);
        match gw.generate(&request("m", "x")).unwrap_err() {
            GatewayError::Delivery { attempts, last_status, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_status, Some(503));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn credential_error_not_retried() {
        let backend = Arc::new(scripted(vec![CallError::Credential { status: 401, message: "no".into() }]));
        let gw = Gateway::new(Arc::clone(&backend), RetryPolicy::default());
        assert!(matches!(gw.generate(&request("m", "x")), Err(GatewayError::Credential { status: 401, .. })));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn zero_limit_rejected() {
        let gw = Gateway::new(scripted(vec![]), RetryPolicy::default());
        assert_eq!(gw.bounded_dispatch(&[request("m", "x")], 0), Err(GatewayError::ZeroLimit));
    }

    #[test]
    fn single_request_dispatch_matches_generate() {
        let gw = Gateway::new(scripted(vec![]), RetryPolicy::default());
        let out = gw.bounded_dispatch(&[request("m", "x")], 5).unwrap();
        assert_eq!(out.len(), 1);
        let r = out[0].as_ref().unwrap();
        assert_eq!((r.text.as_str(), r.attempt_count), ("echo x", 1));
    }

    #[test]
    fn fatal_error_aborts_model() {
        let backend = scripted(vec![CallError::UnknownModel { message: "no such model".into() }]);
        let gw = Gateway::new(backend, RetryPolicy::default());
        let reqs: Vec<_> = (0..5).map(|i| request("ghost", &format!("r{i}"))).collect();
        let out = gw.bounded_dispatch(&reqs, 1).unwrap();
        assert!(matches!(out[0], Err(GatewayError::UnknownModel { .. })));
        assert!(out[1..].iter().all(|r| matches!(r, Err(GatewayError::Aborted { .. }))));
    }
}

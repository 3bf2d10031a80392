use std::time::Duration;

use dmba_core::request::{FinishReason, GenerationRequest};
use serde_json::{json, Value};

use super::{Backend, CallError, Completion};

pub const API_KEY_ENV: &str = "DMBA_API_KEY";
pub const BASE_URL_ENV: &str = "DMBA_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://openrouter.ai/api/v1/chat/completions";

/// OpenAI-style chat-completions endpoint (OpenRouter by default).
pub struct OpenRouterBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl OpenRouterBackend {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent, url: url.into(), api_key: api_key.into() }
    }

    /// Reads the key and optional endpoint override from the environment.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())?;
        let url = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Some(Self::new(url, key, timeout))
    }
}

pub(crate) fn request_body(request: &GenerationRequest) -> Value {
    let mut body = json!({
        "model": request.model_id,
        "messages": [{"role": "user", "content": request.stimulus.text}],
        "temperature": request.config.temperature,
        "top_p": request.config.top_p,
        "max_tokens": request.config.max_tokens,
    });
    if !request.config.stop_sequences.is_empty() {
        body["stop"] = json!(request.config.stop_sequences);
    }
    body
}

pub(crate) fn classify_status(status: u16, body: &str) -> CallError {
    let message = error_message(body);
    match status {
        429 | 408 | 500..=599 => CallError::Transient { status: Some(status), message },
        401 | 403 => CallError::Credential { status, message },
        404 => CallError::UnknownModel { message },
        400 if mentions_invalid_model(&message) => CallError::UnknownModel { message },
        _ => CallError::Rejected { status, message },
    }
}

fn mentions_invalid_model(message: &str) -> bool {
    let m = message.to_ascii_lowercase();
    m.contains("model") && (m.contains("not a valid") || m.contains("not found") || m.contains("invalid") || m.contains("does not exist"))
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(300).collect())
}

pub(crate) fn parse_success(body: &str) -> Result<Completion, CallError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| CallError::Transient { status: Some(200), message: format!("malformed response body: {e}") })?;
    // Some providers report upstream failures inside a 200.
    if let Some(err) = v.get("error") {
        let code = err.get("code").and_then(Value::as_u64).and_then(|c| u16::try_from(c).ok()).unwrap_or(502);
        return Err(classify_status(code, &json!({ "error": err }).to_string()));
    }
    let choice = v.pointer("/choices/0").ok_or_else(|| CallError::Transient {
        status: Some(200),
        message: "response has no choices".to_string(),
    })?;
    let text = choice.pointer("/message/content").and_then(Value::as_str).unwrap_or_default().to_string();
    let finish_reason = FinishReason::from_wire(choice.get("finish_reason").and_then(Value::as_str));
    Ok(Completion { text, finish_reason })
}

impl Backend for OpenRouterBackend {
    fn call(&self, request: &GenerationRequest) -> Result<Completion, CallError> {
        let sent = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send_json(request_body(request));
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Err(CallError::Transient { status: None, message: e.to_string() }),
        };
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| CallError::Transient { status: Some(status), message: format!("reading body: {e}") })?;
        if status == 200 {
            parse_success(&body)
        } else {
            Err(classify_status(status, &body))
        }
    }
}

//! Transport-independent request/response values and retry arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::ContentHasher;
use crate::prompting::Stimulus;

pub const DEFAULT_MAX_TOKENS: u32 = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("top_p {0} outside (0, 1]")]
    TopP(f64),
    #[error("max_tokens must be at least 1")]
    MaxTokens,
    #[error("retry policy: {0}")]
    Policy(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl DecodingConfig {
    pub fn new(temperature: f64, top_p: f64) -> Self {
        Self { temperature, top_p, max_tokens: DEFAULT_MAX_TOKENS, stop_sequences: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ConfigError::TopP(self.top_p));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError::MaxTokens);
        }
        Ok(())
    }

    /// Short stable label, e.g. `t0.70_p0.85_n200`, with a stop-list hash
    /// suffix when stop sequences are set.
    pub fn config_id(&self) -> String {
        let mut id = format!("t{:.2}_p{:.2}_n{}", self.temperature, self.top_p, self.max_tokens);
        if !self.stop_sequences.is_empty() {
            let mut h = ContentHasher::new();
            h.u64(self.stop_sequences.len() as u64);
            for s in &self.stop_sequences {
                h.str(s);
            }
            id.push_str("_s");
            id.push_str(&h.finish_hex(4));
        }
        id
    }

    fn hash_into(&self, h: &mut ContentHasher) {
        h.f64(self.temperature).f64(self.top_p).u64(u64::from(self.max_tokens)).u64(self.stop_sequences.len() as u64);
        for s in &self.stop_sequences {
            h.str(s);
        }
    }
}

/// 128-bit content hash of `(model_id, prompt text, decoding config)`, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub String);

impl RequestId {
    pub fn compute(model_id: &str, text: &str, config: &DecodingConfig) -> Self {
        let mut h = ContentHasher::new();
        h.str("dmba-request-v1").str(model_id).str(text);
        config.hash_into(&mut h);
        Self(h.finish_hex(16))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub request_id: RequestId,
    pub model_id: String,
    pub stimulus: Stimulus,
    pub config: DecodingConfig,
}

impl GenerationRequest {
    pub fn new(model_id: impl Into<String>, stimulus: Stimulus, config: DecodingConfig) -> Self {
        let model_id = model_id.into();
        Self { request_id: RequestId::compute(&model_id, &stimulus.text, &config), model_id, stimulus, config }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    /// Maps a provider `finish_reason` string; anything unrecognised but
    /// present counts as a normal stop.
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            _ => FinishReason::Stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub request_id: RequestId,
    /// Raw assistant message, untrimmed.
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: f64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: f64,
    pub multiplier: f64,
    pub jitter_fraction: f64,
    pub request_timeout_ms: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay_ms: 500.0, multiplier: 2.0, jitter_fraction: 0.2, request_timeout_ms: 60_000.0 }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_attempts == 0 {
            return Err(ConfigError::Policy("max_attempts must be at least 1"));
        }
        if self.base_delay_ms.is_nan() || self.base_delay_ms <= 0.0 {
            return Err(ConfigError::Policy("base_delay_ms must be positive"));
        }
        if self.multiplier.is_nan() || self.multiplier < 1.0 {
            return Err(ConfigError::Policy("multiplier must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return Err(ConfigError::Policy("jitter_fraction must lie in [0, 1]"));
        }
        if self.request_timeout_ms.is_nan() || self.request_timeout_ms <= 0.0 {
            return Err(ConfigError::Policy("request_timeout_ms must be positive"));
        }
        Ok(())
    }

    /// Nominal wait before attempt `attempt` (2-based: attempt 1 has no wait):
    /// `base * multiplier^(attempt - 2)`.
    pub fn nominal_delay_ms(&self, attempt: u32) -> f64 {
        if attempt <= 1 {
            return 0.0;
        }
        self.base_delay_ms * libm::pow(self.multiplier, f64::from(attempt - 2))
    }

    /// Nominal delay scaled by `1 + jitter * (2u - 1)` for `u` in `[0, 1)`.
    pub fn jittered_delay_ms(&self, attempt: u32, u: f64) -> f64 {
        self.nominal_delay_ms(attempt) * (1.0 + self.jitter_fraction * (2.0 * u - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{StimulusKind, Variant};

    fn stim(text: &str) -> Stimulus {
        Stimulus { pair_id: "p".into(), variant: Variant::Stereo, kind: StimulusKind::Agreement, text: text.into() }
    }

    #[test]
    fn request_id_is_content_hash() {
        let c = DecodingConfig::new(0.7, 1.0);
        let a = GenerationRequest::new("m", stim("hello"), c.clone());
        let b = GenerationRequest::new("m", stim("hello"), c.clone());
        assert_eq!(a.request_id, b.request_id);
        assert_eq!(a.request_id.as_str().len(), 32);
        assert_ne!(a.request_id, GenerationRequest::new("m2", stim("hello"), c.clone()).request_id);
        assert_ne!(a.request_id, GenerationRequest::new("m", stim("hello"), DecodingConfig::new(0.7, 0.85)).request_id);
        let mut stopped = c;
        stopped.stop_sequences.push("\n".into());
        assert_ne!(a.request_id, GenerationRequest::new("m", stim("hello"), stopped).request_id);
    }

    #[test]
    fn config_bounds() {
        assert!(DecodingConfig::new(0.0, 1.0).validate().is_ok());
        assert!(DecodingConfig::new(2.5, 1.0).validate().is_err());
        assert!(DecodingConfig::new(0.7, 0.0).validate().is_err());
        let mut c = DecodingConfig::new(0.7, 1.0);
        c.max_tokens = 0;
        assert_eq!(c.validate(), Err(ConfigError::MaxTokens));
    }

    #[test]
    fn config_id_format() {
        assert_eq!(DecodingConfig::new(0.7, 0.85).config_id(), "t0.70_p0.85_n200");
        let mut c = DecodingConfig::new(0.0, 1.0);
        c.stop_sequences.push("###".into());
        assert!(c.config_id().starts_with("t0.00_p1.00_n200_s"));
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.nominal_delay_ms(1), 0.0);
        assert_eq!(p.nominal_delay_ms(2), 500.0);
        assert_eq!(p.nominal_delay_ms(3), 1000.0);
        assert_eq!(p.nominal_delay_ms(5), 4000.0);
        assert_eq!(p.jittered_delay_ms(2, 0.0), 400.0);
        assert_eq!(p.jittered_delay_ms(2, 0.5), 500.0);
    }

    #[test]
    fn policy_validation() {
        assert!(RetryPolicy::default().validate().is_ok());
        let bad = RetryPolicy { multiplier: 0.5, ..RetryPolicy::default() };
        assert!(bad.validate().is_err());
    }
}

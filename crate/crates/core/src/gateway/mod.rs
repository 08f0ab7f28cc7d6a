//! Client for OpenAI-compatible completion endpoints.
//!
//! One client drives the generator, the entailment judge, and the
//! correctness judge; they differ only in prompt and decoding settings.

mod client;
pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    a_token_mass, parse_correctness_reply, parse_entailment_reply, Completion, CompletionRequest,
    GatewayClient,
};
pub use prompts::{render_prompt, PTrueBlock, PromptExtras, PromptKind, PromptTemplate};

pub const API_KEY_ENV: &str = "SEMPROBE_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway timed out after {attempts} attempts: {last}")]
    Timeout { attempts: u32, last: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned no token log-probabilities")]
    NoLogProbs,
    #[error("judge verdict is ambiguous: {0:?}")]
    AmbiguousVerdict(String),
    #[error("prompt slot {0:?} is missing")]
    MissingSlot(&'static str),
    #[error("bad few-shot set: {0}")]
    BadFewShot(String),
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    /// `/v1/completions` with a raw prompt.
    #[default]
    Completions,
    /// `/v1/chat/completions` with a single user message.
    Chat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    /// Never serialized; filled from `SEMPROBE_API_KEY`.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel_requests: usize,
    pub api_style: ApiStyle,
    /// Some servers reject `top_k`; turn off to omit it.
    pub send_top_k: bool,
    pub backoff_base_ms: u64,
    pub short_max_tokens: u32,
    pub long_max_tokens: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            api_key: None,
            model_name: "default".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_parallel_requests: 4,
            api_style: ApiStyle::Completions,
            send_top_k: true,
            backoff_base_ms: 500,
            short_max_tokens: 64,
            long_max_tokens: 128,
        }
    }
}

impl GatewayConfig {
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_parallel_requests < 1 {
            return Err(GatewayError::InvalidConfig(
                "max_parallel_requests must be >= 1".into(),
            ));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(GatewayError::InvalidConfig("timeout must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(GatewayError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }
}

//! Chat and embedding providers, offline stubs, caches and usage accounting.

mod cache;
mod http;
mod stub;

use std::ops::AddAssign;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use cache::{CachedChat, CachedEmbedder, EmbeddingCache, ResponseCache};
pub use http::{HttpChat, HttpEmbedder, HttpResponse, Transport, TransportError, UreqTransport};
pub use stub::{estimate_tokens, FnChat, HashEmbedder, ScriptedChat, HASH_EMBEDDING_DIM};

pub const DEFAULT_CHAT_MODEL: &str = "gpt-4.1";
pub const DEFAULT_EMBEDDING_MODEL: &str = "jina-embeddings-v2-base-code";
pub const DEFAULT_API_KEY_ENV: &str = "DAISY_API_KEY";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStats {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub request_count: u64,
}

impl UsageStats {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self { input_tokens, output_tokens, request_count: 1 }
    }
}

impl AddAssign for UsageStats {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
        self.request_count += rhs.request_count;
    }
}

impl std::iter::Sum for UsageStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut total = Self::default();
        for u in iter {
            total += u;
        }
        total
    }
}

/// Thread-safe running total of usage deltas.
#[derive(Debug, Default)]
pub struct UsageMeter(Mutex<UsageStats>);

impl UsageMeter {
    pub fn record(&self, delta: UsageStats) {
        *self.0.lock().unwrap() += delta;
    }

    pub fn total(&self) -> UsageStats {
        *self.0.lock().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    /// `None` leaves the provider default in place.
    #[serde(default)]
    pub temperature: Option<f64>,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), temperature: None }
    }

    pub fn with_temperature(mut self, temperature: Option<f64>) -> Self {
        self.temperature = temperature;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub reply: String,
    pub usage: UsageStats,
    #[serde(default)]
    pub cached: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("language model unavailable after {attempts} attempts: {last}")]
    LlmUnavailable { attempts: u32, last: String },
    #[error("authentication rejected ({0})")]
    AuthError(u16),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("missing API key: set {0}")]
    MissingApiKey(String),
    #[error("no scripted reply for prompt {0}")]
    NoScriptedReply(String),
    #[error("invalid stub script: {0}")]
    Script(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError>;
    fn model_id(&self) -> String;
}

pub trait Embedder: Send + Sync {
    /// One L2-normalized vector per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
    fn model_id(&self) -> String;
}

impl<T: ChatModel + ?Sized> ChatModel for &T {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

impl<T: ChatModel + ?Sized> ChatModel for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        (**self).embed(texts)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        (**self).embed(texts)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    /// Separate base URL for embeddings, if the embedding model is hosted elsewhere.
    pub embedding_endpoint: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub localize_temperature: Option<f64>,
    pub infer_temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub request_timeout_seconds: u64,
    pub retry_budget: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub api_key_env: String,
    pub embedding_batch: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            embedding_endpoint: None,
            chat_model: DEFAULT_CHAT_MODEL.into(),
            embedding_model: DEFAULT_EMBEDDING_MODEL.into(),
            localize_temperature: Some(0.0),
            infer_temperature: None,
            max_output_tokens: None,
            request_timeout_seconds: 120,
            retry_budget: 4,
            backoff_base_ms: 1000,
            max_in_flight: 8,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            embedding_batch: 32,
        }
    }
}

impl ProviderConfig {
    pub fn api_key(&self) -> Result<String, LlmError> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingApiKey(self.api_key_env.clone()))
    }
}

/// Rescales `v` to unit length; a zero vector is returned unchanged.
pub fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

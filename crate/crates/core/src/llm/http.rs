use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{l2_normalize, ChatModel, ChatRequest, Completion, Embedder, LlmError, ProviderConfig, UsageStats};
use super::stub::estimate_tokens;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Minimal JSON-over-HTTP POST, swappable for tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Blocking transport backed by `ureq`.
#[derive(Debug, Default)]
pub struct UreqTransport {
    requests: AtomicUsize,
}

impl UreqTransport {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body.to_string()).map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.cv.wait_while(self.free.lock().unwrap(), |n| *n == 0).unwrap();
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

struct Client<T> {
    config: ProviderConfig,
    api_key: String,
    transport: T,
    gate: Gate,
}

impl<T: Transport> Client<T> {
    fn new(config: ProviderConfig, api_key: String, transport: T) -> Self {
        let gate = Gate::new(config.max_in_flight);
        Self { config, api_key, transport, gate }
    }

    /// POSTs with retries on 429, 5xx and transport failures.
    fn post(&self, url: &str, body: &Value) -> Result<Value, LlmError> {
        let headers = vec![("Authorization".to_string(), format!("Bearer {}", self.api_key))];
        let timeout = Duration::from_secs(self.config.request_timeout_seconds.max(1));
        let attempts = self.config.retry_budget + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.gate.run(|| self.transport.post_json(url, &headers, body, timeout)) {
                Ok(r) if (200..300).contains(&r.status) => {
                    return serde_json::from_str(&r.body).map_err(|e| LlmError::MalformedResponse(e.to_string()));
                }
                Ok(r) if r.status == 401 || r.status == 403 => return Err(LlmError::AuthError(r.status)),
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    log::warn!("provider returned {} (attempt {}/{attempts})", r.status, attempt + 1);
                    last = format!("status {}", r.status);
                }
                Ok(r) => {
                    let body: String = r.body.chars().take(500).collect();
                    return Err(LlmError::Rejected { status: r.status, body });
                }
                Err(e) => {
                    log::warn!("{e} (attempt {}/{attempts})", attempt + 1);
                    last = e.0;
                }
            }
        }
        Err(LlmError::LlmUnavailable { attempts, last })
    }
}

/// Chat-completions client.
pub struct HttpChat<T = UreqTransport> {
    client: Client<T>,
}

impl HttpChat<UreqTransport> {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: ProviderConfig) -> Result<Self, LlmError> {
        let key = config.api_key()?;
        Ok(Self::new(config, key, UreqTransport::default()))
    }
}

impl<T: Transport> HttpChat<T> {
    pub fn new(config: ProviderConfig, api_key: String, transport: T) -> Self {
        Self { client: Client::new(config, api_key, transport) }
    }

    pub fn transport(&self) -> &T {
        &self.client.transport
    }
}

impl<T: Transport> ChatModel for HttpChat<T> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let cfg = &self.client.config;
        let mut body = json!({
            "model": cfg.chat_model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = cfg.max_output_tokens {
            body["max_tokens"] = json!(m);
        }
        let url = format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/'));
        let v = self.client.post(&url, &body)?;
        let reply = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))?
            .to_string();
        let input = v["usage"]["prompt_tokens"].as_u64().unwrap_or_else(|| estimate_tokens(&request.prompt));
        let output = v["usage"]["completion_tokens"].as_u64().unwrap_or_else(|| estimate_tokens(&reply));
        Ok(Completion { reply, usage: UsageStats::new(input, output), cached: false })
    }

    fn model_id(&self) -> String {
        self.client.config.chat_model.clone()
    }
}

/// Embeddings client; inputs are sent in batches.
pub struct HttpEmbedder<T = UreqTransport> {
    client: Client<T>,
}

impl HttpEmbedder<UreqTransport> {
    pub fn from_env(config: ProviderConfig) -> Result<Self, LlmError> {
        let key = config.api_key()?;
        Ok(Self::new(config, key, UreqTransport::default()))
    }
}

impl<T: Transport> HttpEmbedder<T> {
    pub fn new(config: ProviderConfig, api_key: String, transport: T) -> Self {
        Self { client: Client::new(config, api_key, transport) }
    }

    pub fn transport(&self) -> &T {
        &self.client.transport
    }
}

impl<T: Transport> Embedder for HttpEmbedder<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let cfg = &self.client.config;
        let base = cfg.embedding_endpoint.as_deref().unwrap_or(&cfg.endpoint);
        let url = format!("{}/embeddings", base.trim_end_matches('/'));
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(cfg.embedding_batch.max(1)) {
            let v = self.client.post(&url, &json!({"model": cfg.embedding_model, "input": chunk}))?;
            let data = v["data"].as_array().ok_or_else(|| LlmError::MalformedResponse("missing data".into()))?;
            let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
            for (i, item) in data.iter().enumerate() {
                let index = item["index"].as_u64().unwrap_or(i as u64);
                let emb = item["embedding"]
                    .as_array()
                    .ok_or_else(|| LlmError::MalformedResponse("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| LlmError::MalformedResponse("non-numeric embedding".into())))
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push((index, l2_normalize(emb)));
            }
            if rows.len() != chunk.len() {
                return Err(LlmError::MalformedResponse(format!("{} embeddings for {} inputs", rows.len(), chunk.len())));
            }
            rows.sort_by_key(|r| r.0);
            out.extend(rows.into_iter().map(|r| r.1));
        }
        Ok(out)
    }

    fn model_id(&self) -> String {
        self.client.config.embedding_model.clone()
    }
}

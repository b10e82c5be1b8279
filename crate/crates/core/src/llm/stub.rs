use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;

use super::{l2_normalize, ChatModel, ChatRequest, Completion, Embedder, LlmError, UsageStats};
use crate::hash::sha256_hex;
use crate::retrieve::tokenize;

/// Synthetic token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

fn synthetic(prompt: &str, reply: String) -> Completion {
    let usage = UsageStats::new(estimate_tokens(prompt), estimate_tokens(&reply));
    Completion { reply, usage, cached: false }
}

#[derive(Debug, Deserialize)]
struct ScriptReply {
    #[serde(default)]
    prompt_sha256: Option<String>,
    #[serde(default)]
    contains: Option<String>,
    reply: String,
}

#[derive(Debug, Default, Deserialize)]
struct ChatScript {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    replies: Vec<ScriptReply>,
    #[serde(default)]
    default: Option<String>,
}

/// Canned replies chosen by exact prompt hash, then by the first matching
/// substring rule, then the default.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    model: String,
    by_hash: Vec<(String, String)>,
    by_substring: Vec<(String, String)>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self { model: "scripted".into(), ..Self::default() }
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default = Some(reply.into());
        self
    }

    pub fn on_prompt(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.by_hash.push((sha256_hex(&[prompt]), reply.into()));
        self
    }

    pub fn on_contains(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.by_substring.push((needle.into(), reply.into()));
        self
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let s: ChatScript = serde_json::from_str(text).map_err(|e| LlmError::Script(e.to_string()))?;
        let mut chat = Self::new();
        if let Some(m) = s.model {
            chat.model = m;
        }
        chat.default = s.default;
        for r in s.replies {
            match (r.prompt_sha256, r.contains) {
                (Some(h), _) => chat.by_hash.push((h, r.reply)),
                (None, Some(c)) => chat.by_substring.push((c, r.reply)),
                (None, None) => return Err(LlmError::Script("reply needs prompt_sha256 or contains".into())),
            }
        }
        Ok(chat)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatModel for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = sha256_hex(&[&request.prompt]);
        let reply = self
            .by_hash
            .iter()
            .find(|(h, _)| *h == hash)
            .or_else(|| self.by_substring.iter().find(|(c, _)| request.prompt.contains(c.as_str())))
            .map(|(_, r)| r.clone())
            .or_else(|| self.default.clone())
            .ok_or(LlmError::NoScriptedReply(hash))?;
        Ok(synthetic(&request.prompt, reply))
    }

    fn model_id(&self) -> String {
        self.model.clone()
    }
}

type ReplyFn = dyn Fn(&str) -> Option<String> + Send + Sync;

/// Stub whose reply is computed from the prompt.
pub struct FnChat {
    model: String,
    f: Box<ReplyFn>,
    calls: AtomicUsize,
}

impl FnChat {
    pub fn new(f: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        Self { model: "stub".into(), f: Box::new(f), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatModel for FnChat {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match (self.f)(&request.prompt) {
            Some(reply) => Ok(synthetic(&request.prompt, reply)),
            None => Err(LlmError::NoScriptedReply(sha256_hex(&[&request.prompt]))),
        }
    }

    fn model_id(&self) -> String {
        self.model.clone()
    }
}

pub const HASH_EMBEDDING_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Offline embedder: hashed token counts in 256 buckets, L2-normalized.
/// Text without tokens maps to the first basis vector.
#[derive(Debug, Default)]
pub struct HashEmbedder {
    calls: AtomicUsize,
}

impl HashEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn embed_one(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; HASH_EMBEDDING_DIM];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            v[0] = 1.0;
            return v;
        }
        for t in tokens {
            v[(fnv1a(t.as_bytes()) % HASH_EMBEDDING_DIM as u64) as usize] += 1.0;
        }
        l2_normalize(v)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
    }

    fn model_id(&self) -> String {
        format!("hash-{HASH_EMBEDDING_DIM}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_lookup_order() {
        let chat = ScriptedChat::new().on_prompt("exact", "A").on_contains("ex", "B").with_default("C");
        assert_eq!(chat.complete(&ChatRequest::new("exact")).unwrap().reply, "A");
        assert_eq!(chat.complete(&ChatRequest::new("next")).unwrap().reply, "B");
        assert_eq!(chat.complete(&ChatRequest::new("zzz")).unwrap().reply, "C");
        assert!(ScriptedChat::new().complete(&ChatRequest::new("q")).is_err());
    }

    #[test]
    fn synthetic_usage() {
        let chat = ScriptedChat::new().with_default("12345");
        let c = chat.complete(&ChatRequest::new("abcd")).unwrap();
        assert_eq!(c.usage, UsageStats::new(1, 2));
    }

    #[test]
    fn hash_embedder_is_deterministic_unit() {
        let e = HashEmbedder::new();
        let v = e.embed(&["assert x > 0;".into(), "assert x > 0;".into(), "".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].len(), HASH_EMBEDDING_DIM);
        for x in &v {
            let n: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn script_json() {
        let c = ScriptedChat::from_json(r#"{"replies":[{"contains":"Main","reply":"[5, 6]"}]}"#).unwrap();
        assert_eq!(c.complete(&ChatRequest::new("method Main()")).unwrap().reply, "[5, 6]");
    }
}

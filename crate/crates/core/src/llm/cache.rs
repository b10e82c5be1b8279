use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{ChatModel, ChatRequest, Completion, Embedder, LlmError, UsageStats};
use crate::hash::sha256_hex;

#[derive(Debug, Serialize, Deserialize)]
struct CachedReply {
    model: String,
    reply: String,
    usage: UsageStats,
}

/// Content-addressed reply store: one JSON file per (model, prompt) hash.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { dir: root.into().join("responses") }
    }

    pub fn key(model: &str, request: &ChatRequest) -> String {
        let temp = request.temperature.map(|t| t.to_string()).unwrap_or_default();
        sha256_hex(&[model, &temp, &request.prompt])
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Corrupt entries are reported and treated as misses.
    pub fn get(&self, key: &str) -> Option<(String, UsageStats)> {
        let path = self.path(key);
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CachedReply>(&text) {
            Ok(c) => Some((c.reply, c.usage)),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &str, model: &str, reply: &str, usage: UsageStats) -> Result<(), LlmError> {
        std::fs::create_dir_all(&self.dir)?;
        let entry = CachedReply { model: model.into(), reply: reply.into(), usage };
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, serde_json::to_string(&entry).expect("serializable"))?;
        std::fs::rename(tmp, self.path(key))?;
        Ok(())
    }
}

/// Chat model with a persistent reply cache in front.
///
/// Hits return the usage recorded on the original request, so reports are
/// identical whether or not the cache was warm.
pub struct CachedChat<C> {
    inner: C,
    cache: Option<ResponseCache>,
    misses: AtomicUsize,
}

impl<C: ChatModel> CachedChat<C> {
    /// `cache = None` disables caching for fresh sampling.
    pub fn new(inner: C, cache: Option<ResponseCache>) -> Self {
        Self { inner, cache, misses: AtomicUsize::new(0) }
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: ChatModel> ChatModel for CachedChat<C> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let model = self.inner.model_id();
        let key = ResponseCache::key(&model, request);
        if let Some(cache) = &self.cache {
            if let Some((reply, usage)) = cache.get(&key) {
                return Ok(Completion { reply, usage, cached: true });
            }
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let c = self.inner.complete(request)?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &model, &c.reply, c.usage) {
                log::warn!("cannot write reply cache: {e}");
            }
        }
        Ok(c)
    }

    fn model_id(&self) -> String {
        self.inner.model_id()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    hash: String,
    dim: usize,
    values: Vec<f64>,
}

/// Embedding vectors keyed by content hash, persisted as JSON lines.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    map: RwLock<HashMap<String, Vec<f64>>>,
    writer: Mutex<()>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing entries; malformed lines are skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let mut map = HashMap::new();
        if path.exists() {
            for (i, line) in std::fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<EmbeddingLine>(line) {
                    Ok(e) if e.values.len() == e.dim => {
                        map.insert(e.hash, e.values);
                    }
                    _ => log::warn!("skipping malformed embedding cache line {} in {}", i + 1, path.display()),
                }
            }
        }
        Ok(Self { path: Some(path), map: RwLock::new(map), writer: Mutex::new(()) })
    }

    pub fn key(model: &str, text: &str) -> String {
        sha256_hex(&[model, text])
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Last write wins for identical keys.
    pub fn insert(&self, key: String, values: Vec<f64>) -> Result<(), LlmError> {
        if let Some(path) = &self.path {
            let _guard = self.writer.lock().unwrap();
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let line = EmbeddingLine { hash: key.clone(), dim: values.len(), values: values.clone() };
            writeln!(f, "{}", serde_json::to_string(&line).expect("serializable"))?;
        }
        self.map.write().unwrap().insert(key, values);
        Ok(())
    }
}

/// Embedder that only sends cache misses to the inner model.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: EmbeddingCache,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: EmbeddingCache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let model = self.inner.model_id();
        let keys: Vec<String> = texts.iter().map(|t| EmbeddingCache::key(&model, t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = keys.iter().map(|k| self.cache.get(k)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.inner.embed(&batch)?;
            for (&i, v) in missing.iter().zip(vectors) {
                self.cache.insert(keys[i].clone(), v.clone())?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn model_id(&self) -> String {
        self.inner.model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{HashEmbedder, ScriptedChat};

    #[test]
    fn reply_cache_hit_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let chat = CachedChat::new(ScriptedChat::new().with_default("r"), Some(ResponseCache::new(dir.path())));
        let req = ChatRequest::new("p");
        let first = chat.complete(&req).unwrap();
        let second = chat.complete(&req).unwrap();
        assert!(second.cached && !first.cached);
        assert_eq!(first.usage, second.usage);
        assert_eq!(chat.inner().calls(), 1);

        let key = ResponseCache::key("scripted", &req);
        std::fs::write(dir.path().join("responses").join(format!("{key}.json")), "{not json").unwrap();
        assert!(!chat.complete(&req).unwrap().cached);
        assert_eq!(chat.inner().calls(), 2);
    }

    #[test]
    fn embedding_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let texts: Vec<String> = vec!["a b".into(), "c".into()];
        {
            let e = CachedEmbedder::new(HashEmbedder::new(), EmbeddingCache::open(&path).unwrap());
            e.embed(&texts).unwrap();
            assert_eq!(e.inner().calls(), 1);
        }
        std::fs::write(&path, format!("{}garbage\n", std::fs::read_to_string(&path).unwrap())).unwrap();
        let warm = CachedEmbedder::new(HashEmbedder::new(), EmbeddingCache::open(&path).unwrap());
        let v = warm.embed(&texts).unwrap();
        assert_eq!(warm.inner().calls(), 0);
        assert_eq!(v[0], HashEmbedder::embed_one("a b"));
    }
}

//! Verifier, chat model and embedder selected by the run configuration.

use anyhow::{anyhow, Result};

use daisy_core::llm::{
    CachedChat, CachedEmbedder, ChatModel, Embedder, EmbeddingCache, HashEmbedder, HttpChat, HttpEmbedder,
    ResponseCache, ScriptedChat,
};
use daisy_core::verifier::{DafnyCli, RuleVerifier, ScriptedVerifier, Verifier};

use crate::config::RunConfig;

pub struct Backends {
    pub verifier: Box<dyn Verifier>,
    llm: Result<Box<dyn ChatModel>, String>,
    embedder: Result<Box<dyn Embedder>, String>,
}

impl Backends {
    pub fn new(verifier: Box<dyn Verifier>, llm: Option<Box<dyn ChatModel>>, embedder: Option<Box<dyn Embedder>>) -> Self {
        Self {
            verifier,
            llm: llm.ok_or_else(|| "no language model configured".to_string()),
            embedder: embedder.ok_or_else(|| "no embedder configured".to_string()),
        }
    }

    /// Builds every backend the configuration names. Model clients that
    /// cannot be created (for instance without an API key) only fail when a
    /// command actually needs them.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let verifier: Box<dyn Verifier> = if let Some(p) = &cfg.offline.verifier_rules {
            Box::new(RuleVerifier::load(p)?)
        } else if let Some(p) = &cfg.offline.verifier_script {
            Box::new(ScriptedVerifier::load(p)?)
        } else {
            Box::new(DafnyCli::new(cfg.verifier.clone()))
        };
        let llm: Result<Box<dyn ChatModel>, String> = match &cfg.offline.llm_script {
            Some(p) => ScriptedChat::load(p).map(|c| Box::new(c) as Box<dyn ChatModel>).map_err(|e| e.to_string()),
            None => HttpChat::from_env(cfg.provider.clone()).map(|c| Box::new(c) as Box<dyn ChatModel>).map_err(|e| e.to_string()),
        };
        let cache = cfg.cache_dir.as_ref().map(ResponseCache::new);
        let llm = llm.map(|c| Box::new(CachedChat::new(c, cache)) as Box<dyn ChatModel>);
        let embedder: Result<Box<dyn Embedder>, String> = if cfg.offline_embedder() {
            Ok(Box::new(HashEmbedder::new()))
        } else {
            HttpEmbedder::from_env(cfg.provider.clone()).map(|e| Box::new(e) as Box<dyn Embedder>).map_err(|e| e.to_string())
        };
        let store = match &cfg.cache_dir {
            Some(dir) => EmbeddingCache::open(dir.join("embeddings.jsonl"))?,
            None => EmbeddingCache::in_memory(),
        };
        let embedder = embedder.map(|e| Box::new(CachedEmbedder::new(e, store)) as Box<dyn Embedder>);
        Ok(Self { verifier, llm, embedder })
    }

    pub fn llm(&self) -> Result<&dyn ChatModel> {
        self.llm.as_deref().map_err(|e| anyhow!("language model unavailable: {e}"))
    }

    pub fn embedder(&self) -> Result<&dyn Embedder> {
        self.embedder.as_deref().map_err(|e| anyhow!("embedder unavailable: {e}"))
    }

    pub fn embedder_opt(&self) -> Option<&dyn Embedder> {
        self.embedder.as_deref().ok()
    }
}

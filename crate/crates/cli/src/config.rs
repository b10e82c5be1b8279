//! Run configuration: `daisy.toml`, then command-line flags, then environment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use daisy_core::evaluate::CostRates;
use daisy_core::infer::AttemptOrder;
use daisy_core::llm::ProviderConfig;
use daisy_core::localize::LocalizationStrategy;
use daisy_core::retrieve::{RetrievalConfig, RetrievalStrategy, DEFAULT_K};
use daisy_core::verifier::VerifierConfig;

pub const DEFAULT_CONFIG_FILE: &str = "daisy.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    /// noex, random, tfidf, embed or mulemb.
    pub strategy: String,
    pub alpha: f64,
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { strategy: "mulemb".into(), alpha: 0.5, k: DEFAULT_K }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub example_db: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Directory holding `localize.txt` and `infer.txt` overrides.
    pub prompts: Option<PathBuf>,
}

/// Offline replacements for the external services.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Offline {
    pub verifier_script: Option<PathBuf>,
    pub verifier_rules: Option<PathBuf>,
    pub llm_script: Option<PathBuf>,
    /// `hash` selects the offline embedder.
    pub embedder: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub cache_dir: Option<PathBuf>,
    pub localization: String,
    pub attempt_order: AttemptOrder,
    pub include_context: bool,
    pub verifier: VerifierConfig,
    pub provider: ProviderConfig,
    pub retrieval: RetrievalSection,
    pub paths: Paths,
    pub offline: Offline,
    pub cost: CostRates,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            cache_dir: None,
            localization: "hybrid".into(),
            attempt_order: AttemptOrder::IndexAligned,
            include_context: true,
            verifier: VerifierConfig::default(),
            provider: ProviderConfig::default(),
            retrieval: RetrievalSection::default(),
            paths: Paths::default(),
            offline: Offline::default(),
            cost: CostRates::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`, or `daisy.toml` in the working directory when present.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None if Path::new(DEFAULT_CONFIG_FILE).exists() => PathBuf::from(DEFAULT_CONFIG_FILE),
            None => return Ok(Self::default()),
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Environment variables win over both file and flags.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get("DAISY_VERIFIER_PATH") {
            self.verifier.executable = v;
        }
        if let Some(v) = get("DAISY_CACHE_DIR") {
            self.cache_dir = Some(v.into());
        }
        if let Some(v) = get("DAISY_ENDPOINT") {
            self.provider.endpoint = v;
        }
        if let Some(v) = get("DAISY_CHAT_MODEL") {
            self.provider.chat_model = v;
        }
        if let Some(v) = get("DAISY_EMBEDDING_MODEL") {
            self.provider.embedding_model = v;
        }
        if let Some(v) = get("DAISY_SEED") {
            self.seed = v.parse().context("DAISY_SEED")?;
        }
        if let Some(v) = get("DAISY_JOBS") {
            self.jobs = v.parse().context("DAISY_JOBS")?;
        }
        Ok(())
    }

    pub fn localization_strategy(&self) -> Result<LocalizationStrategy> {
        Ok(LocalizationStrategy::parse(&self.localization)?)
    }

    pub fn retrieval_config(&self) -> Result<RetrievalConfig> {
        let r = &self.retrieval;
        let strategy = match r.strategy.to_ascii_lowercase().as_str() {
            "noex" | "none" => RetrievalStrategy::NoEx,
            "random" => RetrievalStrategy::Random { seed: self.seed },
            "tfidf" => RetrievalStrategy::Tfidf,
            "embed" => RetrievalStrategy::Embed,
            "mulemb" => RetrievalStrategy::MulEmb { alpha: r.alpha },
            other => bail!("unknown retrieval strategy {other:?} (expected noex, random, tfidf, embed or mulemb)"),
        };
        Ok(RetrievalConfig::new(strategy, r.k)?)
    }

    pub fn offline_embedder(&self) -> bool {
        self.offline.embedder.as_deref().is_some_and(|e| e.eq_ignore_ascii_case("hash"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_env() {
        let mut c = RunConfig::from_toml(
            "seed = 7\nlocalization = \"laurel+\"\n[retrieval]\nstrategy = \"tfidf\"\nk = 2\n[verifier]\ntimeout_seconds = 30\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.verifier.timeout_seconds, 30);
        assert_eq!(c.retrieval_config().unwrap().k, 2);
        assert_eq!(c.localization_strategy().unwrap(), LocalizationStrategy::LaurelFlPlus);
        c.apply_env_from(|k| (k == "DAISY_SEED").then(|| "9".to_string())).unwrap();
        assert_eq!(c.seed, 9);
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        c.retrieval.strategy = "nope".into();
        assert!(c.retrieval_config().is_err());
    }
}

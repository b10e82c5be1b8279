//! In-context example selection: TF-IDF, code embeddings and the blended
//! error/code embedding score.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{Embedder, LlmError};
use crate::mutator::{BenchmarkInstance, InstanceCategory};

/// (origin file, declaration name).
pub type Origin = (String, String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleEntry {
    pub id: String,
    pub origin: Origin,
    pub method_text: String,
    pub filtered_error_text: String,
    pub fixing_assertions: Vec<String>,
    pub code_embedding: Vec<f64>,
    pub error_embedding: Vec<f64>,
}

impl ExampleEntry {
    /// Document text used by the TF-IDF ranker.
    pub fn tfidf_text(&self) -> String {
        format!("{}\n{}", self.method_text, self.filtered_error_text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RetrievalStrategy {
    NoEx,
    Random { seed: u64 },
    Tfidf,
    Embed,
    MulEmb { alpha: f64 },
}

impl RetrievalStrategy {
    pub fn name(&self) -> String {
        match self {
            RetrievalStrategy::NoEx => "NoEx".into(),
            RetrievalStrategy::Random { .. } => "Random".into(),
            RetrievalStrategy::Tfidf => "Tfidf".into(),
            RetrievalStrategy::Embed => "Embed".into(),
            RetrievalStrategy::MulEmb { alpha } => format!("MulEmb({alpha})"),
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, RetrievalStrategy::Embed | RetrievalStrategy::MulEmb { .. })
    }
}

pub const DEFAULT_K: usize = 3;
pub const ALPHA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub strategy: RetrievalStrategy,
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { strategy: RetrievalStrategy::MulEmb { alpha: 0.5 }, k: DEFAULT_K }
    }
}

impl RetrievalConfig {
    pub fn new(strategy: RetrievalStrategy, k: usize) -> Result<Self, RetrieveError> {
        let cfg = Self { strategy, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k == 0 {
            return Err(RetrieveError::InvalidConfig("k must be at least 1".into()));
        }
        if let RetrievalStrategy::MulEmb { alpha } = self.strategy {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(RetrieveError::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub sim_error: f64,
    pub sim_code: f64,
    pub combined: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrieveError {
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-length vector")]
    ZeroVector,
    #[error("example database is empty")]
    EmptyDatabase,
    #[error("query has no {0} embedding")]
    MissingEmbedding(&'static str),
    #[error("invalid retrieval configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding unavailable: {0}")]
    EmbeddingUnavailable(#[from] LlmError),
    #[error("example database line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrieveError> {
    if u.len() != v.len() {
        return Err(RetrieveError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrieveError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub fn mulemb_score(
    entry: &ExampleEntry,
    query_code: &[f64],
    query_error: &[f64],
    alpha: f64,
) -> Result<SimilarityBreakdown, RetrieveError> {
    let sim_error = cosine(query_error, &entry.error_embedding)?;
    let sim_code = cosine(query_code, &entry.code_embedding)?;
    Ok(SimilarityBreakdown { sim_error, sim_code, combined: alpha * sim_error + (1.0 - alpha) * sim_code })
}

static POSITION_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\S[^\s(]*\(\d+,\d+\):\s*").unwrap());
static BARE_POSITION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(\d+,\d+\)").unwrap());
static ABS_PATH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(?:[A-Za-z]:\\|/)[^\s:()'"]+"#).unwrap());
static SNIPPET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d*\s*\|").unwrap());
static DURATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b\d+(?:\.\d+)?\s*(?:ms|milliseconds?|s|secs?|seconds?)\b").unwrap());
static TIMING_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:elapsed|time|duration|total time|finished in)\b").unwrap());
static BANNER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:dafny program verifier|\d+ (?:parse|resolution/type|resolution|type) errors? detected|dafny \d|compiling|running)").unwrap()
});
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[ \t]+").unwrap());

fn filter_pass(raw: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for line in raw.lines() {
        let t = line.trim();
        if t.is_empty() || SNIPPET.is_match(line) || TIMING_LINE.is_match(t) || BANNER.is_match(t) {
            continue;
        }
        let mut s = t.to_string();
        while let Some(m) = POSITION_PREFIX.find(&s) {
            s = s[m.end()..].to_string();
        }
        let s = BARE_POSITION.replace_all(&s, "");
        let s = ABS_PATH.replace_all(&s, "");
        let s = DURATION.replace_all(&s, "");
        let s = SPACES.replace_all(s.trim(), " ").trim().to_string();
        if s.is_empty() || TIMING_LINE.is_match(&s) || BANNER.is_match(&s) {
            continue;
        }
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out.join("\n")
}

/// Strips file paths, positions, timings, source snippets and tool banners
/// from verifier output, keeping the error phrases. Idempotent.
pub fn filter_error_message(raw: &str) -> String {
    let mut s = filter_pass(raw);
    loop {
        let next = filter_pass(&s);
        if next == s {
            return s;
        }
        s = next;
    }
}

/// Identifier-aware tokens; `==`, `<=`, `..` and `|` are kept as tokens and
/// all other punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
            continue;
        }
        let next = chars.get(i + 1).copied();
        match (c, next) {
            ('=', Some('=')) => {
                out.push("==".into());
                i += 2;
            }
            ('<', Some('=')) => {
                out.push("<=".into());
                i += 2;
            }
            ('.', Some('.')) => {
                out.push("..".into());
                i += 2;
            }
            ('|', _) => {
                out.push("|".into());
                i += 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// TF-IDF over a fixed document set: raw term counts, idf = ln(N/df).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfidfIndex {
    idf: HashMap<String, f64>,
    docs: Vec<HashMap<String, f64>>,
}

fn term_counts(text: &str) -> HashMap<String, f64> {
    let mut tf = HashMap::new();
    for t in tokenize(text) {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    tf
}

fn sparse_cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut keys: Vec<&String> = small.keys().collect();
    keys.sort();
    let dot: f64 = keys.iter().filter_map(|k| large.get(*k).map(|y| small[*k] * y)).sum();
    dot / (na * nb)
}

impl TfidfIndex {
    pub fn build<S: AsRef<str>>(documents: &[S]) -> Self {
        let counts: Vec<HashMap<String, f64>> = documents.iter().map(|d| term_counts(d.as_ref())).collect();
        let n = counts.len() as f64;
        let mut df: HashMap<String, f64> = HashMap::new();
        for tf in &counts {
            for term in tf.keys() {
                *df.entry(term.clone()).or_insert(0.0) += 1.0;
            }
        }
        let idf: HashMap<String, f64> = df.into_iter().map(|(t, d)| (t, (n / d).ln())).collect();
        let docs = counts.into_iter().map(|tf| tf.into_iter().map(|(t, c)| { let w = c * idf[&t]; (t, w) }).collect()).collect();
        Self { idf, docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    /// Query terms absent from the corpus carry no weight.
    pub fn query_vector(&self, text: &str) -> HashMap<String, f64> {
        term_counts(text).into_iter().filter_map(|(t, c)| self.idf.get(&t).map(|w| (t, c * w))).collect()
    }

    /// Cosine score against every document, in document order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let q = self.query_vector(query);
        self.docs.iter().map(|d| sparse_cosine(&q, d)).collect()
    }
}

/// Document indices sorted by descending score, ties by index.
pub fn tfidf_rank<S: AsRef<str>>(query: &str, corpus: &[S]) -> Vec<(usize, f64)> {
    let scores = TfidfIndex::build(corpus).scores(query);
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked
}

/// What a retrieval query knows about the failing instance.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalQuery {
    pub id: String,
    pub origin: Origin,
    pub method_text: String,
    pub filtered_error_text: String,
    pub code_embedding: Option<Vec<f64>>,
    pub error_embedding: Option<Vec<f64>>,
}

impl RetrievalQuery {
    pub fn from_instance(instance: &BenchmarkInstance) -> Self {
        Self {
            id: instance.id.clone(),
            origin: instance.origin_key(),
            method_text: instance.method_text(),
            filtered_error_text: filter_error_message(&instance.error_text()),
            code_embedding: None,
            error_embedding: None,
        }
    }

    pub fn embed(mut self, embedder: &dyn Embedder) -> Result<Self, RetrieveError> {
        let v = embedder.embed(&[self.method_text.clone(), self.filtered_error_text.clone()])?;
        let mut it = v.into_iter();
        self.code_embedding = it.next();
        self.error_embedding = it.next();
        Ok(self)
    }

    pub fn tfidf_text(&self) -> String {
        format!("{}\n{}", self.method_text, self.filtered_error_text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub entry: ExampleEntry,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<SimilarityBreakdown>,
}

/// Example database with a prebuilt TF-IDF index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExampleDb {
    entries: Vec<ExampleEntry>,
    tfidf: TfidfIndex,
}

impl ExampleDb {
    pub fn new(mut entries: Vec<ExampleEntry>) -> Self {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let docs: Vec<String> = entries.iter().map(ExampleEntry::tfidf_text).collect();
        let tfidf = TfidfIndex::build(&docs);
        Self { entries, tfidf }
    }

    pub fn entries(&self) -> &[ExampleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("serializable") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RetrieveError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(line).map_err(|e| RetrieveError::Corrupt { line: n + 1, message: e.to_string() })?,
            );
        }
        Ok(Self::new(entries))
    }

    /// Ranks eligible entries and returns the top `k`. Entries sharing the
    /// query's origin are never returned.
    pub fn select(&self, query: &RetrievalQuery, cfg: &RetrievalConfig) -> Result<Vec<ScoredExample>, RetrieveError> {
        cfg.validate()?;
        if cfg.strategy == RetrievalStrategy::NoEx {
            return Ok(Vec::new());
        }
        if self.entries.is_empty() {
            return Err(RetrieveError::EmptyDatabase);
        }
        let eligible: Vec<usize> = (0..self.entries.len()).filter(|&i| self.entries[i].origin != query.origin).collect();
        let mut scored: Vec<(usize, f64, Option<SimilarityBreakdown>)> = match cfg.strategy {
            RetrievalStrategy::NoEx => unreachable!(),
            RetrievalStrategy::Random { seed } => {
                let mut order = eligible.clone();
                let mix = crate::hash::sha256_hex(&[&query.id]);
                let salt = u64::from_str_radix(&mix[..16], 16).unwrap_or(0);
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ salt));
                return Ok(order
                    .into_iter()
                    .take(cfg.k)
                    .map(|i| ScoredExample { entry: self.entries[i].clone(), score: 0.0, breakdown: None })
                    .collect());
            }
            RetrievalStrategy::Tfidf => {
                let scores = self.tfidf.scores(&query.tfidf_text());
                eligible.iter().map(|&i| (i, scores[i], None)).collect()
            }
            RetrievalStrategy::Embed => {
                let q = query.code_embedding.as_ref().ok_or(RetrieveError::MissingEmbedding("code"))?;
                eligible
                    .iter()
                    .map(|&i| cosine(q, &self.entries[i].code_embedding).map(|s| (i, s, None)))
                    .collect::<Result<_, _>>()?
            }
            RetrievalStrategy::MulEmb { alpha } => {
                let qc = query.code_embedding.as_ref().ok_or(RetrieveError::MissingEmbedding("code"))?;
                let qe = query.error_embedding.as_ref().ok_or(RetrieveError::MissingEmbedding("error"))?;
                eligible
                    .iter()
                    .map(|&i| mulemb_score(&self.entries[i], qc, qe, alpha).map(|b| (i, b.combined, Some(b))))
                    .collect::<Result<_, _>>()?
            }
        };
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        });
        Ok(scored
            .into_iter()
            .take(cfg.k)
            .map(|(i, score, breakdown)| ScoredExample { entry: self.entries[i].clone(), score, breakdown })
            .collect())
    }
}

/// One entry per w/o-1 instance: failing method, filtered error, and the
/// removed ground truth as the fixing assertion.
pub fn build_example_db(instances: &[BenchmarkInstance], embedder: &dyn Embedder) -> Result<ExampleDb, RetrieveError> {
    let wo1: Vec<&BenchmarkInstance> = instances.iter().filter(|i| i.category == InstanceCategory::WO1).collect();
    let methods: Vec<String> = wo1.iter().map(|i| i.method_text()).collect();
    let errors: Vec<String> = wo1.iter().map(|i| filter_error_message(&i.error_text())).collect();
    let mut texts = methods.clone();
    texts.extend(errors.iter().cloned());
    let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed(&texts)? };
    if vectors.len() != texts.len() {
        return Err(RetrieveError::EmbeddingUnavailable(LlmError::MalformedResponse(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        ))));
    }
    let n = wo1.len();
    let entries = wo1
        .iter()
        .enumerate()
        .map(|(k, i)| ExampleEntry {
            id: i.id.clone(),
            origin: i.origin_key(),
            method_text: methods[k].clone(),
            filtered_error_text: errors[k].clone(),
            fixing_assertions: i.removed.iter().map(|r| r.text.trim().to_string()).collect(),
            code_embedding: vectors[k].clone(),
            error_embedding: vectors[n + k].clone(),
        })
        .collect();
    Ok(ExampleDb::new(entries))
}

/// Per-strategy ranking summary used by reports: entry id -> rank.
pub fn rank_map(selected: &[ScoredExample]) -> BTreeMap<String, usize> {
    selected.iter().enumerate().map(|(r, s)| (s.entry.id.clone(), r)).collect()
}

//! Verifier backends and result types.
//!
//! Every backend implements [`Verifier`]. The process-based [`DafnyCli`] runs
//! the real tool; [`ScriptedVerifier`] and [`RuleVerifier`] are deterministic
//! stand-ins for tests and offline runs.

mod dafny;
mod diagnostics;
mod rules;
mod scripted;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::source::SourceProgram;

pub use dafny::{process_launches, DafnyCli};
pub use diagnostics::{
    classify_message, parse_diagnostics, refine_with_source, render_diagnostics, Diagnostic, ErrorKind, Severity,
};
pub use rules::{Obligation, Placement, ProgramRules, RuleVerifier};
pub use scripted::{ScriptEntry, ScriptedVerifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerificationStatus {
    Verified,
    Failed,
    SyntaxError,
    Timeout,
    ToolError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub status: VerificationStatus,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    /// Wall-clock seconds spent in the backend.
    #[serde(default)]
    pub wall_time: f64,
    /// Raw tool output, kept for prompts and debugging.
    #[serde(default)]
    pub output: String,
}

impl VerificationResult {
    pub fn verified() -> Self {
        Self::with_status(VerificationStatus::Verified)
    }

    pub fn with_status(status: VerificationStatus) -> Self {
        Self { status, diagnostics: Vec::new(), wall_time: 0.0, output: String::new() }
    }

    pub fn failed(diagnostics: Vec<Diagnostic>) -> Self {
        let output = render_diagnostics(&diagnostics);
        Self { status: VerificationStatus::Failed, diagnostics, wall_time: 0.0, output }
    }

    /// Builds a result from raw Dafny-style output for `program`.
    pub fn from_output(output: String, program: &SourceProgram, wall_time: f64) -> Self {
        let mut diagnostics = parse_diagnostics(&output);
        refine_with_source(&mut diagnostics, program);
        let status = status_from_output(&output, &diagnostics);
        Self { status, diagnostics, wall_time, output }
    }

    pub fn is_verified(&self) -> bool {
        self.status == VerificationStatus::Verified
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.is_error())
    }

    /// Error text passed to the model: the diagnostics if any, else the raw output.
    pub fn error_text(&self) -> String {
        if self.diagnostics.is_empty() {
            self.output.trim().to_string()
        } else {
            render_diagnostics(&self.diagnostics)
        }
    }
}

/// Derives a status from output text and parsed diagnostics.
pub fn status_from_output(output: &str, diagnostics: &[Diagnostic]) -> VerificationStatus {
    let lower = output.to_ascii_lowercase();
    if lower.contains("parse errors detected")
        || lower.contains("resolution/type errors detected")
        || lower.contains("resolution errors detected")
        || lower.contains("type errors detected")
    {
        VerificationStatus::SyntaxError
    } else if diagnostics.iter().any(Diagnostic::is_error) {
        VerificationStatus::Failed
    } else if lower.contains("finished with") {
        VerificationStatus::Verified
    } else {
        VerificationStatus::ToolError
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifierError {
    #[error("verifier tool error: {0}")]
    Tool(String),
    #[error("no scripted result for program digest {0}")]
    MissingScriptEntry(String),
    #[error("invalid verifier configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Verifier: Send + Sync {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError>;

    /// Backend identity recorded in reports.
    fn describe(&self) -> String {
        "verifier".to_string()
    }
}

impl<V: Verifier + ?Sized> Verifier for &V {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        (**self).verify(program)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<V: Verifier + ?Sized> Verifier for Box<V> {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        (**self).verify(program)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<V: Verifier + ?Sized> Verifier for Arc<V> {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        (**self).verify(program)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub executable: String,
    pub timeout_seconds: u64,
    pub cores: usize,
    pub extra_args: Vec<String>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self { executable: "dafny".into(), timeout_seconds: 300, cores: 1, extra_args: Vec::new() }
    }
}

/// Counts backend invocations.
pub struct CountingVerifier<V> {
    inner: V,
    calls: AtomicUsize,
}

impl<V: Verifier> CountingVerifier<V> {
    pub fn new(inner: V) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }
}

impl<V: Verifier> Verifier for CountingVerifier<V> {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.verify(program)
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Caches results by whitespace-normalized program digest.
pub struct MemoVerifier<V> {
    inner: V,
    cache: Mutex<HashMap<String, VerificationResult>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<V: Verifier> MemoVerifier<V> {
    pub fn new(inner: V) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()), hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }
}

impl<V: Verifier> Verifier for MemoVerifier<V> {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        let key = program.digest();
        if let Some(r) = self.cache.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(r.clone());
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let r = self.inner.verify(program)?;
        self.cache.lock().unwrap().insert(key, r.clone());
        Ok(r)
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Enforces a wall-clock budget on an in-process backend. A call that
/// overruns reports `Timeout`; the worker thread is left to finish alone.
pub struct DeadlineVerifier<V> {
    inner: Arc<V>,
    budget: Duration,
}

impl<V: Verifier + 'static> DeadlineVerifier<V> {
    pub fn new(inner: V, budget: Duration) -> Self {
        Self { inner: Arc::new(inner), budget }
    }
}

impl<V: Verifier + 'static> Verifier for DeadlineVerifier<V> {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        let (tx, rx) = mpsc::channel();
        let inner = Arc::clone(&self.inner);
        let program = program.clone();
        let start = Instant::now();
        std::thread::spawn(move || {
            let _ = tx.send(inner.verify(&program));
        });
        match rx.recv_timeout(self.budget) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let mut r = VerificationResult::with_status(VerificationStatus::Timeout);
                r.wall_time = start.elapsed().as_secs_f64();
                Ok(r)
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(VerifierError::Tool("verifier worker panicked".into())),
        }
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

//! Candidate generation and the verify loop.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::llm::{ChatModel, ChatRequest, Embedder, LlmError, UsageStats};
use crate::localize::{prompt_hash, LocalizationResult, RepairTask};
use crate::prompt::{first_json_array, render_examples, render_template, PromptError};
use crate::retrieve::{ExampleDb, ExampleEntry, RetrievalConfig, RetrievalQuery, RetrieveError};
use crate::source::{insert_lines, InsertEdit, InsertionPoint, MethodSpan, SourceError, SourceProgram};
use crate::verifier::{VerificationResult, VerificationStatus, Verifier};

pub const MARKER: &str = "/*<Assertion is Missing Here>*/";

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("could not parse candidate assertions from the model reply: {0:?}")]
    ReplyUnparseable(String),
    #[error("expected candidates for {expected} position(s), got {got}")]
    PositionCountMismatch { expected: usize, got: usize },
    #[error("the prompt needs at least one marked position")]
    NoPositions,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
}

/// Inserts a marker line at each point, indented like the line it displaces.
pub fn mark_positions(program: &SourceProgram, points: &[InsertionPoint]) -> Result<SourceProgram, SourceError> {
    let edits: Vec<InsertEdit> = points.iter().map(|p| InsertEdit::inherit(p.line, MARKER)).collect();
    insert_lines(program, &edits)
}

pub fn strip_markers(program: &SourceProgram) -> SourceProgram {
    let lines = program.lines().iter().filter(|l| l.trim() != MARKER).cloned().collect();
    SourceProgram::from_lines(program.path(), lines)
}

/// The declaration as it appears in the prompt, markers included.
pub fn marked_method_text(program: &SourceProgram, method: &MethodSpan, points: &[InsertionPoint]) -> Result<String, SourceError> {
    let marked = mark_positions(program, points)?;
    let shift = points.iter().filter(|p| p.line <= method.body_close_line).count();
    let before = points.iter().filter(|p| p.line <= method.sig_start_line).count();
    Ok(marked.text_of(method.sig_start_line + before, method.body_close_line + shift))
}

/// Headers of every other declaration in the file, bodies dropped.
pub fn declaration_context(program: &SourceProgram, method: &MethodSpan) -> String {
    let Ok(spans) = program.method_spans() else {
        return String::new();
    };
    let mut out = Vec::new();
    for s in spans.iter().filter(|s| s.sig_start_line != method.sig_start_line) {
        let mut header: Vec<String> = program.lines()[s.sig_start_line..=s.body_open_line].to_vec();
        if let Some(last) = header.last_mut() {
            if let Some(pos) = last.rfind('{') {
                last.truncate(pos);
            }
            *last = last.trim_end().to_string();
        }
        while header.last().is_some_and(|l| l.trim().is_empty()) {
            header.pop();
        }
        out.push(header.join("\n"));
    }
    out.join("\n")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttemptOrder {
    /// Candidate i at the first point with candidate i at the second, then each alone.
    #[default]
    IndexAligned,
    /// Every pairing, then every single.
    CrossProduct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub template: String,
    pub include_context: bool,
    pub attempt_order: AttemptOrder,
    pub temperature: Option<f64>,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            template: crate::prompt::DEFAULT_INFER_TEMPLATE.to_string(),
            include_context: true,
            attempt_order: AttemptOrder::IndexAligned,
            temperature: None,
        }
    }
}

pub fn build_inference_prompt(
    task: &RepairTask,
    points: &[InsertionPoint],
    examples: &[ExampleEntry],
    options: &InferOptions,
) -> Result<String, InferError> {
    if points.is_empty() {
        return Err(InferError::NoPositions);
    }
    let marked = marked_method_text(&task.program, &task.method, points)?;
    let context = if options.include_context { declaration_context(&task.program, &task.method) } else { String::new() };
    let context = if context.trim().is_empty() { String::new() } else { format!("\nContext:\n{context}\n") };
    let examples = render_examples(examples);
    let error = task.filtered_error();
    Ok(render_template(
        &options.template,
        &[("marked_method", &marked), ("error_message", &error), ("examples", &examples), ("context", &context)],
    )?)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub per_position: Vec<Vec<String>>,
}

impl CandidateSet {
    pub fn total(&self) -> usize {
        self.per_position.iter().map(Vec::len).sum()
    }
}

/// Trims, unescapes leftover `\"`, and terminates with `;` unless the text
/// already ends a statement or a block.
pub fn normalize_candidate(raw: &str) -> Option<String> {
    // Replies sometimes escape quotes more than once.
    let mut t = raw.to_string();
    while t.contains("\\\"") {
        t = t.replace("\\\"", "\"");
    }
    let t = t.trim();
    if t.is_empty() {
        return None;
    }
    if t.ends_with(';') || t.ends_with('}') {
        Some(t.to_string())
    } else {
        Some(format!("{t};"))
    }
}

fn string_list(v: &serde_json::Value) -> Option<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for item in v.as_array()? {
        let s = normalize_candidate(item.as_str()?);
        if let Some(s) = s {
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    Some(out)
}

pub fn parse_candidates(reply: &str, expected_positions: usize) -> Result<CandidateSet, InferError> {
    let unparseable = || InferError::ReplyUnparseable(reply.to_string());
    let outer = first_json_array(reply).ok_or_else(unparseable)?;
    let items = outer.as_array().ok_or_else(unparseable)?;
    let flat = items.iter().all(|x| x.is_string());
    let per_position = if flat {
        if expected_positions != 1 {
            return Err(InferError::PositionCountMismatch { expected: expected_positions, got: 1 });
        }
        vec![string_list(&outer).ok_or_else(unparseable)?]
    } else {
        items.iter().map(string_list).collect::<Option<Vec<_>>>().ok_or_else(unparseable)?
    };
    if per_position.len() != expected_positions {
        return Err(InferError::PositionCountMismatch { expected: expected_positions, got: per_position.len() });
    }
    if per_position.iter().all(Vec::is_empty) {
        return Err(unparseable());
    }
    Ok(CandidateSet { per_position })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAttempt {
    pub index: usize,
    /// One slot per point; `None` leaves that point blank.
    pub assignment: Vec<(InsertionPoint, Option<String>)>,
}

impl RepairAttempt {
    pub fn inserted(&self) -> impl Iterator<Item = (&InsertionPoint, &str)> {
        self.assignment.iter().filter_map(|(p, c)| c.as_deref().map(|c| (p, c)))
    }
}

pub fn enumerate_attempts(points: &[InsertionPoint], candidates: &CandidateSet, order: AttemptOrder) -> Vec<RepairAttempt> {
    let mut slots: Vec<Vec<Option<String>>> = Vec::new();
    let c = &candidates.per_position;
    match (points.len(), order) {
        (0, _) => {}
        (1, _) => {
            for x in c.first().into_iter().flatten() {
                slots.push(vec![Some(x.clone())]);
            }
        }
        (_, AttemptOrder::IndexAligned) => {
            let (a, b) = (&c[0], &c[1]);
            for i in 0..a.len().max(b.len()) {
                match (a.get(i), b.get(i)) {
                    (Some(x), Some(y)) => {
                        slots.push(vec![Some(x.clone()), Some(y.clone())]);
                        slots.push(vec![Some(x.clone()), None]);
                        slots.push(vec![None, Some(y.clone())]);
                    }
                    (Some(x), None) => slots.push(vec![Some(x.clone()), None]),
                    (None, Some(y)) => slots.push(vec![None, Some(y.clone())]),
                    (None, None) => {}
                }
            }
        }
        (_, AttemptOrder::CrossProduct) => {
            let (a, b) = (&c[0], &c[1]);
            for x in a {
                for y in b {
                    slots.push(vec![Some(x.clone()), Some(y.clone())]);
                }
            }
            slots.extend(a.iter().map(|x| vec![Some(x.clone()), None]));
            slots.extend(b.iter().map(|y| vec![None, Some(y.clone())]));
        }
    }
    let mut seen = std::collections::HashSet::new();
    slots.retain(|s| seen.insert(s.clone()));
    slots
        .into_iter()
        .enumerate()
        .map(|(index, s)| RepairAttempt { index, assignment: points.iter().copied().zip(s).collect() })
        .collect()
}

/// Inserts the non-blank slots, indentation inherited from the displaced line.
pub fn apply_attempt(program: &SourceProgram, attempt: &RepairAttempt) -> Result<SourceProgram, SourceError> {
    let edits: Vec<InsertEdit> = attempt.inserted().map(|(p, c)| InsertEdit::inherit(p.line, c)).collect();
    insert_lines(program, &edits)
}

/// Verification results keyed by program digest, shared within a run.
#[derive(Default)]
pub struct VerifyMemo(Mutex<HashMap<String, VerificationResult>>);

impl VerifyMemo {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the result and whether the backend was actually called.
    pub fn verify(&self, verifier: &dyn Verifier, program: &SourceProgram) -> Result<(VerificationResult, bool), crate::verifier::VerifierError> {
        let key = program.digest();
        if let Some(r) = self.0.lock().unwrap().get(&key) {
            return Ok((r.clone(), false));
        }
        let r = verifier.verify(program)?;
        self.0.lock().unwrap().insert(key, r.clone());
        Ok((r, true))
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum RepairStatus {
    VerifiedWith(RepairAttempt),
    Exhausted,
    Error(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub assignment: Vec<Option<String>>,
    pub verdict: VerificationStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub status: RepairStatus,
    pub attempts_tried: usize,
    pub verifier_calls: usize,
    pub usage: UsageStats,
    pub prompt_hash: Option<String>,
    pub candidates: CandidateSet,
    pub transcript: Vec<AttemptLog>,
    #[serde(skip)]
    pub repaired_program: Option<SourceProgram>,
}

impl RepairOutcome {
    fn empty(status: RepairStatus) -> Self {
        Self {
            status,
            attempts_tried: 0,
            verifier_calls: 0,
            usage: UsageStats::default(),
            prompt_hash: None,
            candidates: CandidateSet::default(),
            transcript: Vec::new(),
            repaired_program: None,
        }
    }

    pub fn is_verified(&self) -> bool {
        matches!(self.status, RepairStatus::VerifiedWith(_))
    }

    /// Run-log form of the outcome.
    pub fn run_log(&self, instance_id: &str, strategy: &str) -> serde_json::Value {
        serde_json::json!({
            "instance_id": instance_id,
            "strategy": strategy,
            "prompt_hash": self.prompt_hash,
            "attempts": self.transcript,
            "outcome": self.status,
        })
    }
}

const INFER_REMINDER: &str = "\n\nYour previous answer could not be used. Reply with only the JSON described above, one array of assertions per marked position.";

/// Asks for candidates, re-prompting once on an unusable reply.
pub fn request_candidates(
    prompt: &str,
    expected: usize,
    llm: &dyn ChatModel,
    temperature: Option<f64>,
) -> (Result<CandidateSet, InferError>, UsageStats) {
    let mut usage = UsageStats::default();
    let mut last = None;
    for round in 0..2 {
        let text = if round == 0 { prompt.to_string() } else { format!("{prompt}{INFER_REMINDER}") };
        match llm.complete(&ChatRequest::new(text).with_temperature(temperature)) {
            Ok(c) => {
                usage += c.usage;
                match parse_candidates(&c.reply, expected) {
                    Ok(set) => return (Ok(set), usage),
                    Err(e) => last = Some(e),
                }
            }
            Err(e) => return (Err(e.into()), usage),
        }
    }
    (Err(last.expect("two rounds ran")), usage)
}

/// Marks, prompts once, then verifies attempts in order until one verifies.
pub fn repair(
    task: &RepairTask,
    localization: &LocalizationResult,
    examples: &[ExampleEntry],
    llm: &dyn ChatModel,
    verifier: &dyn Verifier,
    memo: &VerifyMemo,
    options: &InferOptions,
) -> RepairOutcome {
    let points: Vec<InsertionPoint> = localization.points.iter().take(2).copied().collect();
    if points.is_empty() {
        return RepairOutcome::empty(RepairStatus::Exhausted);
    }
    let prompt = match build_inference_prompt(task, &points, examples, options) {
        Ok(p) => p,
        Err(e) => return RepairOutcome::empty(RepairStatus::Error(format!("{}: {e}", task.id))),
    };
    let mut out = RepairOutcome::empty(RepairStatus::Exhausted);
    out.prompt_hash = Some(prompt_hash(&prompt));
    let (candidates, usage) = request_candidates(&prompt, points.len(), llm, options.temperature);
    out.usage = usage;
    let candidates = match candidates {
        Ok(c) => c,
        Err(e) => {
            out.status = RepairStatus::Error(format!("{}: {e}", task.id));
            return out;
        }
    };
    for attempt in enumerate_attempts(&points, &candidates, options.attempt_order) {
        let program = match apply_attempt(&task.program, &attempt) {
            Ok(p) => p,
            Err(e) => {
                out.status = RepairStatus::Error(format!("{}: {e}", task.id));
                break;
            }
        };
        out.attempts_tried += 1;
        let (result, fresh) = match memo.verify(verifier, &program) {
            Ok(r) => r,
            Err(e) => {
                out.status = RepairStatus::Error(format!("{}: {e}", task.id));
                break;
            }
        };
        out.verifier_calls += fresh as usize;
        out.transcript.push(AttemptLog {
            assignment: attempt.assignment.iter().map(|(_, c)| c.clone()).collect(),
            verdict: result.status,
        });
        if result.is_verified() {
            out.status = RepairStatus::VerifiedWith(attempt);
            out.repaired_program = Some(program);
            break;
        }
    }
    out.candidates = candidates;
    out
}

/// Example selection for a task from a prebuilt database.
pub struct Retriever<'a> {
    pub db: &'a ExampleDb,
    pub config: RetrievalConfig,
    pub embedder: Option<&'a dyn Embedder>,
}

impl<'a> Retriever<'a> {
    pub fn query_for(&self, task: &RepairTask) -> Result<RetrievalQuery, RetrieveError> {
        let query = RetrievalQuery {
            id: task.id.clone(),
            origin: task.origin.clone(),
            method_text: task.method_text(),
            filtered_error_text: task.filtered_error(),
            code_embedding: None,
            error_embedding: None,
        };
        if self.config.strategy.needs_embeddings() {
            let embedder = self.embedder.ok_or(RetrieveError::MissingEmbedding("code"))?;
            query.embed(embedder)
        } else {
            Ok(query)
        }
    }

    pub fn examples_for(&self, task: &RepairTask) -> Result<Vec<ExampleEntry>, RetrieveError> {
        let query = self.query_for(task)?;
        Ok(self.db.select(&query, &self.config)?.into_iter().map(|s| s.entry).collect())
    }
}

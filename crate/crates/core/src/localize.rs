//! Where should the missing assertion go: diagnostic heuristics, LLM
//! prompting, ground truth, and unions of these.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::sha256_hex;
use crate::llm::{ChatModel, ChatRequest, LlmError, UsageStats};
use crate::mutator::BenchmarkInstance;
use crate::prompt::{first_json_array, render_examples, render_template, PromptError};
use crate::retrieve::{filter_error_message, ExampleEntry, Origin};
use crate::source::{number_lines, InsertionPoint, MethodSpan, PointSource, SourceError, SourceProgram};
use crate::verifier::{Diagnostic, ErrorKind, VerificationResult};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalizationStrategy {
    LaurelFl,
    LaurelFlPlus,
    LlmFl,
    LlmExFl,
    Hybrid(Vec<LocalizationStrategy>),
    GroundTruth,
}

impl LocalizationStrategy {
    /// The default union: example-augmented LLM localization and the
    /// extended heuristic.
    pub fn default_hybrid() -> Self {
        LocalizationStrategy::Hybrid(vec![LocalizationStrategy::LlmExFl, LocalizationStrategy::LaurelFlPlus])
    }

    pub fn hybrid(members: Vec<LocalizationStrategy>) -> Result<Self, LocalizeError> {
        let mut distinct = members.clone();
        distinct.dedup();
        if distinct.len() < 2 || members.iter().any(|m| matches!(m, LocalizationStrategy::Hybrid(_))) {
            return Err(LocalizeError::InvalidHybrid);
        }
        Ok(LocalizationStrategy::Hybrid(members))
    }

    pub fn members(&self) -> Vec<LocalizationStrategy> {
        match self {
            LocalizationStrategy::Hybrid(m) => m.clone(),
            other => vec![other.clone()],
        }
    }

    pub fn uses_llm(&self) -> bool {
        match self {
            LocalizationStrategy::LlmFl | LocalizationStrategy::LlmExFl => true,
            LocalizationStrategy::Hybrid(m) => m.iter().any(|s| s.uses_llm()),
            _ => false,
        }
    }

    pub fn uses_examples(&self) -> bool {
        match self {
            LocalizationStrategy::LlmExFl => true,
            LocalizationStrategy::Hybrid(m) => m.iter().any(|s| s.uses_examples()),
            _ => false,
        }
    }

    /// Parses `laurel`, `laurel+`, `llm`, `llm-ex`, `ground-truth`, or a
    /// `+`-free list joined by `/` for a hybrid, e.g. `llm-ex/laurel+`.
    pub fn parse(text: &str) -> Result<Self, LocalizeError> {
        let one = |t: &str| match t.trim().to_ascii_lowercase().as_str() {
            "laurel" | "laurel_fl" | "laurelfl" => Ok(LocalizationStrategy::LaurelFl),
            "laurel+" | "laurel_fl+" | "laurelflplus" => Ok(LocalizationStrategy::LaurelFlPlus),
            "llm" | "llm_fl" | "llmfl" => Ok(LocalizationStrategy::LlmFl),
            "llm-ex" | "llmex" | "llmex_fl" | "llmexfl" => Ok(LocalizationStrategy::LlmExFl),
            "ground-truth" | "groundtruth" | "gt" => Ok(LocalizationStrategy::GroundTruth),
            other => Err(LocalizeError::UnknownStrategy(other.to_string())),
        };
        if text.contains('/') {
            Self::hybrid(text.split('/').map(one).collect::<Result<_, _>>()?)
        } else if text.trim().eq_ignore_ascii_case("hybrid") {
            Ok(Self::default_hybrid())
        } else {
            one(text)
        }
    }
}

impl fmt::Display for LocalizationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalizationStrategy::LaurelFl => write!(f, "Laurel_fl"),
            LocalizationStrategy::LaurelFlPlus => write!(f, "Laurel_fl+"),
            LocalizationStrategy::LlmFl => write!(f, "Llm_fl"),
            LocalizationStrategy::LlmExFl => write!(f, "LlmEx_fl"),
            LocalizationStrategy::GroundTruth => write!(f, "GroundTruth"),
            LocalizationStrategy::Hybrid(m) => {
                let names: Vec<String> = m.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", names.join("/"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    OutsideBody,
    Duplicate,
    OverCap,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    /// At most two points, deduplicated and sorted; empty means no position.
    pub points: Vec<InsertionPoint>,
    pub strategy: LocalizationStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_llm_reply: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<(i64, RejectReason)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub usage: UsageStats,
}

impl LocalizationResult {
    pub fn new(strategy: LocalizationStrategy, points: Vec<InsertionPoint>) -> Self {
        Self { points, strategy, raw_llm_reply: None, rejected: Vec::new(), error: None, usage: UsageStats::default() }
    }

    pub fn no_pos(strategy: LocalizationStrategy) -> Self {
        Self::new(strategy, Vec::new())
    }

    pub fn is_no_pos(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lines(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.line).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LocalizeError {
    #[error("could not parse a line list from the model reply: {0:?}")]
    LlmReplyUnparseable(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("a hybrid strategy needs at least two distinct non-hybrid members")]
    InvalidHybrid,
    #[error("unknown localization strategy {0:?}")]
    UnknownStrategy(String),
    #[error("ground-truth localization needs a benchmark instance")]
    NoGroundTruth,
    #[error("no declaration of {0} contains a verifier error")]
    NoFailingMethod(String),
}

/// A failing declaration to repair, from a benchmark instance or a user file.
#[derive(Clone, Debug, PartialEq)]
pub struct RepairTask {
    pub id: String,
    pub program: SourceProgram,
    pub method: MethodSpan,
    pub diagnostics: Vec<Diagnostic>,
    pub error_output: String,
    pub origin: Origin,
    /// Ground-truth insertion lines, when known.
    pub ground_truth: Option<Vec<usize>>,
}

impl RepairTask {
    pub fn from_instance(instance: &BenchmarkInstance) -> Self {
        let mut removed: Vec<_> = instance.removed.iter().collect();
        removed.sort_by_key(|r| r.start_line);
        Self {
            id: instance.id.clone(),
            program: instance.failing_program.clone(),
            method: instance.method.clone(),
            diagnostics: instance.failure_diagnostics.clone(),
            error_output: instance.error_text(),
            origin: instance.origin_key(),
            ground_truth: Some(removed.iter().map(|r| r.restore_line).collect()),
        }
    }

    /// Tasks for every declaration that holds an error diagnostic, in source
    /// order. Errors outside every declaration go to the first declaration
    /// when nothing else matches.
    pub fn from_verification(program: &SourceProgram, result: &VerificationResult) -> Result<Vec<Self>, LocalizeError> {
        let spans = program.method_spans()?;
        let errors: Vec<&Diagnostic> = result.errors().collect();
        let mut tasks = Vec::new();
        for span in &spans {
            if errors.iter().any(|d| span.contains_line(d.line_index())) {
                tasks.push(span.clone());
            }
        }
        if tasks.is_empty() {
            return Err(LocalizeError::NoFailingMethod(program.path().to_string()));
        }
        Ok(tasks
            .into_iter()
            .map(|span| Self {
                id: format!("{}/{}", program.path(), span.name),
                origin: (program.path().to_string(), span.name.clone()),
                program: program.clone(),
                method: span,
                diagnostics: result.diagnostics.clone(),
                error_output: result.error_text(),
                ground_truth: None,
            })
            .collect())
    }

    pub fn method_text(&self) -> String {
        self.program.text_of(self.method.sig_start_line, self.method.body_close_line)
    }

    pub fn filtered_error(&self) -> String {
        filter_error_message(&self.error_output)
    }

    /// First error in source order inside the declaration, else the first error.
    pub fn primary_diagnostic(&self) -> Option<&Diagnostic> {
        let mut errors: Vec<&Diagnostic> = self.diagnostics.iter().filter(|d| d.is_error()).collect();
        errors.sort_by_key(|d| (d.line, d.column));
        errors
            .iter()
            .find(|d| self.method.contains_line(d.line_index()))
            .or(errors.first())
            .copied()
    }
}

/// Keeps points inside `(body_open, body_close]`, drops duplicates, caps at
/// two in the given order, and sorts what is kept.
pub fn validate_points(lines: &[i64], method: &MethodSpan, source: PointSource) -> (Vec<InsertionPoint>, Vec<(i64, RejectReason)>) {
    let mut accepted: Vec<InsertionPoint> = Vec::new();
    let mut rejected = Vec::new();
    for &l in lines {
        if l < 0 {
            rejected.push((l, RejectReason::Negative));
        } else if !method.accepts_insertion(l as usize) {
            rejected.push((l, RejectReason::OutsideBody));
        } else if accepted.iter().any(|p| p.line == l as usize) {
            rejected.push((l, RejectReason::Duplicate));
        } else if accepted.len() == 2 {
            rejected.push((l, RejectReason::OverCap));
        } else {
            accepted.push(InsertionPoint::new(l as usize, source));
        }
    }
    accepted.sort();
    (accepted, rejected)
}

/// Insertion row of the heuristic table for a kind: `B` inserts before the
/// reported line, `E` at the end of the enclosing block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeuristicRule {
    Before,
    EndOfMethod,
    EndOfLoop,
}

/// The heuristic table; `None` means the kind is unsupported at this level.
pub fn heuristic_rule(kind: ErrorKind, extended: bool) -> Option<HeuristicRule> {
    use ErrorKind::*;
    match kind {
        Assertion | Related | LHSValue | Calc | Constructed => Some(HeuristicRule::Before),
        Postcondition | AssertBy | Forall => Some(HeuristicRule::EndOfMethod),
        LoopInvariants if extended => Some(HeuristicRule::EndOfLoop),
        TimeOut | SubsetConstraints | ElementNotInDomain if extended => Some(HeuristicRule::Before),
        _ => None,
    }
}

pub fn heuristic_locate(diag: &Diagnostic, method: &MethodSpan, program: &SourceProgram, extended: bool) -> LocalizationResult {
    let strategy = if extended { LocalizationStrategy::LaurelFlPlus } else { LocalizationStrategy::LaurelFl };
    let line = match heuristic_rule(diag.kind, extended) {
        None => return LocalizationResult::no_pos(strategy),
        Some(HeuristicRule::Before) => diag.line_index(),
        Some(HeuristicRule::EndOfMethod) => method.body_close_line,
        Some(HeuristicRule::EndOfLoop) => program
            .block_close_after(diag.line_index())
            .filter(|&l| method.accepts_insertion(l))
            .unwrap_or(method.body_close_line),
    };
    let (points, rejected) = validate_points(&[line as i64], method, PointSource::Heuristic);
    LocalizationResult { rejected, ..LocalizationResult::new(strategy, points) }
}

pub fn ground_truth_locate(task: &RepairTask) -> Result<LocalizationResult, LocalizeError> {
    let lines = task.ground_truth.as_ref().ok_or(LocalizeError::NoGroundTruth)?;
    let mut sorted = lines.clone();
    sorted.sort();
    sorted.dedup();
    let points = sorted.into_iter().take(2).map(|l| InsertionPoint::new(l, PointSource::GroundTruth)).collect();
    Ok(LocalizationResult::new(LocalizationStrategy::GroundTruth, points))
}

pub fn build_localization_prompt(task: &RepairTask, examples: &[ExampleEntry], template: &str) -> Result<String, PromptError> {
    let numbered = number_lines(&task.program, &task.method);
    let examples = render_examples(examples);
    let error = task.filtered_error();
    render_template(template, &[("numbered_method", &numbered), ("error_message", &error), ("examples", &examples)])
}

const LOCALIZE_REMINDER: &str =
    "\n\nYour previous answer could not be read. Reply with only a JSON list of one or two line numbers, e.g. [3] or [3, 4].";

/// Line numbers from a localization reply.
pub fn parse_line_list(reply: &str) -> Option<Vec<i64>> {
    let v = first_json_array(reply)?;
    let items = v.as_array()?;
    let nums: Option<Vec<i64>> = items
        .iter()
        .map(|x| x.as_i64().or_else(|| x.as_str().and_then(|s| s.trim().parse().ok())))
        .collect();
    nums.filter(|n| !n.is_empty())
}

/// Prompt numbering counts from the signature, and "after line N" means the
/// new line becomes line N + 1.
pub fn prompt_line_to_file_line(method: &MethodSpan, n: i64) -> i64 {
    method.sig_start_line as i64 + n + 1
}

#[derive(Clone, Debug)]
pub struct LlmLocalizeOptions<'a> {
    pub template: &'a str,
    pub temperature: Option<f64>,
}

pub fn llm_locate(
    task: &RepairTask,
    examples: &[ExampleEntry],
    llm: &dyn ChatModel,
    options: &LlmLocalizeOptions<'_>,
) -> Result<LocalizationResult, LocalizeError> {
    let strategy = if examples.is_empty() { LocalizationStrategy::LlmFl } else { LocalizationStrategy::LlmExFl };
    let prompt = build_localization_prompt(task, examples, options.template)?;
    let mut usage = UsageStats::default();
    let mut last_reply = String::new();
    for attempt in 0..2 {
        let text = if attempt == 0 { prompt.clone() } else { format!("{prompt}{LOCALIZE_REMINDER}") };
        let c = llm.complete(&ChatRequest::new(text).with_temperature(options.temperature))?;
        usage += c.usage;
        if let Some(nums) = parse_line_list(&c.reply) {
            let lines: Vec<i64> = nums.iter().map(|&n| prompt_line_to_file_line(&task.method, n)).collect();
            let (points, rejected) = validate_points(&lines, &task.method, PointSource::Llm);
            return Ok(LocalizationResult {
                points,
                strategy,
                raw_llm_reply: Some(c.reply),
                rejected,
                error: None,
                usage,
            });
        }
        last_reply = c.reply;
    }
    Err(LocalizeError::LlmReplyUnparseable(last_reply))
}

/// Everything localization may need beyond the task.
pub struct LocalizeContext<'a> {
    pub llm: Option<&'a dyn ChatModel>,
    pub examples: &'a [ExampleEntry],
    pub template: &'a str,
    pub temperature: Option<f64>,
}

/// Runs one strategy, or every member of a hybrid. Member failures are
/// recorded on that member's result and never abort the others.
pub fn locate(task: &RepairTask, strategy: &LocalizationStrategy, ctx: &LocalizeContext<'_>) -> Vec<LocalizationResult> {
    strategy.members().iter().map(|m| locate_one(task, m, ctx)).collect()
}

fn locate_one(task: &RepairTask, strategy: &LocalizationStrategy, ctx: &LocalizeContext<'_>) -> LocalizationResult {
    let failed = |e: String| LocalizationResult { error: Some(e), ..LocalizationResult::no_pos(strategy.clone()) };
    match strategy {
        LocalizationStrategy::LaurelFl | LocalizationStrategy::LaurelFlPlus => {
            let extended = *strategy == LocalizationStrategy::LaurelFlPlus;
            match task.primary_diagnostic() {
                Some(d) => heuristic_locate(d, &task.method, &task.program, extended),
                None => LocalizationResult::no_pos(strategy.clone()),
            }
        }
        LocalizationStrategy::LlmFl | LocalizationStrategy::LlmExFl => {
            let Some(llm) = ctx.llm else {
                return failed("no language model configured".into());
            };
            let examples = if *strategy == LocalizationStrategy::LlmExFl { ctx.examples } else { &[] };
            let opts = LlmLocalizeOptions { template: ctx.template, temperature: ctx.temperature };
            match llm_locate(task, examples, llm, &opts) {
                Ok(r) => LocalizationResult { strategy: strategy.clone(), ..r },
                Err(e) => failed(e.to_string()),
            }
        }
        LocalizationStrategy::GroundTruth => ground_truth_locate(task).unwrap_or_else(|e| failed(e.to_string())),
        LocalizationStrategy::Hybrid(_) => failed(LocalizeError::InvalidHybrid.to_string()),
    }
}

/// Stable identity of a prompt for transcripts.
pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(&[prompt])[..16].to_string()
}

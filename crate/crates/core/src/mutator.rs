//! Benchmark construction: remove assertions from verified programs and keep
//! the mutants that fail.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::source::{
    extract_assertions, insert_lines, normalize_ws, remove_assertions, AssertionRecord, InsertEdit, MethodKind,
    MethodSpan, SourceError, SourceProgram,
};
use crate::verifier::{Diagnostic, VerificationStatus, Verifier, VerifierError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceCategory {
    WO1,
    WO2,
    WOALL,
}

impl InstanceCategory {
    pub const ALL: [InstanceCategory; 3] = [InstanceCategory::WO1, InstanceCategory::WO2, InstanceCategory::WOALL];

    pub fn label(self) -> &'static str {
        match self {
            InstanceCategory::WO1 => "w/o-1",
            InstanceCategory::WO2 => "w/o-2",
            InstanceCategory::WOALL => "w/o-all",
        }
    }
}

impl fmt::Display for InstanceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AssertionType {
    Index,
    Test,
    Multi,
    Other,
}

impl AssertionType {
    pub const ALL: [AssertionType; 4] = [AssertionType::Index, AssertionType::Test, AssertionType::Multi, AssertionType::Other];

    pub fn label(self) -> &'static str {
        match self {
            AssertionType::Index => "INDEX",
            AssertionType::Test => "TEST",
            AssertionType::Multi => "MULTI",
            AssertionType::Other => "OTHER",
        }
    }
}

/// Outcome of placing the ground-truth assertion at a given line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PositionVerdict {
    Valid,
    Partial,
    Invalid,
    NoPos,
}

impl PositionVerdict {
    pub fn from_status(status: VerificationStatus) -> Option<Self> {
        match status {
            VerificationStatus::Verified => Some(PositionVerdict::Valid),
            VerificationStatus::Failed | VerificationStatus::Timeout => Some(PositionVerdict::Partial),
            VerificationStatus::SyntaxError => Some(PositionVerdict::Invalid),
            VerificationStatus::ToolError => None,
        }
    }
}

/// Subdivision of pair instances by membership of both halves in w/o-1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Wo2Tag {
    #[serde(rename = "both-wo1")]
    BothWo1,
    #[serde(rename = "none-wo1")]
    NoneWo1,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedAssertion {
    pub text: String,
    /// Lines in the original, verified program.
    pub start_line: usize,
    pub end_line: usize,
    #[serde(rename = "type")]
    pub assertion_type: AssertionType,
    /// Line of the failing program where re-inserting the text restores the original.
    pub restore_line: usize,
}

impl RemovedAssertion {
    pub fn line_count(&self) -> usize {
        self.end_line - self.start_line + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodLines {
    pub signature: usize,
    pub body_open: usize,
    pub body_close: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub name: String,
    pub kind: MethodKind,
    pub lines: MethodLines,
}

/// Line-delimited dataset record; see `docs/dataset.md`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub origin: String,
    pub category: InstanceCategory,
    pub method: MethodRecord,
    pub removed: Vec<RemovedAssertion>,
    pub program_text: String,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default)]
    pub error_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_verdicts: Option<BTreeMap<usize, PositionVerdict>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wo2_tag: Option<Wo2Tag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "DatasetRecord", from = "DatasetRecord")]
pub struct BenchmarkInstance {
    pub id: String,
    pub origin: String,
    pub category: InstanceCategory,
    pub failing_program: SourceProgram,
    /// Removed assertions in source order.
    pub removed: Vec<RemovedAssertion>,
    /// Enclosing declaration, in failing-program coordinates.
    pub method: MethodSpan,
    pub failure_diagnostics: Vec<Diagnostic>,
    pub failure_output: String,
    pub position_verdicts: Option<BTreeMap<usize, PositionVerdict>>,
    pub wo2_tag: Option<Wo2Tag>,
}

impl From<BenchmarkInstance> for DatasetRecord {
    fn from(i: BenchmarkInstance) -> Self {
        DatasetRecord {
            id: i.id,
            origin: i.origin,
            category: i.category,
            method: MethodRecord {
                name: i.method.name,
                kind: i.method.kind,
                lines: MethodLines {
                    signature: i.method.sig_start_line,
                    body_open: i.method.body_open_line,
                    body_close: i.method.body_close_line,
                },
            },
            removed: i.removed,
            program_text: i.failing_program.to_text(),
            diagnostics: i.failure_diagnostics,
            error_output: i.failure_output,
            position_verdicts: i.position_verdicts,
            wo2_tag: i.wo2_tag,
        }
    }
}

impl From<DatasetRecord> for BenchmarkInstance {
    fn from(r: DatasetRecord) -> Self {
        BenchmarkInstance {
            failing_program: SourceProgram::from_text(r.origin.clone(), &r.program_text),
            id: r.id,
            origin: r.origin,
            category: r.category,
            method: MethodSpan {
                name: r.method.name,
                kind: r.method.kind,
                sig_start_line: r.method.lines.signature,
                body_open_line: r.method.lines.body_open,
                body_close_line: r.method.lines.body_close,
            },
            removed: r.removed,
            failure_diagnostics: r.diagnostics,
            failure_output: r.error_output,
            position_verdicts: r.position_verdicts,
            wo2_tag: r.wo2_tag,
        }
    }
}

impl BenchmarkInstance {
    /// Edits that put every removed assertion back where it was.
    pub fn ground_truth_edits(&self) -> Vec<InsertEdit> {
        let mut sorted: Vec<&RemovedAssertion> = self.removed.iter().collect();
        sorted.sort_by_key(|r| r.start_line);
        sorted.iter().map(|r| InsertEdit::verbatim(r.restore_line, r.text.clone())).collect()
    }

    pub fn restored_program(&self) -> Result<SourceProgram, SourceError> {
        insert_lines(&self.failing_program, &self.ground_truth_edits())
    }

    /// The failing declaration's text, signature through closing brace.
    pub fn method_text(&self) -> String {
        self.failing_program.text_of(self.method.sig_start_line, self.method.body_close_line)
    }

    /// Raw verifier output for the failing program, or rendered diagnostics.
    pub fn error_text(&self) -> String {
        if self.failure_output.trim().is_empty() {
            crate::verifier::render_diagnostics(&self.failure_diagnostics)
        } else {
            self.failure_output.clone()
        }
    }

    pub fn assertion_keys(&self) -> Vec<String> {
        self.removed.iter().map(|r| assertion_key(&self.origin, &self.method.name, r.start_line)).collect()
    }

    pub fn primary_type(&self) -> AssertionType {
        self.removed.first().map(|r| r.assertion_type).unwrap_or(AssertionType::Other)
    }

    /// (origin file, declaration name), the unit of leakage exclusion.
    pub fn origin_key(&self) -> (String, String) {
        (self.origin.clone(), self.method.name.clone())
    }
}

/// Stable identity of an assertion in the corpus.
pub fn assertion_key(origin: &str, method: &str, start_line: usize) -> String {
    format!("{origin}::{method}::{start_line}")
}

#[derive(Debug, thiserror::Error)]
pub enum MutatorError {
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("verifier tool error on {id}: {message}")]
    Tool { id: String, message: String },
    #[error("restoring the removed assertions of {0} does not verify")]
    RestoreMismatch(String),
    #[error("position verdicts apply to w/o-1 instances only ({0})")]
    NotWo1(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
}

static BY_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bby\s*\{").unwrap());
static INDEXING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z0-9_')\]]\[").unwrap());
static CARDINALITY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\|[^|&=<>]+\|").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^-?\s*\d+(\.\d+)?$").unwrap());

/// Taxonomy label with precedence MULTI > TEST > INDEX > OTHER.
pub fn classify_assertion(text: &str, method: &MethodSpan) -> AssertionType {
    let normalized = normalize_ws(text);
    let multi_line = text.trim().lines().count() > 1;
    if multi_line || BY_BLOCK.is_match(&normalized) {
        return AssertionType::Multi;
    }
    if method.name == "Main" || literal_only_comparisons(&normalized) {
        return AssertionType::Test;
    }
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if INDEXING.is_match(&compact) || CARDINALITY.is_match(&compact) {
        return AssertionType::Index;
    }
    AssertionType::Other
}

/// True when every `&&` conjunct compares an expression with a literal.
fn literal_only_comparisons(normalized: &str) -> bool {
    let Some(body) = normalized.trim().strip_prefix("assert") else {
        return false;
    };
    let body = body.trim().trim_end_matches(';').trim();
    if body.is_empty() {
        return false;
    }
    split_top_level(body, "&&").iter().all(|conj| {
        let parts = split_comparison(conj);
        match parts {
            Some((lhs, rhs)) => is_literal(lhs) || is_literal(rhs),
            None => false,
        }
    })
}

fn split_top_level<'a>(text: &'a str, sep: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    i += if bytes[i] == b'\\' { 2 } else { 1 };
                }
            }
            _ if depth == 0 && text[i..].starts_with(sep) => {
                out.push(text[start..i].trim());
                i += sep.len();
                start = i;
                continue;
            }
            _ => {}
        }
        i += 1;
    }
    out.push(text[start..].trim());
    out
}

/// Splits `a OP b` at its single top-level comparison operator.
fn split_comparison(conj: &str) -> Option<(&str, &str)> {
    let bytes = conj.as_bytes();
    let mut depth = 0i32;
    let mut found: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < bytes.len() {
        let rest = &conj[i..];
        match bytes[i] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    i += if bytes[i] == b'\\' { 2 } else { 1 };
                }
            }
            _ if depth == 0 => {
                if rest.starts_with("==>") || rest.starts_with("<==") || rest.starts_with("||") {
                    return None;
                }
                let op = ["==", "!=", "<=", ">="].iter().find(|o| rest.starts_with(**o)).map(|o| o.len()).or(
                    if (bytes[i] == b'<' || bytes[i] == b'>') && !rest.starts_with("<-") {
                        Some(1)
                    } else {
                        None
                    },
                );
                if let Some(len) = op {
                    if found.is_some() {
                        return None;
                    }
                    found = Some((i, len));
                    i += len;
                    continue;
                }
            }
            _ => {}
        }
        i += 1;
    }
    found.map(|(i, len)| (conj[..i].trim(), conj[i + len..].trim()))
}

fn is_literal(expr: &str) -> bool {
    let e = expr.trim();
    if e.is_empty() {
        return false;
    }
    if NUMBER.is_match(e) || e == "true" || e == "false" || e == "null" {
        return true;
    }
    if (e.starts_with('"') && e.ends_with('"') && e.len() >= 2) || (e.starts_with('\'') && e.ends_with('\'') && e.len() >= 3) {
        return true;
    }
    for (open, close) in [('[', ']'), ('{', '}')] {
        if e.starts_with(open) && e.ends_with(close) {
            let inner = e[1..e.len() - 1].trim();
            return inner.is_empty() || split_top_level(inner, ",").iter().all(|x| is_literal(x));
        }
    }
    if let Some(inner) = e.strip_prefix('(').and_then(|x| x.strip_suffix(')')) {
        return is_literal(inner);
    }
    false
}

/// A verified corpus program with its declarations and assertions.
#[derive(Clone, Debug)]
pub struct PreparedProgram {
    pub program: SourceProgram,
    pub methods: Vec<(MethodSpan, Vec<AssertionRecord>)>,
}

/// Verifies the corpus and extracts assertions. Programs that do not verify
/// or do not parse are reported in the second list and skipped.
pub fn prepare_corpus<V: Verifier + ?Sized>(
    corpus: &[SourceProgram],
    verifier: &V,
) -> Result<(Vec<PreparedProgram>, Vec<String>), MutatorError> {
    let mut sorted: Vec<&SourceProgram> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.path().cmp(b.path()));
    let results: Vec<Result<Option<PreparedProgram>, MutatorError>> = sorted
        .par_iter()
        .map(|p| {
            let spans = match p.method_spans() {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("skipping {}: {e}", p.path());
                    return Ok(None);
                }
            };
            let r = verifier.verify(p)?;
            if !r.is_verified() {
                log::warn!("skipping {}: corpus program does not verify ({:?})", p.path(), r.status);
                return Ok(None);
            }
            let mut methods: Vec<(MethodSpan, Vec<AssertionRecord>)> =
                spans.into_iter().map(|s| (extract_assertions(p, &s), s)).map(|(r, s)| (s, r)).collect();
            methods.sort_by(|a, b| a.0.name.cmp(&b.0.name).then(a.0.sig_start_line.cmp(&b.0.sig_start_line)));
            Ok(Some(PreparedProgram { program: (*p).clone(), methods }))
        })
        .collect();
    let mut prepared = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in sorted.iter().zip(results) {
        match r? {
            Some(x) => prepared.push(x),
            None => skipped.push(p.path().to_string()),
        }
    }
    Ok((prepared, skipped))
}

struct Mutant<'a> {
    prepared: &'a PreparedProgram,
    span: &'a MethodSpan,
    records: Vec<&'a AssertionRecord>,
    category: InstanceCategory,
    wo2_tag: Option<Wo2Tag>,
}

fn instance_id(origin: &str, method: &str, category: InstanceCategory, records: &[&AssertionRecord]) -> String {
    let cat = match category {
        InstanceCategory::WO1 => "wo1",
        InstanceCategory::WO2 => "wo2",
        InstanceCategory::WOALL => "woall",
    };
    let lines: Vec<String> = records.iter().map(|r| format!("L{}", r.start_line + 1)).collect();
    if category == InstanceCategory::WOALL {
        format!("{origin}/{method}/{cat}")
    } else {
        format!("{origin}/{method}/{cat}/{}", lines.join("+"))
    }
}

fn materialize<V: Verifier + ?Sized>(mutants: Vec<Mutant<'_>>, verifier: &V) -> Result<Vec<BenchmarkInstance>, MutatorError> {
    let results: Vec<Result<Option<BenchmarkInstance>, MutatorError>> = mutants
        .par_iter()
        .map(|m| {
            let owned: Vec<AssertionRecord> = m.records.iter().map(|r| (*r).clone()).collect();
            let origin = m.prepared.program.path().to_string();
            let id = instance_id(&origin, &m.span.name, m.category, &m.records);
            let (failing, _) = remove_assertions(&m.prepared.program, &owned)?;
            let result = verifier.verify(&failing)?;
            match result.status {
                VerificationStatus::Failed => {}
                VerificationStatus::ToolError => {
                    return Err(MutatorError::Tool { id, message: result.output.chars().take(500).collect() })
                }
                VerificationStatus::Timeout | VerificationStatus::SyntaxError => {
                    log::warn!("skipping {id}: mutant status {:?}", result.status);
                    return Ok(None);
                }
                VerificationStatus::Verified => return Ok(None),
            }
            let method = m
                .span
                .relocate(&failing)
                .ok_or_else(|| MutatorError::Tool { id: id.clone(), message: "declaration lost after removal".into() })?;
            let mut removed = Vec::new();
            let mut shift = 0;
            for r in &m.records {
                removed.push(RemovedAssertion {
                    text: r.text.clone(),
                    start_line: r.start_line,
                    end_line: r.end_line,
                    assertion_type: classify_assertion(&r.text, m.span),
                    restore_line: r.start_line - shift,
                });
                shift += r.line_count();
            }
            let instance = BenchmarkInstance {
                id: id.clone(),
                origin,
                category: m.category,
                failing_program: failing,
                removed,
                method,
                failure_diagnostics: result.diagnostics,
                failure_output: result.output,
                position_verdicts: None,
                wo2_tag: m.wo2_tag,
            };
            let restored = instance.restored_program()?;
            if restored.lines() != m.prepared.program.lines() || !verifier.verify(&restored)?.is_verified() {
                return Err(MutatorError::RestoreMismatch(id));
            }
            Ok(Some(instance))
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(i) = r? {
            out.push(i);
        }
    }
    Ok(out)
}

fn sorted_records(records: &[AssertionRecord]) -> Vec<&AssertionRecord> {
    let mut v: Vec<&AssertionRecord> = records.iter().collect();
    v.sort_by_key(|r| r.start_line);
    v
}

/// Every assertion removed alone; kept when the mutant fails.
pub fn build_wo1<V: Verifier + ?Sized>(prepared: &[PreparedProgram], verifier: &V) -> Result<Vec<BenchmarkInstance>, MutatorError> {
    let mut mutants = Vec::new();
    for p in prepared {
        for (span, records) in &p.methods {
            for r in sorted_records(records) {
                mutants.push(Mutant { prepared: p, span, records: vec![r], category: InstanceCategory::WO1, wo2_tag: None });
            }
        }
    }
    materialize(mutants, verifier)
}

/// The pair retention rule: both members in w/o-1, or neither.
pub fn wo2_retained(a_in_wo1: bool, b_in_wo1: bool) -> Option<Wo2Tag> {
    match (a_in_wo1, b_in_wo1) {
        (true, true) => Some(Wo2Tag::BothWo1),
        (false, false) => Some(Wo2Tag::NoneWo1),
        _ => None,
    }
}

/// Unordered pairs within each declaration, filtered by [`wo2_retained`].
pub fn build_wo2<V: Verifier + ?Sized>(
    prepared: &[PreparedProgram],
    wo1_index: &HashSet<String>,
    verifier: &V,
) -> Result<Vec<BenchmarkInstance>, MutatorError> {
    let mut mutants = Vec::new();
    for p in prepared {
        for (span, records) in &p.methods {
            let recs = sorted_records(records);
            for i in 0..recs.len() {
                for j in i + 1..recs.len() {
                    let member = |r: &AssertionRecord| wo1_index.contains(&assertion_key(p.program.path(), &span.name, r.start_line));
                    if let Some(tag) = wo2_retained(member(recs[i]), member(recs[j])) {
                        mutants.push(Mutant {
                            prepared: p,
                            span,
                            records: vec![recs[i], recs[j]],
                            category: InstanceCategory::WO2,
                            wo2_tag: Some(tag),
                        });
                    }
                }
            }
        }
    }
    materialize(mutants, verifier)
}

pub const WOALL_MIN_REMOVED: usize = 3;

/// All assertions of a declaration removed at once, for declarations with at
/// least three.
pub fn build_woall<V: Verifier + ?Sized>(prepared: &[PreparedProgram], verifier: &V) -> Result<Vec<BenchmarkInstance>, MutatorError> {
    let mut mutants = Vec::new();
    for p in prepared {
        for (span, records) in &p.methods {
            if records.len() >= WOALL_MIN_REMOVED {
                mutants.push(Mutant { prepared: p, span, records: sorted_records(records), category: InstanceCategory::WOALL, wo2_tag: None });
            }
        }
    }
    materialize(mutants, verifier)
}

/// Verdict of the ground-truth assertion at every line inside the body.
pub fn precompute_position_verdicts<V: Verifier + ?Sized>(
    instance: &BenchmarkInstance,
    verifier: &V,
) -> Result<BTreeMap<usize, PositionVerdict>, MutatorError> {
    if instance.category != InstanceCategory::WO1 || instance.removed.len() != 1 {
        return Err(MutatorError::NotWo1(instance.id.clone()));
    }
    let text = &instance.removed[0].text;
    let lines: Vec<usize> = instance.method.insertion_lines().collect();
    let verdicts: Vec<Result<(usize, PositionVerdict), MutatorError>> = lines
        .par_iter()
        .map(|&line| {
            let program = insert_lines(&instance.failing_program, &[InsertEdit::inherit(line, text.clone())])?;
            let r = verifier.verify(&program)?;
            let v = PositionVerdict::from_status(r.status).ok_or_else(|| MutatorError::Tool {
                id: instance.id.clone(),
                message: r.output.chars().take(500).collect(),
            })?;
            Ok((line, v))
        })
        .collect();
    verdicts.into_iter().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub wo1: Vec<BenchmarkInstance>,
    pub wo2: Vec<BenchmarkInstance>,
    pub woall: Vec<BenchmarkInstance>,
    /// Corpus files that were skipped because they do not verify or parse.
    #[serde(default)]
    pub skipped: Vec<String>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &BenchmarkInstance> {
        self.wo1.iter().chain(&self.wo2).chain(&self.woall)
    }

    pub fn len(&self) -> usize {
        self.wo1.len() + self.wo2.len() + self.woall.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wo1_index(&self) -> HashSet<String> {
        self.wo1.iter().flat_map(|i| i.assertion_keys()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&BenchmarkInstance> {
        self.all().find(|i| i.id == id)
    }

    pub fn from_instances(instances: Vec<BenchmarkInstance>) -> Self {
        let mut d = Dataset::default();
        for i in instances {
            match i.category {
                InstanceCategory::WO1 => d.wo1.push(i),
                InstanceCategory::WO2 => d.wo2.push(i),
                InstanceCategory::WOALL => d.woall.push(i),
            }
        }
        d
    }

    pub fn to_jsonl(&self) -> String {
        self.all().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MutatorError> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let i: BenchmarkInstance =
                serde_json::from_str(line).map_err(|e| MutatorError::Dataset { line: n + 1, message: e.to_string() })?;
            out.push(i);
        }
        Ok(Self::from_instances(out))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub precompute_verdicts: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { precompute_verdicts: true }
    }
}

/// Runs all three builders and, optionally, the position oracle for w/o-1.
pub fn build_dataset<V: Verifier + ?Sized>(
    corpus: &[SourceProgram],
    verifier: &V,
    options: BuildOptions,
) -> Result<Dataset, MutatorError> {
    let (prepared, skipped) = prepare_corpus(corpus, verifier)?;
    let mut wo1 = build_wo1(&prepared, verifier)?;
    if options.precompute_verdicts {
        for i in &mut wo1 {
            i.position_verdicts = Some(precompute_position_verdicts(i, verifier)?);
        }
    }
    let index: HashSet<String> = wo1.iter().flat_map(|i| i.assertion_keys()).collect();
    let wo2 = build_wo2(&prepared, &index, verifier)?;
    let woall = build_woall(&prepared, verifier)?;
    Ok(Dataset { wo1, wo2, woall, skipped })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    /// Number of valid lines -> number of instances.
    pub valid_count_histogram: BTreeMap<usize, usize>,
    /// Max minus min valid line -> number of instances.
    pub spread_histogram: BTreeMap<usize, usize>,
}

/// Per instance: count of valid lines and their spread. Instances without
/// verdicts or valid lines are left out.
pub fn instance_position_stats(verdicts: &BTreeMap<usize, PositionVerdict>) -> Option<(usize, usize)> {
    let valid: Vec<usize> = verdicts.iter().filter(|(_, v)| **v == PositionVerdict::Valid).map(|(l, _)| *l).collect();
    let (min, max) = (valid.iter().min()?, valid.iter().max()?);
    Some((valid.len(), max - min))
}

pub fn position_stats<'a>(instances: impl IntoIterator<Item = &'a BenchmarkInstance>) -> PositionStats {
    let mut stats = PositionStats::default();
    for i in instances {
        if let Some((count, spread)) = i.position_verdicts.as_ref().and_then(instance_position_stats) {
            *stats.valid_count_histogram.entry(count).or_default() += 1;
            *stats.spread_histogram.entry(spread).or_default() += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(name: &str) -> MethodSpan {
        MethodSpan { name: name.into(), kind: MethodKind::Lemma, sig_start_line: 0, body_open_line: 0, body_close_line: 5 }
    }

    #[test]
    fn taxonomy() {
        let l = span("L");
        assert_eq!(classify_assertion("assert s == s[0..1] + s[1..];", &l), AssertionType::Index);
        assert_eq!(classify_assertion("assert i == 4 && j == 7 by {\n  assert q[0] < 10;\n}", &l), AssertionType::Multi);
        assert_eq!(classify_assertion("assert x by { reveal P(); }", &l), AssertionType::Multi);
        assert_eq!(classify_assertion("assert true;", &l), AssertionType::Other);
        assert_eq!(classify_assertion("assert P(x);", &l), AssertionType::Other);
        assert_eq!(classify_assertion("assert Sorted(q);", &span("Main")), AssertionType::Test);
        assert_eq!(classify_assertion("assert a[..] == [3, 5, 1];", &l), AssertionType::Test);
        assert_eq!(classify_assertion("assert x == y && y == 2;", &l), AssertionType::Other);
        assert_eq!(classify_assertion("assert |s| > 0;", &l), AssertionType::Test);
        assert_eq!(classify_assertion("assert |s| > n;", &l), AssertionType::Index);
        assert_eq!(classify_assertion("assert a || b;", &l), AssertionType::Other);
        assert_eq!(classify_assertion("assert x == 1 ==> y;", &l), AssertionType::Other);
    }

    #[test]
    fn retention_predicate() {
        assert_eq!(wo2_retained(true, true), Some(Wo2Tag::BothWo1));
        assert_eq!(wo2_retained(false, false), Some(Wo2Tag::NoneWo1));
        assert_eq!(wo2_retained(true, false), None);
        assert_eq!(wo2_retained(false, true), None);
    }

    #[test]
    fn stats() {
        let v: BTreeMap<usize, PositionVerdict> =
            [(3, PositionVerdict::Valid), (5, PositionVerdict::Partial), (10, PositionVerdict::Valid), (44, PositionVerdict::Valid)]
                .into_iter()
                .collect();
        assert_eq!(instance_position_stats(&v), Some((3, 41)));
        let one: BTreeMap<usize, PositionVerdict> = [(4, PositionVerdict::Valid)].into_iter().collect();
        assert_eq!(instance_position_stats(&one), Some((1, 0)));
    }
}

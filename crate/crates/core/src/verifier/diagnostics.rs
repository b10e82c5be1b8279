//! Verifier output parsing and error classification.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::source::SourceProgram;

/// Error categories that drive heuristic localization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Assertion,
    Related,
    LHSValue,
    Calc,
    Constructed,
    Postcondition,
    AssertBy,
    Forall,
    LoopInvariants,
    TimeOut,
    SubsetConstraints,
    ElementNotInDomain,
    Unknown,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 13] = [
        ErrorKind::Assertion,
        ErrorKind::Related,
        ErrorKind::LHSValue,
        ErrorKind::Calc,
        ErrorKind::Constructed,
        ErrorKind::Postcondition,
        ErrorKind::AssertBy,
        ErrorKind::Forall,
        ErrorKind::LoopInvariants,
        ErrorKind::TimeOut,
        ErrorKind::SubsetConstraints,
        ErrorKind::ElementNotInDomain,
        ErrorKind::Unknown,
    ];
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Related,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    /// 1-based line as printed by the verifier.
    pub line: usize,
    /// 1-based column as printed by the verifier.
    pub column: usize,
    pub kind: ErrorKind,
    pub severity: Severity,
    /// Verbatim message text after the position prefix.
    pub message: String,
    #[serde(default)]
    pub related_positions: Vec<(usize, usize)>,
}

impl Diagnostic {
    /// 0-based line index into the verified program.
    pub fn line_index(&self) -> usize {
        self.line.saturating_sub(1)
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// `file(line,col): message`, the verifier's own rendering.
    pub fn render(&self) -> String {
        format!("{}({},{}): {}", self.file, self.line, self.column, self.message)
    }
}

/// Ordered message patterns; the first matching row decides the kind.
/// Patterns are matched case-insensitively against the message text.
const PATTERNS: &[(&str, ErrorKind)] = &[
    (r"timed out", ErrorKind::TimeOut),
    (r"related location", ErrorKind::Related),
    (r"postcondition of forall statement", ErrorKind::Forall),
    (r"forall statement", ErrorKind::Forall),
    (r"calculation step", ErrorKind::Calc),
    (r"existence of lhs values|such-that", ErrorKind::LHSValue),
    (r"datatype values constructed by", ErrorKind::Constructed),
    (
        r"loop invariant|invariant might not|invariant could not|on entry|maintained by the loop",
        ErrorKind::LoopInvariants,
    ),
    (r"postcondition", ErrorKind::Postcondition),
    (r"subset constraint|subset type constraint", ErrorKind::SubsetConstraints),
    (r"element might not be in domain|element may not be in domain|not be in domain", ErrorKind::ElementNotInDomain),
    (r"assertion might not hold|assertion could not be proved|assertion violation", ErrorKind::Assertion),
];

static CLASSIFIERS: LazyLock<Vec<(Regex, ErrorKind)>> = LazyLock::new(|| {
    PATTERNS
        .iter()
        .map(|(p, k)| (Regex::new(&format!("(?i){p}")).expect("pattern"), *k))
        .collect()
});

static POSITION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?P<file>\S.*?)\((?P<line>\d+),(?P<col>\d+)\):\s*(?P<msg>.*?)\s*$").unwrap());

pub fn classify_message(message: &str) -> ErrorKind {
    CLASSIFIERS
        .iter()
        .find(|(re, _)| re.is_match(message))
        .map(|(_, k)| *k)
        .unwrap_or(ErrorKind::Unknown)
}

/// Extracts positioned diagnostics from raw verifier output, in order.
/// Warnings and informational lines are dropped. Related-location lines are
/// kept as diagnostics of their own and also attached to the preceding error.
pub fn parse_diagnostics(raw_output: &str) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = Vec::new();
    let mut last_error: Option<usize> = None;
    for line in raw_output.lines() {
        let Some(caps) = POSITION_LINE.captures(line) else {
            continue;
        };
        let message = caps["msg"].to_string();
        let lower = message.to_ascii_lowercase();
        if lower.starts_with("warning") || lower.starts_with("info") {
            continue;
        }
        let (Ok(l), Ok(c)) = (caps["line"].parse::<usize>(), caps["col"].parse::<usize>()) else {
            continue;
        };
        let kind = classify_message(&message);
        let severity = if kind == ErrorKind::Related {
            Severity::Related
        } else {
            Severity::Error
        };
        if severity == Severity::Related {
            if let Some(k) = last_error {
                out[k].related_positions.push((l, c));
            }
        } else {
            last_error = Some(out.len());
        }
        out.push(Diagnostic {
            file: caps["file"].to_string(),
            line: l,
            column: c,
            kind,
            severity,
            message,
            related_positions: Vec::new(),
        });
    }
    out
}

static ASSERT_BY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*assert\b.*\bby\b").unwrap());

/// Source-aware refinement: an assertion failure reported on an
/// `assert ... by` statement is an assert-by failure.
pub fn refine_with_source(diagnostics: &mut [Diagnostic], program: &SourceProgram) {
    for d in diagnostics.iter_mut() {
        if d.kind == ErrorKind::Assertion {
            if let Some(text) = program.line(d.line_index()) {
                if ASSERT_BY.is_match(text) {
                    d.kind = ErrorKind::AssertBy;
                }
            }
        }
    }
}

/// Renders diagnostics back to verifier-style text, one per line.
pub fn render_diagnostics(diagnostics: &[Diagnostic]) -> String {
    diagnostics
        .iter()
        .map(Diagnostic::render)
        .collect::<Vec<_>>()
        .join("\n")
}

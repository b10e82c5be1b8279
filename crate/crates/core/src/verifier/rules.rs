use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{VerificationResult, Verifier, VerifierError};
use crate::source::{normalize_ws, SourceProgram};

/// Assertion text expected between two anchor lines.
///
/// The region starts after the first line matching `after` (or at the top of
/// the file) and ends at the first later line matching `before` (or the end
/// of the file).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Placement {
    pub text: String,
    #[serde(default)]
    pub after: Option<String>,
    #[serde(default)]
    pub before: Option<String>,
}

/// A proof obligation that fails unless one alternative is fully present.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Obligation {
    /// Applies only when some line matches this pattern.
    #[serde(default)]
    pub when_present: Option<String>,
    /// Pattern for the reported line; searched after `fail_after` if given.
    pub fail_at: String,
    #[serde(default)]
    pub fail_after: Option<String>,
    /// Message printed after the position, e.g. `Error: assertion might not hold`.
    pub message: String,
    /// Optional related location, as `(pattern, message)`.
    #[serde(default)]
    pub related: Option<(String, String)>,
    /// Sets of placements; all placements of one set discharge the obligation.
    #[serde(default)]
    pub alternatives: Vec<Vec<Placement>>,
}

/// Rules for the programs containing `identify` as a substring.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProgramRules {
    pub name: String,
    pub identify: String,
    #[serde(default)]
    pub obligations: Vec<Obligation>,
}

#[derive(Debug)]
struct CompiledPlacement {
    lines: Vec<String>,
    after: Option<Regex>,
    before: Option<Regex>,
}

#[derive(Debug)]
struct CompiledObligation {
    when_present: Option<Regex>,
    fail_at: Regex,
    fail_after: Option<Regex>,
    message: String,
    related: Option<(Regex, String)>,
    alternatives: Vec<Vec<CompiledPlacement>>,
}

#[derive(Debug)]
struct CompiledProgram {
    identify: String,
    obligations: Vec<CompiledObligation>,
}

/// Declarative stand-in for the verifier.
///
/// A program verifies when every applicable obligation is discharged. The
/// output imitates Dafny's text format and goes through the same parser as
/// real output. An `assert` placed directly under a declaration, loop header
/// or specification clause that has not yet opened its block is a parse error.
#[derive(Debug)]
pub struct RuleVerifier {
    programs: Vec<CompiledProgram>,
    calls: AtomicUsize,
}

fn compile(pattern: &str) -> Result<Regex, VerifierError> {
    Regex::new(pattern).map_err(|e| VerifierError::Config(format!("bad pattern {pattern:?}: {e}")))
}

fn compile_opt(pattern: &Option<String>) -> Result<Option<Regex>, VerifierError> {
    pattern.as_deref().map(compile).transpose()
}

const OPENERS: &[&str] = &[
    "method", "lemma", "function", "predicate", "while", "for", "invariant", "decreases", "requires", "ensures",
    "modifies", "reads",
];

impl RuleVerifier {
    pub fn new(rules: Vec<ProgramRules>) -> Result<Self, VerifierError> {
        let mut programs = Vec::new();
        for r in rules {
            let mut obligations = Vec::new();
            for o in r.obligations {
                let alternatives = o
                    .alternatives
                    .iter()
                    .map(|alt| {
                        alt.iter()
                            .map(|p| {
                                Ok(CompiledPlacement {
                                    lines: p.text.lines().map(normalize_ws).filter(|l| !l.is_empty()).collect(),
                                    after: compile_opt(&p.after)?,
                                    before: compile_opt(&p.before)?,
                                })
                            })
                            .collect::<Result<Vec<_>, VerifierError>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                obligations.push(CompiledObligation {
                    when_present: compile_opt(&o.when_present)?,
                    fail_at: compile(&o.fail_at)?,
                    fail_after: compile_opt(&o.fail_after)?,
                    message: o.message,
                    related: o.related.map(|(p, m)| compile(&p).map(|re| (re, m))).transpose()?,
                    alternatives,
                });
            }
            programs.push(CompiledProgram { identify: r.identify, obligations });
        }
        Ok(Self { programs, calls: AtomicUsize::new(0) })
    }

    pub fn from_json(text: &str) -> Result<Self, VerifierError> {
        let rules: Vec<ProgramRules> = serde_json::from_str(text).map_err(|e| VerifierError::Config(e.to_string()))?;
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self, VerifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn syntax_error(lines: &[String]) -> Option<usize> {
        let mut prev: Option<&str> = None;
        for (i, line) in lines.iter().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with("//") {
                continue;
            }
            if t.starts_with("assert ") || t.starts_with("assert(") {
                if let Some(p) = prev {
                    let first = p.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or("");
                    let opener = OPENERS.contains(&first) || p.starts_with("function method");
                    if opener && !p.ends_with('{') {
                        return Some(i);
                    }
                }
            }
            prev = Some(t);
        }
        None
    }

    fn discharged(lines: &[String], normalized: &[String], alt: &[CompiledPlacement]) -> bool {
        alt.iter().all(|p| {
            let start = match &p.after {
                Some(re) => match lines.iter().position(|l| re.is_match(l)) {
                    Some(k) => k + 1,
                    None => return false,
                },
                None => 0,
            };
            let end = match &p.before {
                Some(re) => match lines.iter().skip(start).position(|l| re.is_match(l)) {
                    Some(k) => start + k,
                    None => return false,
                },
                None => lines.len(),
            };
            let n = p.lines.len();
            n > 0 && end >= start + n && (start..=end - n).any(|k| normalized[k..k + n] == p.lines[..])
        })
    }

    fn position(lines: &[String], re: &Regex, after: Option<&Regex>) -> (usize, usize) {
        let from = after.and_then(|a| lines.iter().position(|l| a.is_match(l)).map(|k| k + 1)).unwrap_or(0);
        match lines.iter().enumerate().skip(from).find(|(_, l)| re.is_match(l)) {
            Some((k, l)) => (k + 1, l.len() - l.trim_start().len() + 1),
            None => (1, 1),
        }
    }
}

impl Verifier for RuleVerifier {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let path = if program.path().is_empty() { "program.dfy" } else { program.path() };
        let text = program.lines().join("\n");
        let Some(rules) = self.programs.iter().find(|p| text.contains(&p.identify)) else {
            return Err(VerifierError::Tool(format!("no rules match {path}")));
        };
        let lines = program.lines();
        if let Some(k) = Self::syntax_error(lines) {
            let col = lines[k].len() - lines[k].trim_start().len() + 1;
            let out = format!("{path}({},{col}): Error: invalid statement in this position\n1 parse errors detected in {path}\n", k + 1);
            return Ok(VerificationResult::from_output(out, program, 0.0));
        }
        let normalized: Vec<String> = lines.iter().map(|l| normalize_ws(l)).collect();
        let mut failures: Vec<(usize, usize, String)> = Vec::new();
        let mut applicable = 0;
        for o in &rules.obligations {
            if let Some(w) = &o.when_present {
                if !lines.iter().any(|l| w.is_match(l)) {
                    continue;
                }
            }
            applicable += 1;
            if o.alternatives.iter().any(|alt| Self::discharged(lines, &normalized, alt)) {
                continue;
            }
            let (l, c) = Self::position(lines, &o.fail_at, o.fail_after.as_ref());
            let mut msg = format!("{path}({l},{c}): {}", o.message);
            if let Some((re, rm)) = &o.related {
                let (rl, rc) = Self::position(lines, re, None);
                msg.push_str(&format!("\n{path}({rl},{rc}): Related location: {rm}"));
            }
            failures.push((l, c, msg));
        }
        failures.sort_by_key(|f| (f.0, f.1));
        let mut out: String = failures.iter().map(|f| format!("{}\n", f.2)).collect();
        let errors = failures.len();
        out.push_str(&format!(
            "\nDafny program verifier finished with {} verified, {errors} error{}\n",
            applicable.max(1) - errors.min(applicable.max(1)),
            if errors == 1 { "" } else { "s" }
        ));
        Ok(VerificationResult::from_output(out, program, 0.0))
    }

    fn describe(&self) -> String {
        "rules".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::{ErrorKind, VerificationStatus};

    fn rules() -> RuleVerifier {
        RuleVerifier::from_json(
            r#"[{"name":"t","identify":"method T","obligations":[
              {"fail_at":"assert x == 2;","message":"Error: assertion might not hold",
               "alternatives":[[{"text":"assert x == 1 + 1;","after":"var x","before":"assert x == 2;"}]]}]}]"#,
        )
        .unwrap()
    }

    #[test]
    fn discharged_by_placement() {
        let v = rules();
        let ok = SourceProgram::from_text("t.dfy", "method T() {\n  var x := 2;\n  assert x == 1 + 1;\n  assert x == 2;\n}\n");
        assert_eq!(v.verify(&ok).unwrap().status, VerificationStatus::Verified);
        let bad = SourceProgram::from_text("t.dfy", "method T() {\n  var x := 2;\n  assert x == 2;\n  assert x == 1 + 1;\n}\n");
        let r = v.verify(&bad).unwrap();
        assert_eq!(r.status, VerificationStatus::Failed);
        assert_eq!((r.diagnostics[0].line, r.diagnostics[0].kind), (3, ErrorKind::Assertion));
    }

    #[test]
    fn syntax_errors() {
        let v = rules();
        let p = SourceProgram::from_text("t.dfy", "method T() {\n  var x := 2;\n  while x < 3\n  assert x == 1 + 1;\n  invariant true\n  {}\n}\n");
        assert_eq!(v.verify(&p).unwrap().status, VerificationStatus::SyntaxError);
    }

    #[test]
    fn unknown_program() {
        assert!(rules().verify(&SourceProgram::from_text("u.dfy", "lemma U() {}\n")).is_err());
    }
}

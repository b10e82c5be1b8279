//! Python bindings for the offline parts of daisy: parsing, localization
//! heuristics, retrieval scoring, attempt enumeration and dataset building.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use daisy_core::evaluate::{cost_usd as core_cost, CostRates};
use daisy_core::infer::{enumerate_attempts as core_enumerate, AttemptOrder, CandidateSet};
use daisy_core::llm::UsageStats;
use daisy_core::localize::{heuristic_locate as core_locate, RepairTask};
use daisy_core::mutator::{build_dataset as core_build, BuildOptions};
use daisy_core::retrieve::{filter_error_message as core_filter, tfidf_rank as core_tfidf};
use daisy_core::verifier::{parse_diagnostics as core_parse, RuleVerifier, VerificationResult};
use daisy_core::{InsertionPoint, MethodKind, MethodSpan, PointSource, SourceProgram};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// (name, kind, signature line, body open line, body close line), 0-based.
#[pyfunction]
fn method_spans(text: &str) -> PyResult<Vec<(String, String, usize, usize, usize)>> {
    let p = SourceProgram::from_text("input.dfy", text);
    let spans = p.method_spans().map_err(value_err)?;
    Ok(spans
        .into_iter()
        .map(|s| (s.name, format!("{:?}", s.kind).to_lowercase(), s.sig_start_line, s.body_open_line, s.body_close_line))
        .collect())
}

/// (1-based line, column, kind, message) per diagnostic in raw verifier output.
#[pyfunction]
fn parse_diagnostics(output: &str) -> Vec<(usize, usize, String, String)> {
    core_parse(output).into_iter().map(|d| (d.line, d.column, format!("{:?}", d.kind), d.message)).collect()
}

#[pyfunction]
fn filter_error_message(raw: &str) -> String {
    core_filter(raw)
}

/// Heuristic insertion lines (0-based) per failing declaration.
#[pyfunction]
#[pyo3(signature = (program_text, verifier_output, extended = true))]
fn heuristic_locate(program_text: &str, verifier_output: &str, extended: bool) -> PyResult<Vec<(String, Vec<usize>)>> {
    let program = SourceProgram::from_text("input.dfy", program_text);
    let result = VerificationResult::from_output(verifier_output.to_string(), &program, 0.0);
    let tasks = RepairTask::from_verification(&program, &result).map_err(value_err)?;
    Ok(tasks
        .iter()
        .map(|t| {
            let lines = t.primary_diagnostic().map(|d| core_locate(d, &t.method, &t.program, extended).lines()).unwrap_or_default();
            (t.method.name.clone(), lines)
        })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (text, method_name = "M"))]
fn classify_assertion(text: &str, method_name: &str) -> String {
    let span = MethodSpan { name: method_name.into(), kind: MethodKind::Method, sig_start_line: 0, body_open_line: 0, body_close_line: 0 };
    daisy_core::mutator::classify_assertion(text, &span).label().to_string()
}

/// Candidate assignments in attempt order; `None` leaves a position blank.
#[pyfunction]
#[pyo3(signature = (first, second = None, cross_product = false))]
fn enumerate_attempts(first: Vec<String>, second: Option<Vec<String>>, cross_product: bool) -> Vec<Vec<Option<String>>> {
    let mut points = vec![InsertionPoint::new(0, PointSource::Llm)];
    let mut per_position = vec![first];
    if let Some(b) = second {
        points.push(InsertionPoint::new(1, PointSource::Llm));
        per_position.push(b);
    }
    let order = if cross_product { AttemptOrder::CrossProduct } else { AttemptOrder::IndexAligned };
    core_enumerate(&points, &CandidateSet { per_position }, order)
        .into_iter()
        .map(|a| a.assignment.into_iter().map(|(_, c)| c).collect())
        .collect()
}

/// (document index, score) sorted by descending score.
#[pyfunction]
fn tfidf_rank(query: &str, documents: Vec<String>) -> Vec<(usize, f64)> {
    core_tfidf(query, &documents)
}

#[pyfunction]
#[pyo3(signature = (input_tokens, output_tokens, input_per_1m = 2.0, output_per_1m = 8.0))]
fn cost_usd(input_tokens: u64, output_tokens: u64, input_per_1m: f64, output_per_1m: f64) -> f64 {
    core_cost(&UsageStats::new(input_tokens, output_tokens), &CostRates { input_per_1m, output_per_1m })
}

/// Builds the benchmark from the `.dfy` files in `corpus_dir`, checked by a
/// rule file instead of Dafny. Returns the dataset as JSON lines.
#[pyfunction]
#[pyo3(signature = (corpus_dir, rules_path, precompute_verdicts = true))]
fn build_dataset(corpus_dir: &str, rules_path: &str, precompute_verdicts: bool) -> PyResult<String> {
    let verifier = RuleVerifier::load(Path::new(rules_path)).map_err(value_err)?;
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir)
        .map_err(|e| PyIOError::new_err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dfy"))
        .collect();
    files.sort();
    let mut corpus = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let name = f.file_name().unwrap_or_default().to_string_lossy().to_string();
        corpus.push(SourceProgram::from_text(name, &text));
    }
    let d = core_build(&corpus, &verifier, BuildOptions { precompute_verdicts }).map_err(value_err)?;
    Ok(d.to_jsonl())
}

#[pymodule]
fn daisy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(method_spans, m)?)?;
    m.add_function(wrap_pyfunction!(parse_diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(filter_error_message, m)?)?;
    m.add_function(wrap_pyfunction!(heuristic_locate, m)?)?;
    m.add_function(wrap_pyfunction!(classify_assertion, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_attempts, m)?)?;
    m.add_function(wrap_pyfunction!(tfidf_rank, m)?)?;
    m.add_function(wrap_pyfunction!(cost_usd, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    Ok(())
}

//! Experiment runs over a dataset and the tables built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::infer::{repair, InferOptions, RepairStatus, Retriever, VerifyMemo};
use crate::llm::{ChatModel, Embedder, UsageStats};
use crate::localize::{locate, LocalizationResult, LocalizationStrategy, LocalizeContext, RepairTask};
use crate::mutator::{position_stats, AssertionType, BenchmarkInstance, Dataset, InstanceCategory, PositionVerdict, Wo2Tag};
use crate::prompt::DEFAULT_LOCALIZE_TEMPLATE;
use crate::retrieve::{ExampleDb, ExampleEntry, RetrievalConfig, RetrievalStrategy};
use crate::source::{insert_lines, InsertEdit};
use crate::verifier::{Verifier, VerifierError};

#[derive(Debug, thiserror::Error)]
pub enum EvaluateError {
    #[error("reports cover different instances ({only_a} only in the first, {only_b} only in the second)")]
    InstanceSetMismatch { only_a: usize, only_b: usize },
    #[error("instance {0} has no ground truth to categorize against")]
    NoGroundTruth(String),
    #[error("verifier tool error on {id}: {message}")]
    Tool { id: String, message: String },
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Source(#[from] crate::source::SourceError),
    #[error("report is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Verdict for the first predicted point: the ground-truth assertion is
/// placed there and verified, unless the dataset already knows the answer.
/// Also returns whether the backend was called.
pub fn categorize_position(
    instance: &BenchmarkInstance,
    result: &LocalizationResult,
    verifier: &dyn Verifier,
) -> Result<(PositionVerdict, bool), EvaluateError> {
    let Some(point) = result.points.first() else {
        return Ok((PositionVerdict::NoPos, false));
    };
    if let Some(v) = instance.position_verdicts.as_ref().and_then(|m| m.get(&point.line)) {
        return Ok((*v, false));
    }
    let gt = instance.removed.first().ok_or_else(|| EvaluateError::NoGroundTruth(instance.id.clone()))?;
    let program = insert_lines(&instance.failing_program, &[InsertEdit::inherit(point.line, gt.text.clone())])?;
    let r = verifier.verify(&program)?;
    let v = PositionVerdict::from_status(r.status)
        .ok_or_else(|| EvaluateError::Tool { id: instance.id.clone(), message: r.output.chars().take(500).collect() })?;
    Ok((v, true))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub localization: LocalizationStrategy,
    pub retrieval: RetrievalConfig,
    pub infer: InferOptions,
    pub localize_template: String,
    pub localize_temperature: Option<f64>,
    pub rates: CostRates,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            localization: LocalizationStrategy::default_hybrid(),
            retrieval: RetrievalConfig::default(),
            infer: InferOptions::default(),
            localize_template: DEFAULT_LOCALIZE_TEMPLATE.to_string(),
            localize_temperature: Some(0.0),
            rates: CostRates::default(),
        }
    }
}

/// Clients an experiment talks to.
pub struct ExperimentContext<'a> {
    pub llm: &'a dyn ChatModel,
    pub verifier: &'a dyn Verifier,
    pub examples: Option<&'a ExampleDb>,
    pub embedder: Option<&'a dyn Embedder>,
    /// Set to stop picking up new instances; the report is then marked incomplete.
    pub cancel: Option<&'a AtomicBool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Verified,
    Exhausted,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub id: String,
    pub category: InstanceCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wo2_tag: Option<Wo2Tag>,
    pub assertion_type: AssertionType,
    /// One entry per localization member, in member order.
    pub localization: Vec<MemberRow>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: usize,
    pub verifier_calls: usize,
    /// Inserted (line, assertion) pairs of the winning attempt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub winning: Vec<(usize, String)>,
    pub usage: UsageStats,
    pub cost_usd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRow {
    pub strategy: String,
    pub points: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<PositionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub solved: usize,
    pub total: usize,
    pub percent: f64,
}

impl Rate {
    pub fn new(solved: usize, total: usize) -> Self {
        Self { solved, total, percent: percent(solved, total) }
    }
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        (1000.0 * n as f64 / d as f64).round() / 10.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub wo1: Rate,
    pub wo2: Rate,
    pub wo2_both: Rate,
    pub wo2_none: Rate,
    pub woall: Rate,
    pub combined: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub localization: String,
    pub retrieval: String,
    pub verifier: String,
    pub model: String,
    /// False when the run was interrupted.
    pub complete: bool,
    pub rows: Vec<InstanceRow>,
    pub success: SuccessTable,
    pub taxonomy: BTreeMap<String, Rate>,
    /// Member strategy -> verdict -> count, over w/o-1 rows.
    pub positions: BTreeMap<String, BTreeMap<String, usize>>,
    pub usage: UsageStats,
    pub cost: CostReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub input_per_1m: f64,
    pub output_per_1m: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self { input_per_1m: 2.0, output_per_1m: 8.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub requests: u64,
    pub usd: f64,
}

pub fn cost_usd(usage: &UsageStats, rates: &CostRates) -> f64 {
    usage.input_tokens as f64 / 1e6 * rates.input_per_1m + usage.output_tokens as f64 / 1e6 * rates.output_per_1m
}

pub fn cost_report(usage: &UsageStats, rates: &CostRates) -> CostReport {
    CostReport {
        input_tokens: usage.input_tokens,
        output_tokens: usage.output_tokens,
        requests: usage.request_count,
        usd: cost_usd(usage, rates),
    }
}

fn category_rank(c: InstanceCategory) -> u8 {
    match c {
        InstanceCategory::WO1 => 0,
        InstanceCategory::WO2 => 1,
        InstanceCategory::WOALL => 2,
    }
}

fn retrieve_examples(task: &RepairTask, cfg: &ExperimentConfig, ctx: &ExperimentContext<'_>) -> Result<Vec<ExampleEntry>, String> {
    if cfg.retrieval.strategy == RetrievalStrategy::NoEx {
        return Ok(Vec::new());
    }
    let db = ctx.examples.ok_or("no example database loaded")?;
    let retriever = Retriever { db, config: cfg.retrieval.clone(), embedder: ctx.embedder };
    retriever.examples_for(task).map_err(|e| e.to_string())
}

/// Localize, categorize and repair one instance. Branches of a hybrid are
/// repaired one after another; the first that verifies wins.
pub fn evaluate_instance(
    instance: &BenchmarkInstance,
    cfg: &ExperimentConfig,
    ctx: &ExperimentContext<'_>,
    memo: &VerifyMemo,
) -> InstanceRow {
    let task = RepairTask::from_instance(instance);
    let mut row = InstanceRow {
        id: instance.id.clone(),
        category: instance.category,
        wo2_tag: instance.wo2_tag,
        assertion_type: instance.primary_type(),
        localization: Vec::new(),
        outcome: Outcome::Exhausted,
        error: None,
        attempts: 0,
        verifier_calls: 0,
        winning: Vec::new(),
        usage: UsageStats::default(),
        cost_usd: 0.0,
    };
    let examples = match retrieve_examples(&task, cfg, ctx) {
        Ok(e) => e,
        Err(e) => {
            row.outcome = Outcome::Error;
            row.error = Some(format!("retrieval: {e}"));
            return row;
        }
    };
    let lctx = LocalizeContext {
        llm: Some(ctx.llm),
        examples: &examples,
        template: &cfg.localize_template,
        temperature: cfg.localize_temperature,
    };
    let results = locate(&task, &cfg.localization, &lctx);
    let mut branch_errors = Vec::new();
    for r in &results {
        row.usage += r.usage;
        let mut member = MemberRow { strategy: r.strategy.to_string(), points: r.lines(), verdict: None, error: r.error.clone() };
        if instance.category == InstanceCategory::WO1 {
            match categorize_position(instance, r, ctx.verifier) {
                Ok((v, called)) => {
                    member.verdict = Some(v);
                    row.verifier_calls += called as usize;
                }
                Err(e) => member.error = Some(e.to_string()),
            }
        }
        row.localization.push(member);
    }
    let mut seen = BTreeSet::new();
    for r in &results {
        let lines = r.lines();
        if lines.is_empty() || !seen.insert(lines) {
            continue;
        }
        let out = repair(&task, r, &examples, ctx.llm, ctx.verifier, memo, &cfg.infer);
        row.usage += out.usage;
        row.attempts += out.attempts_tried;
        row.verifier_calls += out.verifier_calls;
        match out.status {
            RepairStatus::VerifiedWith(attempt) => {
                row.outcome = Outcome::Verified;
                row.winning = attempt.inserted().map(|(p, c)| (p.line, c.to_string())).collect();
                break;
            }
            RepairStatus::Exhausted => {}
            RepairStatus::Error(e) => branch_errors.push(e),
        }
    }
    if row.outcome != Outcome::Verified && !branch_errors.is_empty() {
        row.outcome = Outcome::Error;
        row.error = Some(branch_errors.join("; "));
    }
    row.cost_usd = cost_usd(&row.usage, &cfg.rates);
    row
}

pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig, ctx: &ExperimentContext<'_>) -> ExperimentReport {
    let instances: Vec<&BenchmarkInstance> = dataset.all().collect();
    let cancelled = || ctx.cancel.is_some_and(|c| c.load(Ordering::SeqCst));
    // One memo per instance: a shared one would make per-row call counts
    // depend on scheduling.
    let mut rows: Vec<InstanceRow> = instances
        .par_iter()
        .filter_map(|i| if cancelled() { None } else { Some(evaluate_instance(i, cfg, ctx, &VerifyMemo::new())) })
        .collect();
    rows.sort_by(|a, b| (category_rank(a.category), &a.id).cmp(&(category_rank(b.category), &b.id)));
    let complete = rows.len() == instances.len();
    build_report(rows, cfg, ctx.verifier.describe(), ctx.llm.model_id(), complete)
}

pub fn build_report(rows: Vec<InstanceRow>, cfg: &ExperimentConfig, verifier: String, model: String, complete: bool) -> ExperimentReport {
    let usage: UsageStats = rows.iter().map(|r| r.usage).sum();
    ExperimentReport {
        localization: cfg.localization.to_string(),
        retrieval: format!("{}(k={})", cfg.retrieval.strategy.name(), cfg.retrieval.k),
        verifier,
        model,
        complete,
        success: success_table(&rows),
        taxonomy: taxonomy_table(&rows),
        positions: position_table(&rows),
        cost: cost_report(&usage, &cfg.rates),
        usage,
        rows,
    }
}

fn rate_of<'a>(rows: impl Iterator<Item = &'a InstanceRow>) -> Rate {
    let (mut solved, mut total) = (0, 0);
    for r in rows {
        total += 1;
        solved += (r.outcome == Outcome::Verified) as usize;
    }
    Rate::new(solved, total)
}

pub fn success_table(rows: &[InstanceRow]) -> SuccessTable {
    let of = |c: InstanceCategory| rate_of(rows.iter().filter(move |r| r.category == c));
    let tag = |t: Wo2Tag| rate_of(rows.iter().filter(move |r| r.category == InstanceCategory::WO2 && r.wo2_tag == Some(t)));
    SuccessTable {
        wo1: of(InstanceCategory::WO1),
        wo2: of(InstanceCategory::WO2),
        wo2_both: tag(Wo2Tag::BothWo1),
        wo2_none: tag(Wo2Tag::NoneWo1),
        woall: of(InstanceCategory::WOALL),
        combined: rate_of(rows.iter()),
    }
}

/// Success per assertion type over w/o-1 rows; every type is listed.
pub fn taxonomy_table(rows: &[InstanceRow]) -> BTreeMap<String, Rate> {
    [AssertionType::Index, AssertionType::Test, AssertionType::Multi, AssertionType::Other]
        .into_iter()
        .map(|t| {
            let r = rate_of(rows.iter().filter(|r| r.category == InstanceCategory::WO1 && r.assertion_type == t));
            (t.label().to_string(), r)
        })
        .collect()
}

pub fn position_table(rows: &[InstanceRow]) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.category == InstanceCategory::WO1) {
        for m in &r.localization {
            if let Some(v) = m.verdict {
                *out.entry(m.strategy.clone()).or_default().entry(format!("{v:?}")).or_default() += 1;
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub only_a: usize,
    pub only_b: usize,
    pub both: usize,
    pub union: usize,
}

/// Partition of verified instances between two runs over the same instances.
pub fn overlap_analysis(a: &ExperimentReport, b: &ExperimentReport) -> Result<Overlap, EvaluateError> {
    let ids = |r: &ExperimentReport| r.rows.iter().map(|x| x.id.clone()).collect::<BTreeSet<_>>();
    let (ia, ib) = (ids(a), ids(b));
    if ia != ib {
        return Err(EvaluateError::InstanceSetMismatch { only_a: ia.difference(&ib).count(), only_b: ib.difference(&ia).count() });
    }
    let solved = |r: &ExperimentReport| {
        r.rows.iter().filter(|x| x.outcome == Outcome::Verified).map(|x| x.id.clone()).collect::<BTreeSet<_>>()
    };
    let (sa, sb) = (solved(a), solved(b));
    let both = sa.intersection(&sb).count();
    let only_a = sa.len() - both;
    let only_b = sb.len() - both;
    Ok(Overlap { only_a, only_b, both, union: only_a + only_b + both })
}

impl ExperimentReport {
    /// Recomputes every aggregate from the rows and compares.
    pub fn check_consistency(&self) -> Result<(), EvaluateError> {
        let fail = |what: &str| Err(EvaluateError::Inconsistent(what.to_string()));
        if success_table(&self.rows) != self.success {
            return fail("success table does not match rows");
        }
        if taxonomy_table(&self.rows) != self.taxonomy {
            return fail("taxonomy table does not match rows");
        }
        let s = &self.success;
        if s.wo1.total + s.wo2.total + s.woall.total != s.combined.total {
            return fail("category totals do not add up");
        }
        if s.wo2_both.total + s.wo2_none.total != s.wo2.total {
            return fail("w/o-2 subdivision does not add up");
        }
        let usage: UsageStats = self.rows.iter().map(|r| r.usage).sum();
        if usage != self.usage {
            return fail("token totals do not match rows");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, EvaluateError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "localization: {}", self.localization);
        let _ = writeln!(out, "retrieval:    {}", self.retrieval);
        let _ = writeln!(out, "model:        {}", self.model);
        let _ = writeln!(out, "verifier:     {}", self.verifier);
        if !self.complete {
            let _ = writeln!(out, "status:       INCOMPLETE (interrupted)");
        }
        let _ = writeln!(out, "\nVerification success");
        let s = &self.success;
        table(
            &mut out,
            &["category", "solved", "total", "%"],
            &[
                ("w/o-1", &s.wo1),
                ("w/o-2", &s.wo2),
                ("  both in w/o-1", &s.wo2_both),
                ("  none in w/o-1", &s.wo2_none),
                ("w/o-all", &s.woall),
                ("combined", &s.combined),
            ],
        );
        let _ = writeln!(out, "\nSuccess per assertion type (w/o-1)");
        let tax: Vec<(&str, &Rate)> = self.taxonomy.iter().map(|(k, v)| (k.as_str(), v)).collect();
        table(&mut out, &["type", "solved", "total", "%"], &tax);
        if !self.positions.is_empty() {
            let _ = writeln!(out, "\nPosition verdicts (w/o-1)");
            let _ = writeln!(out, "{:<24} {:>7} {:>7} {:>7} {:>7}", "strategy", "Valid", "Partial", "Invalid", "NoPos");
            for (k, m) in &self.positions {
                let g = |n: &str| m.get(n).copied().unwrap_or(0);
                let _ = writeln!(out, "{:<24} {:>7} {:>7} {:>7} {:>7}", k, g("Valid"), g("Partial"), g("Invalid"), g("NoPos"));
            }
        }
        let c = &self.cost;
        let _ = writeln!(out, "\nTokens: {} in, {} out over {} requests; cost ${:.2}", c.input_tokens, c.output_tokens, c.requests, c.usd);
        out
    }

    /// Writes report.json and report.txt into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvaluateError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.txt"), self.render_text())?;
        Ok(())
    }
}

fn table(out: &mut String, header: &[&str; 4], rows: &[(&str, &Rate)]) {
    let _ = writeln!(out, "{:<18} {:>7} {:>7} {:>7}", header[0], header[1], header[2], header[3]);
    for (name, r) in rows {
        let _ = writeln!(out, "{:<18} {:>7} {:>7} {:>7.1}", name, r.solved, r.total, r.percent);
    }
}

/// Valid-position histograms of a dataset as CSV: `histogram,bucket,instances`.
pub fn histograms_csv(dataset: &Dataset) -> String {
    let stats = position_stats(&dataset.wo1);
    let mut out = String::from("histogram,bucket,instances\n");
    for (k, v) in &stats.valid_count_histogram {
        let _ = writeln!(out, "valid_positions,{k},{v}");
    }
    for (k, v) in &stats.spread_histogram {
        let _ = writeln!(out, "max_line_spread,{k},{v}");
    }
    out
}

/// Upper bounds on external calls for a run, for dry runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallPlan {
    pub instances: usize,
    pub llm_calls_max: usize,
    pub verifier_calls_max: usize,
}

/// Each LLM member may re-prompt once, each branch asks for ten candidates
/// per point, and two points give at most thirty attempts.
pub fn plan_calls(dataset: &Dataset, cfg: &ExperimentConfig) -> CallPlan {
    let members = cfg.localization.members();
    let llm_members = members.iter().filter(|m| m.uses_llm()).count();
    let mut plan = CallPlan { instances: dataset.len(), ..Default::default() };
    for i in dataset.all() {
        plan.llm_calls_max += 2 * llm_members + 2 * members.len();
        plan.verifier_calls_max += 30 * members.len();
        if i.category == InstanceCategory::WO1 && i.position_verdicts.is_none() {
            plan.verifier_calls_max += members.len();
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, category: InstanceCategory, ok: bool) -> InstanceRow {
        InstanceRow {
            id: id.into(),
            category,
            wo2_tag: (category == InstanceCategory::WO2).then_some(Wo2Tag::BothWo1),
            assertion_type: AssertionType::Test,
            localization: vec![],
            outcome: if ok { Outcome::Verified } else { Outcome::Exhausted },
            error: None,
            attempts: 1,
            verifier_calls: 1,
            winning: vec![],
            usage: UsageStats::default(),
            cost_usd: 0.0,
        }
    }

    fn report(rows: Vec<InstanceRow>) -> ExperimentReport {
        build_report(rows, &ExperimentConfig::default(), "v".into(), "m".into(), true)
    }

    #[test]
    fn overlap() {
        let a = report(vec![row("1", InstanceCategory::WO1, true), row("2", InstanceCategory::WO1, true), row("3", InstanceCategory::WO1, false)]);
        let b = report(vec![row("1", InstanceCategory::WO1, false), row("2", InstanceCategory::WO1, true), row("3", InstanceCategory::WO1, true)]);
        assert_eq!(overlap_analysis(&a, &b).unwrap(), Overlap { only_a: 1, only_b: 1, both: 1, union: 3 });
        assert_eq!(overlap_analysis(&a, &a).unwrap().only_a, 0);
        let c = report(vec![row("9", InstanceCategory::WO1, true)]);
        assert!(matches!(overlap_analysis(&a, &c), Err(EvaluateError::InstanceSetMismatch { .. })));
    }

    #[test]
    fn tables_are_consistent() {
        let r = report(vec![
            row("a", InstanceCategory::WO1, true),
            row("b", InstanceCategory::WO2, false),
            row("c", InstanceCategory::WOALL, true),
        ]);
        r.check_consistency().unwrap();
        assert_eq!(r.success.combined, Rate::new(2, 3));
        assert_eq!(r.success.combined.percent, 66.7);
        assert_eq!(r.taxonomy["TEST"], Rate::new(1, 1));
        let mut bad = r.clone();
        bad.success.wo1.solved = 0;
        assert!(bad.check_consistency().is_err());
        let back = ExperimentReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn costs() {
        let rates = CostRates::default();
        assert_eq!(cost_usd(&UsageStats::new(1_000_000, 1_000_000), &rates), 10.0);
        assert_eq!(cost_usd(&UsageStats::default(), &rates), 0.0);
    }
}

//! The subcommands. Each writes its human-readable output to `out` and
//! returns the process exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use anyhow::{bail, Context, Result};

use daisy_core::evaluate::{histograms_csv, plan_calls, run_experiment, ExperimentConfig, ExperimentContext, ExperimentReport};
use daisy_core::infer::{repair, InferOptions, RepairOutcome, RepairStatus, Retriever, VerifyMemo};
use daisy_core::localize::{locate, LocalizeContext, RepairTask};
use daisy_core::mutator::{build_dataset, AssertionType, BuildOptions, Dataset, Wo2Tag};
use daisy_core::prompt::PromptTemplates;
use daisy_core::retrieve::{build_example_db, ExampleDb, ExampleEntry, RetrievalStrategy};
use daisy_core::verifier::VerificationStatus;
use daisy_core::SourceProgram;

use crate::backends::Backends;
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_EXHAUSTED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_INTERRUPTED: i32 = 130;

fn templates(cfg: &RunConfig) -> Result<PromptTemplates> {
    match &cfg.paths.prompts {
        Some(dir) => Ok(PromptTemplates::load(dir)?),
        None => Ok(PromptTemplates::default()),
    }
}

fn infer_options(cfg: &RunConfig, templates: &PromptTemplates) -> InferOptions {
    InferOptions {
        template: templates.infer.clone(),
        include_context: cfg.include_context,
        attempt_order: cfg.attempt_order,
        temperature: cfg.provider.infer_temperature,
    }
}

pub fn experiment_config(cfg: &RunConfig) -> Result<ExperimentConfig> {
    let t = templates(cfg)?;
    Ok(ExperimentConfig {
        localization: cfg.localization_strategy()?,
        retrieval: cfg.retrieval_config()?,
        infer: infer_options(cfg, &t),
        localize_template: t.localize,
        localize_temperature: cfg.provider.localize_temperature,
        rates: cfg.cost,
    })
}

/// Every `.dfy` file below `dir`, named by its path relative to `dir`.
pub fn read_corpus(dir: &Path) -> Result<Vec<SourceProgram>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for e in std::fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|x| x == "dfy") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files).with_context(|| format!("reading corpus {}", dir.display()))?;
    files.sort();
    files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(SourceProgram::from_text(name, &text))
        })
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading dataset {}", path.display()))?;
    Ok(Dataset::from_jsonl(&text)?)
}

/// Category and taxonomy counts of a dataset.
pub fn dataset_summary(d: &Dataset) -> String {
    let both = d.wo2.iter().filter(|i| i.wo2_tag == Some(Wo2Tag::BothWo1)).count();
    let none = d.wo2.iter().filter(|i| i.wo2_tag == Some(Wo2Tag::NoneWo1)).count();
    let mut s = format!(
        "w/o-1: {}\nw/o-2: {} (both in w/o-1: {both}, none in w/o-1: {none})\nw/o-all: {}\n",
        d.wo1.len(),
        d.wo2.len(),
        d.woall.len()
    );
    let mut types: BTreeMap<&str, usize> = BTreeMap::new();
    for t in [AssertionType::Index, AssertionType::Test, AssertionType::Multi, AssertionType::Other] {
        types.insert(t.label(), d.wo1.iter().filter(|i| i.primary_type() == t).count());
    }
    let parts: Vec<String> = types.iter().map(|(k, v)| format!("{k} {v}")).collect();
    s.push_str(&format!("w/o-1 assertion types: {}\n", parts.join(", ")));
    if !d.skipped.is_empty() {
        s.push_str(&format!("skipped programs: {}\n", d.skipped.join(", ")));
    }
    s
}

pub struct BuildDatasetArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub precompute_verdicts: bool,
}

pub fn cmd_build_dataset(args: &BuildDatasetArgs, backends: &Backends, dry_run: bool, out: &mut dyn Write) -> Result<i32> {
    let corpus = read_corpus(&args.corpus)?;
    if corpus.is_empty() {
        bail!("no .dfy files under {}", args.corpus.display());
    }
    if dry_run {
        let mut calls = corpus.len();
        for p in &corpus {
            for span in p.method_spans().unwrap_or_default() {
                let n = daisy_core::source::extract_assertions(p, &span).len();
                let restores = n + n * n.saturating_sub(1) / 2 + usize::from(n >= 3);
                calls += 2 * restores;
                if args.precompute_verdicts {
                    calls += n * span.insertion_lines().count();
                }
            }
        }
        writeln!(out, "dry run: {} programs, at most {calls} verifier calls, 0 model calls", corpus.len())?;
        return Ok(EXIT_OK);
    }
    let d = build_dataset(&corpus, &backends.verifier, BuildOptions { precompute_verdicts: args.precompute_verdicts })?;
    if d.is_empty() {
        bail!("no benchmark instances were produced from {}", args.corpus.display());
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&args.out, d.to_jsonl())?;
    write!(out, "{}", dataset_summary(&d))?;
    Ok(EXIT_OK)
}

pub fn cmd_embed_db(dataset: &Path, db_out: &Path, backends: &Backends, dry_run: bool, out: &mut dyn Write) -> Result<i32> {
    let d = load_dataset(dataset)?;
    if dry_run {
        writeln!(out, "dry run: {} examples, 1 embedding request batch per example, 0 verifier calls", d.wo1.len())?;
        return Ok(EXIT_OK);
    }
    let db = build_example_db(&d.wo1, backends.embedder()?)?;
    std::fs::write(db_out, db.to_jsonl())?;
    writeln!(out, "{} examples written to {}", db.len(), db_out.display())?;
    Ok(EXIT_OK)
}

fn load_example_db(cfg: &RunConfig, explicit: Option<&Path>) -> Result<Option<ExampleDb>> {
    if cfg.retrieval_config()?.strategy == RetrievalStrategy::NoEx {
        return Ok(None);
    }
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.example_db.clone())
        .context("this retrieval strategy needs an example database (--example-db or paths.example_db)")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(ExampleDb::from_jsonl(&text)?))
}

fn examples_for(task: &RepairTask, cfg: &RunConfig, db: Option<&ExampleDb>, backends: &Backends) -> Result<Vec<ExampleEntry>> {
    match db {
        None => Ok(Vec::new()),
        Some(db) => {
            let r = Retriever { db, config: cfg.retrieval_config()?, embedder: backends.embedder_opt() };
            Ok(r.examples_for(task)?)
        }
    }
}

pub struct LocalizeArgs {
    pub file: PathBuf,
    pub example_db: Option<PathBuf>,
}

pub fn cmd_localize(cfg: &RunConfig, args: &LocalizeArgs, backends: &Backends, dry_run: bool, out: &mut dyn Write) -> Result<i32> {
    let strategy = cfg.localization_strategy()?;
    let program = read_program(&args.file)?;
    if dry_run {
        let llm = strategy.members().iter().filter(|m| m.uses_llm()).count();
        writeln!(out, "dry run: 1 verifier call, at most {} model calls per failing declaration", 2 * llm)?;
        return Ok(EXIT_OK);
    }
    let result = backends.verifier.verify(&program)?;
    if result.is_verified() {
        writeln!(out, "{} already verifies; nothing to localize", args.file.display())?;
        return Ok(EXIT_OK);
    }
    let db = if strategy.uses_examples() { load_example_db(cfg, args.example_db.as_deref())? } else { None };
    let t = templates(cfg)?;
    for task in RepairTask::from_verification(&program, &result)? {
        let examples = examples_for(&task, cfg, db.as_ref(), backends)?;
        let ctx = LocalizeContext {
            llm: backends.llm().ok(),
            examples: &examples,
            template: &t.localize,
            temperature: cfg.provider.localize_temperature,
        };
        for r in locate(&task, &strategy, &ctx) {
            let lines: Vec<String> = r.points.iter().map(|p| (p.line + 1).to_string()).collect();
            let status = match (&r.error, lines.is_empty()) {
                (Some(e), _) => format!("error: {e}"),
                (None, true) => "no position".to_string(),
                (None, false) => format!("insert before line {}", lines.join(", ")),
            };
            writeln!(out, "{} [{}]: {status}", task.method.name, r.strategy)?;
        }
    }
    Ok(EXIT_OK)
}

fn read_program(path: &Path) -> Result<SourceProgram> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SourceProgram::from_text(path.to_string_lossy(), &text))
}

/// `dir/name.dfy` becomes `dir/name.repaired.dfy`.
pub fn repaired_path(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "program".into());
    file.with_file_name(format!("{stem}.repaired.dfy"))
}

pub struct RepairArgs {
    pub file: PathBuf,
    pub out: Option<PathBuf>,
    pub example_db: Option<PathBuf>,
    /// Where to write the JSON run log.
    pub log: Option<PathBuf>,
}

/// Inserted (1-based line in the repaired file, text) pairs.
pub fn inserted_lines(outcome: &RepairOutcome) -> Vec<(usize, String)> {
    let RepairStatus::VerifiedWith(attempt) = &outcome.status else {
        return Vec::new();
    };
    let mut shift = 0;
    let mut out = Vec::new();
    for (p, text) in attempt.inserted() {
        out.push((p.line + shift + 1, text.to_string()));
        shift += text.split('\n').count();
    }
    out
}

pub fn cmd_repair(cfg: &RunConfig, args: &RepairArgs, backends: &Backends, dry_run: bool, out: &mut dyn Write) -> Result<i32> {
    let strategy = cfg.localization_strategy()?;
    let program = read_program(&args.file)?;
    if dry_run {
        let members = strategy.members();
        let llm = members.iter().filter(|m| m.uses_llm()).count();
        writeln!(
            out,
            "dry run: at most {} verifier calls and {} model calls per failing declaration",
            1 + 30 * members.len(),
            2 * llm + 2 * members.len()
        )?;
        return Ok(EXIT_OK);
    }
    let result = backends.verifier.verify(&program)?;
    match result.status {
        VerificationStatus::Verified => {
            writeln!(out, "{} already verifies; nothing to repair", args.file.display())?;
            return Ok(EXIT_OK);
        }
        VerificationStatus::Failed => {}
        other => {
            writeln!(out, "cannot repair {}: verifier status {other:?}", args.file.display())?;
            write!(out, "{}", result.output)?;
            return Ok(EXIT_ERROR);
        }
    }
    let llm = match backends.llm() {
        Ok(l) => l,
        Err(e) => {
            writeln!(out, "{e}")?;
            return Ok(EXIT_ERROR);
        }
    };
    let db = load_example_db(cfg, args.example_db.as_deref())?;
    let t = templates(cfg)?;
    let options = infer_options(cfg, &t);
    let memo = VerifyMemo::new();
    let mut logs = Vec::new();
    let mut errors = Vec::new();
    let mut tried: Vec<(String, RepairOutcome)> = Vec::new();
    for task in RepairTask::from_verification(&program, &result)? {
        let examples = examples_for(&task, cfg, db.as_ref(), backends)?;
        let ctx = LocalizeContext { llm: Some(llm), examples: &examples, template: &t.localize, temperature: cfg.provider.localize_temperature };
        let results = locate(&task, &strategy, &ctx);
        let mut seen = BTreeSet::new();
        for r in &results {
            if let Some(e) = &r.error {
                errors.push(format!("{} [{}]: {e}", task.method.name, r.strategy));
            }
            if r.points.is_empty() || !seen.insert(r.lines()) {
                continue;
            }
            let outcome = repair(&task, r, &examples, llm, &backends.verifier, &memo, &options);
            logs.push(outcome.run_log(&task.id, &r.strategy.to_string()));
            if let RepairStatus::Error(e) = &outcome.status {
                errors.push(e.clone());
            }
            if let Some(repaired) = &outcome.repaired_program {
                let path = args.out.clone().unwrap_or_else(|| repaired_path(&args.file));
                std::fs::write(&path, repaired.to_text()).with_context(|| format!("writing {}", path.display()))?;
                writeln!(out, "verified after {} attempt(s) using {} localization", outcome.attempts_tried, r.strategy)?;
                for (line, text) in inserted_lines(&outcome) {
                    writeln!(out, "  line {line}: {text}")?;
                }
                writeln!(out, "wrote {}", path.display())?;
                write_log(args, &logs)?;
                return Ok(EXIT_OK);
            }
            tried.push((format!("{} [{}]", task.method.name, r.strategy), outcome));
        }
    }
    write_log(args, &logs)?;
    for (label, outcome) in &tried {
        writeln!(out, "{label}: {} attempt(s), none verified", outcome.attempts_tried)?;
        for (k, c) in outcome.candidates.per_position.iter().enumerate() {
            writeln!(out, "  position {}:", k + 1)?;
            for text in c {
                writeln!(out, "    {text}")?;
            }
        }
    }
    for e in &errors {
        writeln!(out, "error: {e}")?;
    }
    if tried.iter().any(|(_, o)| o.attempts_tried > 0) || errors.is_empty() {
        writeln!(out, "no repair found for {}", args.file.display())?;
        Ok(EXIT_EXHAUSTED)
    } else {
        Ok(EXIT_ERROR)
    }
}

fn write_log(args: &RepairArgs, logs: &[serde_json::Value]) -> Result<()> {
    if let Some(p) = &args.log {
        std::fs::write(p, serde_json::to_string_pretty(logs)? + "\n")?;
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub example_db: Option<PathBuf>,
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    args: &EvaluateArgs,
    backends: &Backends,
    cancel: Option<&AtomicBool>,
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let ecfg = experiment_config(cfg)?;
    let dataset = load_dataset(&args.dataset)?;
    if dry_run {
        let plan = plan_calls(&dataset, &ecfg);
        writeln!(
            out,
            "dry run: {} instances, at most {} model calls and {} verifier calls",
            plan.instances, plan.llm_calls_max, plan.verifier_calls_max
        )?;
        return Ok(EXIT_OK);
    }
    let db = load_example_db(cfg, args.example_db.as_deref())?;
    let llm = backends.llm()?;
    let ctx = ExperimentContext {
        llm,
        verifier: &backends.verifier,
        examples: db.as_ref(),
        embedder: backends.embedder_opt(),
        cancel,
    };
    let report = run_experiment(&dataset, &ecfg, &ctx);
    report.write(&args.out_dir)?;
    std::fs::write(args.out_dir.join("histograms.csv"), histograms_csv(&dataset))?;
    write!(out, "{}", report.render_text())?;
    writeln!(out, "\nreports written to {}", args.out_dir.display())?;
    if report.complete {
        Ok(EXIT_OK)
    } else {
        writeln!(out, "run interrupted; the report is incomplete")?;
        Ok(EXIT_INTERRUPTED)
    }
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let r = ExperimentReport::from_json(&text)?;
    r.check_consistency()?;
    Ok(r)
}

pub fn cmd_report(report: &Path, compare: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let a = load_report(report)?;
    write!(out, "{}", a.render_text())?;
    if let Some(other) = compare {
        let b = load_report(other)?;
        let o = daisy_core::evaluate::overlap_analysis(&a, &b)?;
        writeln!(out, "\nOverlap of verified instances")?;
        writeln!(out, "only {:<24} {:>5}", a.localization, o.only_a)?;
        writeln!(out, "only {:<24} {:>5}", b.localization, o.only_b)?;
        writeln!(out, "both {:<24} {:>5}", "", o.both)?;
        writeln!(out, "union{:<24} {:>5}", "", o.union)?;
    }
    Ok(EXIT_OK)
}

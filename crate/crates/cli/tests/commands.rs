use std::path::{Path, PathBuf};

use clap::Parser;

use daisy_cli::commands::{EXIT_ERROR, EXIT_EXHAUSTED, EXIT_OK};
use daisy_cli::{resolve_config, run, Cli};

fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/testdata")
}

fn rules() -> String {
    testdata().join("corpus_rules.json").display().to_string()
}

fn daisy(args: &[&str]) -> (i32, String) {
    let mut argv = vec!["daisy"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).unwrap();
    let mut out = Vec::new();
    let code = run(cli, None, &mut out).unwrap();
    (code, String::from_utf8(out).unwrap())
}

fn build(dir: &Path) -> PathBuf {
    let ds = dir.join("data/dataset.jsonl");
    let corpus = testdata().join("corpus");
    let (code, _) = daisy(&[
        "--verifier-rules",
        &rules(),
        "build-dataset",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    ds
}

#[test]
fn build_dataset_summary_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("nested/out.jsonl");
    let corpus = testdata().join("corpus");
    let (code, out) = daisy(&[
        "--verifier-rules",
        &rules(),
        "build-dataset",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, std::fs::read_to_string(testdata().join("golden/build_summary.txt")).unwrap());
    assert_eq!(std::fs::read_to_string(&ds).unwrap().lines().count(), 11);
}

#[test]
fn build_dataset_on_empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cli = Cli::try_parse_from([
        "daisy",
        "--verifier-rules",
        &rules(),
        "build-dataset",
        "--corpus",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("d.jsonl").to_str().unwrap(),
    ])
    .unwrap();
    assert!(run(cli, None, &mut Vec::new()).is_err());
}

#[test]
fn dry_runs_make_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path());
    // No model is configured, so any model call would fail.
    let (code, out) = daisy(&[
        "--verifier-rules",
        &rules(),
        "--dry-run",
        "evaluate",
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("dry run: 11 instances"), "{out}");
    assert!(!dir.path().join("r").exists());
    let corpus = testdata().join("corpus");
    let x = dir.path().join("x.jsonl");
    let (code, out) = daisy(&[
        "--verifier-rules",
        &rules(),
        "--dry-run",
        "build-dataset",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        x.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("dry run: 5 programs"), "{out}");
    assert!(!x.exists());
}

#[test]
fn localize_with_heuristics_needs_no_example_db() {
    let file = testdata().join("scenario/find_range_failing.dfy");
    let (code, out) = daisy(&["--verifier-rules", &rules(), "localize", "--strategy", "laurel+", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "Main [Laurel_fl+]: insert before line 39\n");
}

#[test]
fn repair_of_verified_file_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("counter.dfy");
    std::fs::copy(testdata().join("corpus/counter.dfy"), &file).unwrap();
    let (code, out) = daisy(&["--verifier-rules", &rules(), "repair", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("already verifies"), "{out}");
    assert!(!dir.path().join("counter.repaired.dfy").exists());
}

#[test]
fn repair_reports_candidates_when_exhausted() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f.dfy");
    std::fs::copy(testdata().join("scenario/find_range_failing.dfy"), &file).unwrap();
    let script = dir.path().join("llm.json");
    std::fs::write(
        &script,
        r#"{"replies": [{"contains": "/*<Assertion is Missing Here>*/", "reply": "[[\"assert true;\"], [\"assert 1 == 1;\"]]"}], "default": "[5, 6]"}"#,
    )
    .unwrap();
    let log = dir.path().join("log.json");
    let (code, out) = daisy(&[
        "--verifier-rules",
        &rules(),
        "--llm-script",
        script.to_str().unwrap(),
        "repair",
        "--retrieval",
        "noex",
        "--log",
        log.to_str().unwrap(),
        file.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_EXHAUSTED, "{out}");
    assert!(out.contains("    assert true;"), "{out}");
    assert!(out.contains("no repair found"), "{out}");
    let logs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(logs.as_array().unwrap().len(), 2);
    assert_eq!(logs[0]["outcome"]["kind"], "Exhausted");
}

#[test]
fn repair_without_a_model_is_a_tool_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f.dfy");
    std::fs::copy(testdata().join("scenario/find_range_failing.dfy"), &file).unwrap();
    let script = dir.path().join("llm.json");
    std::fs::write(&script, r#"{"replies": []}"#).unwrap();
    let (code, out) = daisy(&[
        "--verifier-rules",
        &rules(),
        "--llm-script",
        script.to_str().unwrap(),
        "repair",
        "--strategy",
        "llm",
        "--retrieval",
        "noex",
        file.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_ERROR, "{out}");
}

#[test]
fn evaluate_then_report_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path());
    let script = dir.path().join("llm.json");
    std::fs::write(&script, r#"{"replies": [], "default": "[[\"assert true;\"]]"}"#).unwrap();
    let mut reports = Vec::new();
    for strategy in ["laurel", "laurel+"] {
        let out_dir = dir.path().join(strategy);
        let (code, out) = daisy(&[
            "--verifier-rules",
            &rules(),
            "--llm-script",
            script.to_str().unwrap(),
            "evaluate",
            "--dataset",
            ds.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--strategy",
            strategy,
            "--retrieval",
            "noex",
        ]);
        assert_eq!(code, EXIT_OK, "{out}");
        for f in ["report.json", "report.txt", "histograms.csv"] {
            assert!(out_dir.join(f).exists(), "{f}");
        }
        let csv = std::fs::read_to_string(out_dir.join("histograms.csv")).unwrap();
        assert!(csv.starts_with("histogram,bucket,instances\n"), "{csv}");
        reports.push(out_dir.join("report.json"));
    }
    let (code, out) = daisy(&["report", reports[0].to_str().unwrap(), "--compare", reports[1].to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("Overlap of verified instances"), "{out}");
}

#[test]
fn flags_override_file_and_env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("daisy.toml");
    std::fs::write(&cfg_path, "seed = 1\njobs = 3\nlocalization = \"llm\"\n[retrieval]\nalpha = 0.25\n").unwrap();
    let cli = Cli::try_parse_from([
        "daisy",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "5",
        "evaluate",
        "--strategy",
        "laurel+",
        "--alpha",
        "0.75",
    ])
    .unwrap();
    let flags = match &cli.command {
        daisy_cli::Command::Evaluate { flags, .. } => flags,
        _ => unreachable!(),
    };
    let cfg = resolve_config(&cli.global, Some(flags)).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.jobs, 3);
    assert_eq!(cfg.localization, "laurel+");
    assert_eq!(cfg.retrieval.alpha, 0.75);

    let mut cfg = cfg;
    cfg.apply_env_from(|k| (k == "DAISY_SEED").then(|| "11".into())).unwrap();
    assert_eq!(cfg.seed, 11);
}

#[test]
fn unknown_flag_values_are_usage_errors() {
    assert!(Cli::try_parse_from(["daisy", "evaluate", "--strategy", "magic"]).is_err());
    assert!(Cli::try_parse_from(["daisy", "evaluate", "--retrieval", "bm25"]).is_err());
}

#[test]
fn example_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../daisy.example.toml");
    let cfg = daisy_cli::config::RunConfig::load(Some(&path)).unwrap();
    assert_eq!(cfg, daisy_cli::config::RunConfig::default());
}

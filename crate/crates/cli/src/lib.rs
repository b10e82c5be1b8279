//! `daisy` command line: argument parsing, configuration and dispatch.

pub mod backends;
pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backends::Backends;
use crate::commands::*;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "daisy", version, about = "Infer missing helper assertions for Dafny programs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML configuration file (default: ./daisy.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory for cached model replies and embeddings.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Path to the `dafny` executable.
    #[arg(long, global = true)]
    pub verifier_path: Option<String>,
    /// Verification time limit in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<u64>,
    /// Print planned verifier and model call counts without running them.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Replay verifier results from a JSON script instead of running Dafny.
    #[arg(long, global = true)]
    pub verifier_script: Option<PathBuf>,
    /// Use a declarative rule file instead of running Dafny.
    #[arg(long, global = true)]
    pub verifier_rules: Option<PathBuf>,
    /// Replay model replies from a JSON script instead of calling the API.
    #[arg(long, global = true)]
    pub llm_script: Option<PathBuf>,
    /// `hash` for the offline embedder, `http` for the configured API.
    #[arg(long, global = true)]
    pub embedder: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Laurel,
    #[value(name = "laurel+")]
    LaurelPlus,
    Llm,
    LlmEx,
    Hybrid,
    GroundTruth,
}

impl StrategyArg {
    fn config_name(self) -> &'static str {
        match self {
            StrategyArg::Laurel => "laurel",
            StrategyArg::LaurelPlus => "laurel+",
            StrategyArg::Llm => "llm",
            StrategyArg::LlmEx => "llm-ex",
            StrategyArg::Hybrid => "hybrid",
            StrategyArg::GroundTruth => "ground-truth",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RetrievalArg {
    Noex,
    Random,
    Tfidf,
    Embed,
    Mulemb,
}

#[derive(Debug, Args, Default)]
pub struct StrategyFlags {
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub retrieval: Option<RetrievalArg>,
    /// Weight of the error-message similarity in `mulemb`.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of in-context examples.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub example_db: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build w/o-1, w/o-2 and w/o-all instances from a corpus of verified programs.
    BuildDataset {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the per-line position oracle for w/o-1 instances.
        #[arg(long)]
        no_verdicts: bool,
    },
    /// Embed the w/o-1 instances of a dataset as retrieval examples.
    EmbedDb {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict where assertions are missing in a failing program.
    Localize {
        file: PathBuf,
        #[command(flatten)]
        flags: StrategyFlags,
    },
    /// Localize, infer and verify; writes `<name>.repaired.dfy` on success.
    Repair {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the JSON run log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        flags: StrategyFlags,
    },
    /// Run a strategy over a dataset and write report.json, report.txt and histograms.csv.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: StrategyFlags,
    },
    /// Print a saved report, optionally with the overlap against another.
    Report {
        report: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

/// File configuration, then flags, then environment.
pub fn resolve_config(global: &GlobalArgs, flags: Option<&StrategyFlags>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(j) = global.jobs {
        cfg.jobs = j;
    }
    if let Some(d) = &global.cache_dir {
        cfg.cache_dir = Some(d.clone());
    }
    if let Some(p) = &global.verifier_path {
        cfg.verifier.executable = p.clone();
    }
    if let Some(t) = global.timeout {
        cfg.verifier.timeout_seconds = t;
    }
    if let Some(p) = &global.verifier_script {
        cfg.offline.verifier_script = Some(p.clone());
    }
    if let Some(p) = &global.verifier_rules {
        cfg.offline.verifier_rules = Some(p.clone());
    }
    if let Some(p) = &global.llm_script {
        cfg.offline.llm_script = Some(p.clone());
    }
    if let Some(e) = &global.embedder {
        cfg.offline.embedder = Some(e.clone());
    }
    if let Some(f) = flags {
        if let Some(s) = f.strategy {
            cfg.localization = s.config_name().into();
        }
        if let Some(r) = f.retrieval {
            cfg.retrieval.strategy = format!("{r:?}").to_ascii_lowercase();
        }
        if let Some(a) = f.alpha {
            cfg.retrieval.alpha = a;
        }
        if let Some(k) = f.k {
            cfg.retrieval.k = k;
        }
        if let Some(db) = &f.example_db {
            cfg.paths.example_db = Some(db.clone());
        }
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn required(opt: Option<PathBuf>, fallback: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    opt.or(fallback).ok_or_else(|| anyhow::anyhow!("missing {what}"))
}

/// Runs one parsed command line and returns the exit code.
pub fn run(cli: Cli, cancel: Option<&AtomicBool>, out: &mut dyn Write) -> Result<i32> {
    let flags = match &cli.command {
        Command::Localize { flags, .. } | Command::Repair { flags, .. } | Command::Evaluate { flags, .. } => Some(flags),
        _ => None,
    };
    let cfg = resolve_config(&cli.global, flags)?;
    if cfg.jobs > 0 {
        // Fails only when the pool was already built, e.g. by an earlier run in the same process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    let dry = cli.global.dry_run;
    if let Command::Report { report, compare } = &cli.command {
        return cmd_report(report, compare.as_deref(), out);
    }
    let backends = Backends::from_config(&cfg)?;
    match cli.command {
        Command::BuildDataset { corpus, out: dest, no_verdicts } => {
            let args = BuildDatasetArgs {
                corpus: required(corpus, cfg.paths.corpus.clone(), "--corpus")?,
                out: required(dest, cfg.paths.dataset.clone(), "--out")?,
                precompute_verdicts: !no_verdicts,
            };
            cmd_build_dataset(&args, &backends, dry, out)
        }
        Command::EmbedDb { dataset, out: dest } => {
            let dataset = required(dataset, cfg.paths.dataset.clone(), "--dataset")?;
            let dest = required(dest, cfg.paths.example_db.clone(), "--out")?;
            cmd_embed_db(&dataset, &dest, &backends, dry, out)
        }
        Command::Localize { file, flags } => {
            cmd_localize(&cfg, &LocalizeArgs { file, example_db: flags.example_db }, &backends, dry, out)
        }
        Command::Repair { file, out: dest, log, flags } => {
            let args = RepairArgs { file, out: dest, example_db: flags.example_db, log };
            cmd_repair(&cfg, &args, &backends, dry, out)
        }
        Command::Evaluate { dataset, out: dest, flags } => {
            let args = EvaluateArgs {
                dataset: required(dataset, cfg.paths.dataset.clone(), "--dataset")?,
                out_dir: required(dest, cfg.paths.reports.clone(), "--out")?,
                example_db: flags.example_db,
            };
            cmd_evaluate(&cfg, &args, &backends, cancel, dry, out)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

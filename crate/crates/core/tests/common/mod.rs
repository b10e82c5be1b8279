#![allow(dead_code)]

use std::path::{Path, PathBuf};

use daisy_core::verifier::RuleVerifier;
use daisy_core::SourceProgram;

pub fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata")
}

/// The mini-corpus, keyed by file name, in name order.
pub fn corpus() -> Vec<SourceProgram> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(testdata().join("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "dfy"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            SourceProgram::from_text(name, &std::fs::read_to_string(p).unwrap())
        })
        .collect()
}

pub fn rules() -> RuleVerifier {
    RuleVerifier::load(&testdata().join("corpus_rules.json")).unwrap()
}

pub fn scenario_program() -> SourceProgram {
    let text = std::fs::read_to_string(testdata().join("scenario/find_range_failing.dfy")).unwrap();
    SourceProgram::from_text("find_range_failing.dfy", &text)
}

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{VerificationResult, Verifier, VerifierError};
use crate::source::SourceProgram;

/// One scripted response, keyed either by digest or by program text.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    pub result: VerificationResult,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    entries: Vec<ScriptEntry>,
    #[serde(default)]
    default: Option<VerificationResult>,
}

/// Maps program digests to fixed results.
///
/// In strict mode an unknown program is an error; otherwise the default
/// result is returned.
#[derive(Debug, Default)]
pub struct ScriptedVerifier {
    script: HashMap<String, VerificationResult>,
    default: Option<VerificationResult>,
    calls: AtomicUsize,
}

impl ScriptedVerifier {
    pub fn strict() -> Self {
        Self::default()
    }

    pub fn with_default(result: VerificationResult) -> Self {
        Self { default: Some(result), ..Self::default() }
    }

    pub fn insert(&mut self, program: &SourceProgram, result: VerificationResult) {
        self.script.insert(program.digest(), result);
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, result: VerificationResult) {
        self.script.insert(digest.into(), result);
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn from_json(text: &str) -> Result<Self, VerifierError> {
        let file: ScriptFile = serde_json::from_str(text).map_err(|e| VerifierError::Config(e.to_string()))?;
        let mut v = Self { default: file.default, ..Self::default() };
        for e in file.entries {
            let key = match (e.digest, e.program) {
                (Some(d), _) => d,
                (None, Some(p)) => SourceProgram::from_text("", &p).digest(),
                (None, None) => return Err(VerifierError::Config("script entry needs a digest or program".into())),
            };
            v.script.insert(key, e.result);
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self, VerifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut entries: Vec<_> = self
            .script
            .iter()
            .map(|(d, r)| ScriptEntry { digest: Some(d.clone()), program: None, result: r.clone() })
            .collect();
        entries.sort_by(|a, b| a.digest.cmp(&b.digest));
        serde_json::to_string_pretty(&ScriptFile { entries, default: self.default.clone() }).expect("serializable")
    }
}

impl Verifier for ScriptedVerifier {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = program.digest();
        match self.script.get(&digest).or(self.default.as_ref()) {
            Some(r) => Ok(r.clone()),
            None => Err(VerifierError::MissingScriptEntry(digest)),
        }
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::VerificationStatus;

    #[test]
    fn strict_and_default() {
        let p = SourceProgram::from_text("a.dfy", "method M() {}\n");
        let mut v = ScriptedVerifier::strict();
        assert!(matches!(v.verify(&p), Err(VerifierError::MissingScriptEntry(_))));
        v.insert(&p, VerificationResult::verified());
        assert!(v.verify(&p).unwrap().is_verified());
        assert_eq!(v.calls(), 2);

        let d = ScriptedVerifier::with_default(VerificationResult::with_status(VerificationStatus::Failed));
        assert_eq!(d.verify(&p).unwrap().status, VerificationStatus::Failed);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"entries":[{"program":"method M() {}\n","result":{"status":"Verified"}}]}"#;
        let v = ScriptedVerifier::from_json(text).unwrap();
        let p = SourceProgram::from_text("b.dfy", "method  M()  {}");
        assert!(v.verify(&p).unwrap().is_verified());
        let again = ScriptedVerifier::from_json(&v.to_json()).unwrap();
        assert_eq!(again.len(), 1);
    }
}

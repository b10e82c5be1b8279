use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{VerificationResult, VerificationStatus, Verifier, VerifierConfig, VerifierError};
use crate::source::SourceProgram;

static LAUNCHES: AtomicUsize = AtomicUsize::new(0);

/// Number of verifier processes started by this process so far.
pub fn process_launches() -> usize {
    LAUNCHES.load(Ordering::SeqCst)
}

/// Runs `dafny verify` on a temporary copy of the program.
#[derive(Clone, Debug)]
pub struct DafnyCli {
    config: VerifierConfig,
}

impl DafnyCli {
    pub fn new(config: VerifierConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    /// True if the configured executable can be started.
    pub fn is_available(&self) -> bool {
        self.version().is_some()
    }

    pub fn version(&self) -> Option<String> {
        let out = Command::new(&self.config.executable).arg("--version").stdin(Stdio::null()).output().ok()?;
        out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    fn args(&self, file: &str) -> Vec<String> {
        let mut args = vec![
            "verify".to_string(),
            file.to_string(),
            "--cores".to_string(),
            self.config.cores.to_string(),
            "--verification-time-limit".to_string(),
            self.config.timeout_seconds.to_string(),
        ];
        args.extend(self.config.extra_args.iter().cloned());
        args
    }
}

impl Verifier for DafnyCli {
    fn verify(&self, program: &SourceProgram) -> Result<VerificationResult, VerifierError> {
        let dir = tempfile::Builder::new().prefix("daisy-verify").tempdir()?;
        let name = std::path::Path::new(program.path())
            .file_name()
            .and_then(|n| n.to_str())
            .filter(|n| n.ends_with(".dfy"))
            .unwrap_or("program.dfy")
            .to_string();
        let file = dir.path().join(&name);
        std::fs::write(&file, program.to_text())?;

        let start = Instant::now();
        LAUNCHES.fetch_add(1, Ordering::SeqCst);
        let mut child = Command::new(&self.config.executable)
            .args(self.args(&file.to_string_lossy()))
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| VerifierError::Tool(format!("cannot start {}: {e}", self.config.executable)))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let budget = Duration::from_secs(self.config.timeout_seconds.max(1));
        let exited = child.wait_timeout(budget)?;
        if exited.is_none() {
            let _ = child.kill();
            let _ = child.wait();
        }
        let mut output = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !err.trim().is_empty() {
            output.push('\n');
            output.push_str(&err);
        }
        let wall_time = start.elapsed().as_secs_f64();
        if exited.is_none() {
            log::warn!("verifier exceeded {}s on {}", budget.as_secs(), program.path());
            let mut r = VerificationResult::with_status(VerificationStatus::Timeout);
            r.wall_time = wall_time;
            r.output = output;
            return Ok(r);
        }
        // Diagnostics name the temporary file; report the program's own path.
        let output = output.replace(&*file.to_string_lossy(), program.path());
        Ok(VerificationResult::from_output(output, program, wall_time))
    }

    fn describe(&self) -> String {
        match self.version() {
            Some(v) => format!("dafny {v}"),
            None => format!("dafny ({})", self.config.executable),
        }
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    fn fake_tool(dir: &std::path::Path, body: &str) -> String {
        let path = dir.join("fake-dafny");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path.to_string_lossy().into_owned()
    }

    #[test]
    fn parses_tool_output() {
        let dir = tempfile::tempdir().unwrap();
        let exe = fake_tool(
            dir.path(),
            "echo \"$2(2,3): Error: assertion might not hold\"\necho\necho 'Dafny program verifier finished with 0 verified, 1 error'",
        );
        let v = DafnyCli::new(VerifierConfig { executable: exe, timeout_seconds: 10, ..Default::default() });
        let before = process_launches();
        let r = v.verify(&SourceProgram::from_text("a/x.dfy", "method M() {\n  assert false;\n}\n")).unwrap();
        assert_eq!(r.status, VerificationStatus::Failed);
        assert_eq!(r.diagnostics[0].file, "a/x.dfy");
        assert_eq!(r.diagnostics[0].line, 2);
        assert!(process_launches() > before);
    }

    #[test]
    fn kills_on_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let exe = fake_tool(dir.path(), "exec sleep 5");
        let v = DafnyCli::new(VerifierConfig { executable: exe, timeout_seconds: 1, ..Default::default() });
        let r = v.verify(&SourceProgram::from_text("x.dfy", "\n")).unwrap();
        assert_eq!(r.status, VerificationStatus::Timeout);
        assert!(r.wall_time < 4.0);
    }

    #[test]
    fn missing_tool_is_error() {
        let v = DafnyCli::new(VerifierConfig { executable: "/nonexistent/dafny".into(), ..Default::default() });
        assert!(!v.is_available());
        assert!(matches!(v.verify(&SourceProgram::from_text("x.dfy", "\n")), Err(VerifierError::Tool(_))));
    }
}

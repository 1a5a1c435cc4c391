//! Sample verification.

use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verifier {
    /// Passes when the sample contains `needle` (or matches it as a regex).
    NeedleMatch {
        needle: String,
        #[serde(default)]
        regex: bool,
    },
    /// Copies the fixture, replaces the line containing `marker` in `file`
    /// with the sample (indented like the marker), and runs `command` there.
    CommandExec {
        file: String,
        marker: String,
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    30.0
}

pub fn verify(sample: &str, verifier: &Verifier, fixture: &Path) -> Result<bool, EvalError> {
    match verifier {
        Verifier::NeedleMatch { needle, regex } => {
            if needle.is_empty() {
                return Err(EvalError::Verifier("empty needle".into()));
            }
            if *regex {
                let re = regex::Regex::new(needle).map_err(|e| EvalError::Verifier(e.to_string()))?;
                Ok(re.is_match(sample))
            } else {
                Ok(sample.contains(needle.as_str()))
            }
        }
        Verifier::CommandExec {
            file,
            marker,
            command,
            timeout_secs,
        } => {
            if command.is_empty() || marker.is_empty() {
                return Err(EvalError::Verifier("command_exec needs a command and a marker".into()));
            }
            if !timeout_secs.is_finite() || *timeout_secs <= 0.0 {
                return Err(EvalError::Verifier("timeout must be positive".into()));
            }
            let sandbox = tempfile::tempdir().map_err(|e| EvalError::Sandbox(e.to_string()))?;
            copy_tree(fixture, sandbox.path()).map_err(|e| EvalError::Sandbox(format!("copy {}: {e}", fixture.display())))?;
            let target = sandbox.path().join(file);
            let text = std::fs::read_to_string(&target).map_err(|e| EvalError::Sandbox(format!("{file}: {e}")))?;
            let patched = splice(&text, marker, sample).ok_or_else(|| EvalError::Sandbox(format!("marker {marker:?} not found in {file}")))?;
            std::fs::write(&target, patched).map_err(|e| EvalError::Sandbox(e.to_string()))?;
            let mut child = Command::new(&command[0])
                .args(&command[1..])
                .current_dir(sandbox.path())
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| EvalError::Sandbox(format!("spawn {}: {e}", command[0])))?;
            let deadline = Instant::now() + Duration::from_secs_f64(*timeout_secs);
            loop {
                match child.try_wait().map_err(|e| EvalError::Sandbox(e.to_string()))? {
                    Some(status) => return Ok(status.success()),
                    None if Instant::now() >= deadline => {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Ok(false);
                    }
                    None => std::thread::sleep(Duration::from_millis(5)),
                }
            }
        }
    }
}

/// Replaces the first line containing `marker` with `sample`, each sample
/// line prefixed by the marker line's indentation.
fn splice(text: &str, marker: &str, sample: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len() + sample.len());
    let mut done = false;
    for line in text.split_inclusive('\n') {
        if !done && line.contains(marker) {
            let indent: String = line.chars().take_while(|c| *c == ' ' || *c == '\t').collect();
            for s in sample.lines() {
                if s.trim().is_empty() {
                    out.push('\n');
                } else {
                    out.push_str(&indent);
                    out.push_str(s);
                    out.push('\n');
                }
            }
            done = true;
        } else {
            out.push_str(line);
        }
    }
    done.then_some(out)
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let dest = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            std::fs::create_dir_all(&dest)?;
            copy_tree(&entry.path(), &dest)?;
        } else {
            std::fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

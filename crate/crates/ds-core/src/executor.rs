//! Sandboxed execution of generated scripts: fresh process group, scrubbed
//! environment, bounded output capture, hard timeout, and metric extraction
//! from stdout.

use std::fs::{File, OpenOptions};
use std::io::Read;
use std::os::unix::io::AsRawFd;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::MetricDirection;

pub const SCRIPT_FILE: &str = "train.py";
const WORKDIR_LOCK: &str = ".run.lock";
const POLL_INTERVAL: Duration = Duration::from_millis(25);

/// Execution limits and location for one script run.
#[derive(Debug, Clone)]
pub struct SandboxPolicy {
    pub timeout: Duration,
    pub workdir: PathBuf,
    pub interpreter: String,
    pub max_output_bytes: usize,
}

impl SandboxPolicy {
    pub fn new(workdir: &Path) -> Self {
        SandboxPolicy {
            timeout: Duration::from_secs(3600),
            workdir: workdir.to_path_buf(),
            interpreter: "python3".to_string(),
            max_output_bytes: 1024 * 1024,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// Workdir-independent sandbox limits, applied to each task's directory.
#[derive(Debug, Clone)]
pub struct SandboxSettings {
    pub timeout: Duration,
    pub interpreter: String,
    pub max_output_bytes: usize,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        SandboxSettings {
            timeout: Duration::from_secs(3600),
            interpreter: "python3".to_string(),
            max_output_bytes: 1024 * 1024,
        }
    }
}

impl SandboxSettings {
    pub fn policy_for(&self, workdir: &Path) -> SandboxPolicy {
        SandboxPolicy {
            timeout: self.timeout,
            workdir: workdir.to_path_buf(),
            interpreter: self.interpreter.clone(),
            max_output_bytes: self.max_output_bytes,
        }
    }
}

/// Outcome of one script execution. A failing script is a normal result
/// with a nonzero exit, not an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub duration_secs: f64,
    pub timed_out: bool,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub metric: Option<f64>,
}

impl ExecutionResult {
    /// Synthesized failure used when no script could be produced at all.
    pub fn synthetic_failure(reason: &str) -> ExecutionResult {
        ExecutionResult {
            exit_code: -1,
            stdout: String::new(),
            stderr: reason.to_string(),
            duration_secs: 0.0,
            timed_out: false,
            stdout_truncated: false,
            stderr_truncated: false,
            metric: None,
        }
    }

    /// Render for debugger/logger prompts: both streams, with a synthesized
    /// line when the run timed out.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        if self.timed_out {
            out.push_str(&format!(
                "[execution timed out after {:.0} seconds and was killed]\n",
                self.duration_secs
            ));
        }
        if !self.stdout.is_empty() {
            out.push_str(&self.stdout);
            if !out.ends_with('\n') {
                out.push('\n');
            }
        }
        if !self.stderr.is_empty() {
            out.push_str(&self.stderr);
        }
        if out.is_empty() {
            out.push_str(&format!("[no output; exit code {}]", self.exit_code));
        }
        out
    }
}

/// Compiled metric pattern plus the improvement direction for the metric it
/// captures. The regex must have exactly one capture group.
#[derive(Debug, Clone)]
pub struct MetricPattern {
    regex: Regex,
    pub direction: MetricDirection,
}

/// Default pattern matching the provided-scaffold family, which prints
/// `final <METRIC> on validation set: <value>`.
pub const DEFAULT_METRIC_PATTERN: &str = r"final .* on validation set:\s*([0-9.eE+-]+)";

impl MetricPattern {
    pub fn new(pattern: &str, direction: MetricDirection) -> Result<Self> {
        let regex = Regex::new(pattern).map_err(|e| Error::MetricPattern(e.to_string()))?;
        if regex.captures_len() != 2 {
            return Err(Error::MetricPattern(format!(
                "pattern must have exactly one capture group, `{pattern}` has {}",
                regex.captures_len() - 1
            )));
        }
        Ok(MetricPattern { regex, direction })
    }
}

/// The captured number of the LAST match on stdout; scripts may print
/// per-epoch lines before the final one. Absent when nothing matches.
pub fn extract_metric(stdout: &str, pattern: &MetricPattern) -> Option<f64> {
    pattern
        .regex
        .captures_iter(stdout)
        .filter_map(|c| c.get(1).and_then(|m| m.as_str().parse::<f64>().ok()))
        .last()
}

/// True iff the result shows an error: nonzero exit, timeout, or a Python
/// traceback header on stderr (which survives even when a crashing child's
/// parent exits cleanly).
pub fn detect_error(result: &ExecutionResult) -> bool {
    result.exit_code != 0
        || result.timed_out
        || result.stderr.lines().any(|l| l.starts_with("Traceback (most recent call last):"))
}

struct WorkdirLock {
    _file: File,
}

impl WorkdirLock {
    /// Grace period for transient lock holders: a concurrently forked child
    /// that has not exec'd yet shares this process's lock descriptors for a
    /// moment. A real competing run holds the lock for its whole script.
    const GRACE: Duration = Duration::from_secs(2);

    fn acquire(workdir: &Path) -> Result<Self> {
        let path = workdir.join(WORKDIR_LOCK);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::BankIo { path: path.clone(), source: e })?;
        let deadline = Instant::now() + Self::GRACE;
        loop {
            let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
            if rc == 0 {
                return Ok(WorkdirLock { _file: file });
            }
            if Instant::now() >= deadline {
                return Err(Error::WorkdirLocked(workdir.to_path_buf()));
            }
            std::thread::sleep(POLL_INTERVAL);
        }
    }
}

/// Write the script to `train.py` in the workdir and execute it under the
/// policy. The child runs in its own process group with a scrubbed
/// environment; on return the whole group has been killed and reaped, so no
/// descendant survives.
pub fn run_script(script: &str, policy: &SandboxPolicy) -> Result<ExecutionResult> {
    if !policy.workdir.is_dir() {
        return Err(Error::WorkdirMissing(policy.workdir.clone()));
    }
    let _lock = WorkdirLock::acquire(&policy.workdir)?;
    std::fs::write(policy.workdir.join(SCRIPT_FILE), script)?;

    let mut child = Command::new(&policy.interpreter)
        .arg(SCRIPT_FILE)
        .current_dir(&policy.workdir)
        .env_clear()
        .env("PATH", "/usr/local/bin:/usr/bin:/bin")
        .env("HOME", &policy.workdir)
        .env("PYTHONUNBUFFERED", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| Error::Spawn { interpreter: policy.interpreter.clone(), source: e })?;
    let pgid = child.id() as i32;

    let cap = policy.max_output_bytes;
    let stdout_reader = spawn_reader(child.stdout.take().expect("stdout piped"), cap);
    let stderr_reader = spawn_reader(child.stderr.take().expect("stderr piped"), cap);

    let started = Instant::now();
    let mut timed_out = false;
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None => {
                if started.elapsed() >= policy.timeout {
                    timed_out = true;
                    kill_group(pgid);
                    break child.wait()?;
                }
                std::thread::sleep(POLL_INTERVAL);
            }
        }
    };
    let duration = started.elapsed();
    // The script may have left background children; take the whole group
    // down regardless of how the direct child exited.
    kill_group(pgid);

    let (stdout, stdout_truncated) = stdout_reader.join().expect("stdout reader");
    let (stderr, stderr_truncated) = stderr_reader.join().expect("stderr reader");
    let stdout = elide_workdir(&stdout, &policy.workdir);
    let stderr = elide_workdir(&stderr, &policy.workdir);

    let exit_code = status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(9));
    Ok(ExecutionResult {
        exit_code,
        stdout,
        stderr,
        duration_secs: duration.as_secs_f64(),
        timed_out,
        stdout_truncated,
        stderr_truncated,
        metric: None,
    })
}

/// Strip the workdir's absolute path from captured output, so tracebacks
/// read `train.py` instead of `/abs/path/to/task/train.py`. Interpreters
/// absolutize the script path, and location-dependent output would make
/// runs non-relocatable and break prompt replay.
fn elide_workdir(text: &str, workdir: &Path) -> String {
    let mut out = text.to_string();
    let mut prefixes: Vec<String> = Vec::new();
    if let Ok(canonical) = workdir.canonicalize() {
        prefixes.push(canonical.to_string_lossy().into_owned());
    }
    if workdir.is_absolute() {
        prefixes.push(workdir.to_string_lossy().into_owned());
    } else if let Ok(cwd) = std::env::current_dir() {
        prefixes.push(cwd.join(workdir).to_string_lossy().into_owned());
    }
    prefixes.sort();
    prefixes.dedup();
    for prefix in prefixes {
        out = out.replace(&format!("{prefix}/"), "");
    }
    out
}

fn kill_group(pgid: i32) {
    unsafe {
        // ESRCH just means the group is already gone.
        libc::kill(-pgid, libc::SIGKILL);
    }
}

/// Drain a pipe to EOF, keeping at most `cap` bytes. Reading past the cap
/// keeps the child from blocking on a full pipe.
fn spawn_reader<R: Read + Send + 'static>(
    mut pipe: R,
    cap: usize,
) -> std::thread::JoinHandle<(String, bool)> {
    std::thread::spawn(move || {
        let mut kept: Vec<u8> = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if kept.len() < cap {
                        let take = n.min(cap - kept.len());
                        kept.extend_from_slice(&buf[..take]);
                        if take < n {
                            truncated = true;
                        }
                    } else {
                        truncated = true;
                    }
                }
            }
        }
        (String::from_utf8_lossy(&kept).into_owned(), truncated)
    })
}

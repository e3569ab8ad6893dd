//! Test executors: the sandbox-runner subprocess and a canned replay table.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{parse_runner_output, CoverageError, ExecutionResult};
use crate::index::content_hash;

pub const DEFAULT_TIMEOUT_S: f64 = 30.0;

/// One test file to execute against the project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRun {
    /// File name, e.g. `test_foo_ab12cd_r1.py`.
    pub name: String,
    pub source: String,
}

impl TestRun {
    pub fn content_key(&self) -> String {
        content_hash(self.source.as_bytes())
    }
}

pub trait Executor: Send + Sync {
    fn execute(&self, project_root: &Path, run: &TestRun) -> Result<ExecutionResult, CoverageError>;
}

/// Runs `<runner...> <test_file> <project_root> <timeout_s>` inside a fresh
/// copy of the project and parses the single JSON object it prints.
#[derive(Debug, Clone)]
pub struct SandboxExecutor {
    pub runner: Vec<String>,
    pub timeout_s: f64,
    /// Directory (relative to the snapshot) the test file is written to.
    pub test_dir: String,
}

impl SandboxExecutor {
    pub fn new(runner: Vec<String>, timeout_s: f64) -> Self {
        Self { runner, timeout_s, test_dir: "generated_tests".into() }
    }
}

const SKIP_DIRS: &[&str] = &[".git", ".typeforge", "__pycache__", ".pytest_cache"];

fn snapshot(root: &Path, dest: &Path) -> io::Result<()> {
    let walker = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_type().is_dir() || !SKIP_DIRS.contains(&e.file_name().to_string_lossy().as_ref()));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(root).map_err(io::Error::other)?;
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn drain<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_group(pid: u32) {
    // The child leads its own process group, so this reaches its descendants too.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

fn relativize(result: &mut ExecutionResult, roots: &[PathBuf], test_dir: &str) {
    let Some(cov) = result.coverage.take() else { return };
    let mut out = BTreeMap::new();
    for (path, fc) in cov {
        let p = Path::new(&path);
        let rel = roots.iter().find_map(|r| p.strip_prefix(r).ok()).map(|r| r.to_string_lossy().into_owned()).unwrap_or(path);
        if rel.starts_with(&format!("{test_dir}/")) {
            continue;
        }
        out.insert(rel, fc);
    }
    result.coverage = Some(out);
}

impl Executor for SandboxExecutor {
    fn execute(&self, project_root: &Path, run: &TestRun) -> Result<ExecutionResult, CoverageError> {
        let (program, args) = self.runner.split_first().ok_or_else(|| CoverageError::SandboxUnavailable("runner command is empty".into()))?;
        let work = tempfile::tempdir()?;
        let snap = work.path().join("project");
        snapshot(project_root, &snap)?;
        let test_path = snap.join(&self.test_dir).join(&run.name);
        fs::create_dir_all(test_path.parent().expect("test path has a parent"))?;
        fs::write(&test_path, &run.source)?;

        let mut child = Command::new(program)
            .args(args)
            .arg(&test_path)
            .arg(&snap)
            .arg(format!("{}", self.timeout_s))
            .current_dir(&snap)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
            .map_err(|e| CoverageError::SandboxUnavailable(format!("{program}: {e}")))?;
        let stdout = drain(child.stdout.take().expect("piped stdout"));
        let stderr = drain(child.stderr.take().expect("piped stderr"));

        let started = Instant::now();
        let deadline = Duration::from_secs_f64(self.timeout_s.max(0.0));
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if started.elapsed() >= deadline {
                kill_group(child.id());
                let _ = child.wait();
                break None;
            }
            thread::sleep(Duration::from_millis(10));
        };
        let Some(status) = status else {
            return Ok(ExecutionResult::timeout(self.timeout_s));
        };
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        let mut result = parse_runner_output(&out).map_err(|e| CoverageError::MalformedRunnerOutput(format!("{e} (exit {status}; stderr: {})", err.trim())))?;
        let canonical = snap.canonicalize().unwrap_or_else(|_| snap.clone());
        relativize(&mut result, &[snap, canonical], &self.test_dir);
        Ok(result)
    }
}

/// Replays recorded results keyed by the sha256 of the test source.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CannedExecutor {
    pub results: BTreeMap<String, ExecutionResult>,
    #[serde(skip)]
    executions: AtomicUsize,
}

impl CannedExecutor {
    pub fn new(results: BTreeMap<String, ExecutionResult>) -> Self {
        Self { results, executions: AtomicUsize::new(0) }
    }

    pub fn load(path: &Path) -> Result<Self, CoverageError> {
        let text = fs::read_to_string(path)?;
        let results = serde_json::from_str(&text).map_err(|e| CoverageError::MalformedRunnerOutput(e.to_string()))?;
        Ok(Self::new(results))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(&self.results).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(path, text)
    }

    pub fn insert(&mut self, source: &str, result: ExecutionResult) {
        self.results.insert(content_hash(source.as_bytes()), result);
    }

    pub fn executions(&self) -> usize {
        self.executions.load(Ordering::SeqCst)
    }
}

impl Executor for CannedExecutor {
    fn execute(&self, _project_root: &Path, run: &TestRun) -> Result<ExecutionResult, CoverageError> {
        self.executions.fetch_add(1, Ordering::SeqCst);
        let key = run.content_key();
        self.results.get(&key).cloned().ok_or(CoverageError::NoCannedResult(key))
    }
}

/// Forwards to an inner executor and keeps every result for later replay.
pub struct RecordingExecutor {
    inner: Box<dyn Executor>,
    recorded: parking_lot::Mutex<BTreeMap<String, ExecutionResult>>,
}

impl RecordingExecutor {
    pub fn new(inner: Box<dyn Executor>) -> Self {
        Self { inner, recorded: parking_lot::Mutex::new(BTreeMap::new()) }
    }

    pub fn canned(&self) -> CannedExecutor {
        CannedExecutor::new(self.recorded.lock().clone())
    }
}

impl Executor for RecordingExecutor {
    fn execute(&self, project_root: &Path, run: &TestRun) -> Result<ExecutionResult, CoverageError> {
        let result = self.inner.execute(project_root, run)?;
        self.recorded.lock().insert(run.content_key(), result.clone());
        Ok(result)
    }
}

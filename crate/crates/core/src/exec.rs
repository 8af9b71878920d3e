//! Test execution backends.
//!
//! The pipeline never runs a test framework itself. It talks to an
//! [`ExecBackend`], which either replays a scripted table ([`FakeBackend`])
//! or shells out to an external adapter ([`ProcessBackend`]).

use std::collections::BTreeMap;
use std::fs::{self, File, TryLockError};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calltrace::CallTrace;
use crate::change::{classify_file, in_denylist, FileKind};
use crate::coverage::{versioned, CoverageReport, FileCoverage, SchemaError};
use crate::provenance::sha256_hex;
use crate::pysource::check_parses;

pub const DEFAULT_SCRATCH: &str = "tests/test_covergap_scratch.py";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1800);

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("workspace {0} is held by another run")]
    WorkspaceBusy(PathBuf),
    #[error("run exceeded the {0:?} timeout")]
    Timeout(Duration),
    #[error("backend I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend artifact: {0}")]
    Schema(#[from] SchemaError),
    #[error("backend protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    All,
    Files(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Collect {
    pub coverage: bool,
    pub trace: bool,
}

impl Collect {
    pub const COVERAGE: Collect = Collect { coverage: true, trace: false };
    pub const TRACE: Collect = Collect { coverage: false, trace: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub passed: bool,
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub coverage: Option<CoverageReport>,
    pub trace: Option<CallTrace>,
    pub duration_secs: f64,
}

impl ExecutionResult {
    fn new(exit_code: i32, stdout: String, stderr: String, duration_secs: f64) -> Self {
        ExecutionResult {
            passed: exit_code == 0,
            exit_code,
            stdout,
            stderr,
            coverage: None,
            trace: None,
            duration_secs,
        }
    }
}

/// Exclusive handle on a checked-out project tree. The lock is an advisory
/// `flock` on the directory itself, so nothing is written into the tree.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    revision: String,
    scratch_rel: String,
    _lock: File,
}

impl Workspace {
    pub fn acquire(root: impl Into<PathBuf>, revision: impl Into<String>) -> Result<Self, ExecError> {
        let root = root.into();
        let dir = File::open(&root)?;
        match dir.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(ExecError::WorkspaceBusy(root)),
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        Ok(Workspace {
            root,
            revision: revision.into(),
            scratch_rel: DEFAULT_SCRATCH.to_string(),
            _lock: dir,
        })
    }

    pub fn with_scratch(mut self, rel: impl Into<String>) -> Self {
        self.scratch_rel = rel.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn revision(&self) -> &str {
        &self.revision
    }

    pub fn scratch_rel(&self) -> &str {
        &self.scratch_rel
    }

    pub fn scratch_path(&self) -> PathBuf {
        self.root.join(&self.scratch_rel)
    }
}

/// Writes the candidate file and removes it, plus any directories it had to
/// create, when dropped.
struct Scratch {
    file: PathBuf,
    created_dirs: Vec<PathBuf>,
    had_pycache: bool,
}

impl Scratch {
    fn write(ws: &Workspace, source: &str) -> std::io::Result<Scratch> {
        let file = ws.scratch_path();
        let mut created_dirs = Vec::new();
        let mut dir = file.parent().map(Path::to_path_buf);
        while let Some(d) = dir {
            if d.exists() {
                break;
            }
            created_dirs.push(d.clone());
            dir = d.parent().map(Path::to_path_buf);
        }
        for d in created_dirs.iter().rev() {
            fs::create_dir(d)?;
        }
        fs::write(&file, source)?;
        let had_pycache = pycache_of(&file).is_some_and(|p| p.exists());
        Ok(Scratch {
            file,
            created_dirs,
            had_pycache,
        })
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.file);
        // The interpreter leaves a compiled copy next to the file.
        if let (Some(cache), Some(stem)) = (pycache_of(&self.file), self.file.file_stem()) {
            let prefix = format!("{}.", stem.to_string_lossy());
            if let Ok(entries) = fs::read_dir(&cache) {
                for e in entries.flatten() {
                    if e.file_name().to_string_lossy().starts_with(&prefix) {
                        let _ = fs::remove_file(e.path());
                    }
                }
            }
            if !self.had_pycache {
                let _ = fs::remove_dir(&cache);
            }
        }
        for d in &self.created_dirs {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn pycache_of(file: &Path) -> Option<PathBuf> {
    file.parent().map(|p| p.join("__pycache__"))
}

pub trait ExecBackend: Send + Sync {
    fn run_suite(&self, ws: &Workspace, scope: &Scope, collect: Collect) -> Result<ExecutionResult, ExecError>;

    /// Run one standalone test module with coverage collection. Reported
    /// coverage is limited to source files.
    fn run_candidate(&self, ws: &Workspace, test_source: &str) -> Result<ExecutionResult, ExecError>;
}

fn drop_denied(report: &mut CoverageReport, denylist: &[String]) {
    report.files.retain(|f| !in_denylist(&f.path, denylist));
}

fn source_only(report: &mut CoverageReport) {
    report
        .files
        .retain(|f| classify_file(&f.path) == FileKind::Source);
}

/// Hash of every file path and its contents under `root`, in sorted order.
pub fn tree_hash(root: &Path) -> std::io::Result<String> {
    let mut acc = String::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        let rel = rel.to_string_lossy();
        if entry.file_type().is_dir() {
            acc.push_str(&format!("d {rel}\n"));
        } else {
            let body = fs::read(entry.path())?;
            acc.push_str(&format!("f {rel} {}\n", sha256_hex(&body)));
        }
    }
    Ok(sha256_hex(acc))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Artifact<T> {
    File(String),
    Inline(T),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SuiteScript {
    #[serde(default)]
    exit_code: i32,
    #[serde(default)]
    stdout: String,
    #[serde(default)]
    stderr: String,
    coverage: Option<Artifact<serde_json::Value>>,
    trace: Option<Artifact<serde_json::Value>>,
    #[serde(default)]
    timeout: bool,
}

/// One row of the candidate table. A row applies when every string in
/// `contains` occurs in the candidate source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateRule {
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub exit_code: i32,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub covered: BTreeMap<String, Vec<u32>>,
    #[serde(default)]
    pub timeout: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FakeScript {
    schema_version: u32,
    #[serde(default)]
    suite: SuiteScript,
    #[serde(default)]
    candidates: Vec<CandidateRule>,
    default_candidate: Option<CandidateRule>,
}

/// Table-driven backend. Suite runs return fixed artifacts; candidate runs
/// return the first matching [`CandidateRule`]. Sources that do not parse
/// fail with a collection error, as a real runner would.
pub struct FakeBackend {
    suite: SuiteScript,
    suite_coverage: Option<CoverageReport>,
    suite_trace: Option<CallTrace>,
    rules: Vec<CandidateRule>,
    default_rule: CandidateRule,
    denylist: Vec<String>,
    timeout: Duration,
}

impl FakeBackend {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ExecError> {
        let script: FakeScript = versioned(text)?;
        let suite_coverage = match &script.suite.coverage {
            None => None,
            Some(a) => Some(CoverageReport::from_json(&artifact_text(a, base_dir)?)?),
        };
        let suite_trace = match &script.suite.trace {
            None => None,
            Some(a) => Some(CallTrace::from_json(&artifact_text(a, base_dir)?)?),
        };
        Ok(FakeBackend {
            suite: script.suite,
            suite_coverage,
            suite_trace,
            rules: script.candidates,
            default_rule: script.default_candidate.unwrap_or_default(),
            denylist: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExecError> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&fs::read_to_string(path)?, base)
    }

    pub fn new(suite_coverage: Option<CoverageReport>, suite_trace: Option<CallTrace>) -> Self {
        FakeBackend {
            suite: SuiteScript::default(),
            suite_coverage,
            suite_trace,
            rules: Vec::new(),
            default_rule: CandidateRule::default(),
            denylist: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn rule(mut self, rule: CandidateRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_denylist(mut self, denylist: Vec<String>) -> Self {
        self.denylist = denylist;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn candidate_coverage(&self, rule: &CandidateRule) -> CoverageReport {
        let mut files = Vec::new();
        for (path, lines) in &rule.covered {
            let known = self.suite_coverage.as_ref().and_then(|c| c.file(path));
            let executable = match known {
                Some(f) => f.executable_lines.clone(),
                None => lines.iter().copied().collect(),
            };
            let covered = lines.iter().copied().filter(|l| executable.contains(l)).collect();
            files.push(FileCoverage {
                path: path.clone(),
                executable_lines: executable,
                covered_lines: covered,
                missed_branch_lines: Default::default(),
            });
        }
        let mut report = CoverageReport { files, ..Default::default() };
        source_only(&mut report);
        drop_denied(&mut report, &self.denylist);
        report
    }
}

fn artifact_text(a: &Artifact<serde_json::Value>, base: &Path) -> Result<String, ExecError> {
    Ok(match a {
        Artifact::Inline(v) => v.to_string(),
        Artifact::File(rel) => fs::read_to_string(base.join(rel))?,
    })
}

impl ExecBackend for FakeBackend {
    fn run_suite(&self, _ws: &Workspace, _scope: &Scope, collect: Collect) -> Result<ExecutionResult, ExecError> {
        if self.suite.timeout {
            return Err(ExecError::Timeout(self.timeout));
        }
        let mut out = ExecutionResult::new(
            self.suite.exit_code,
            self.suite.stdout.clone(),
            self.suite.stderr.clone(),
            0.0,
        );
        if collect.coverage {
            let mut cov = self.suite_coverage.clone().ok_or_else(|| {
                ExecError::Protocol("script has no suite coverage".into())
            })?;
            drop_denied(&mut cov, &self.denylist);
            out.coverage = Some(cov);
        }
        if collect.trace {
            out.trace = Some(self.suite_trace.clone().unwrap_or_default());
        }
        Ok(out)
    }

    fn run_candidate(&self, ws: &Workspace, test_source: &str) -> Result<ExecutionResult, ExecError> {
        let _scratch = Scratch::write(ws, test_source)?;
        if let Err(e) = check_parses(test_source, ws.scratch_rel()) {
            let mut out = ExecutionResult::new(
                2,
                String::new(),
                format!("ERROR collecting {}\nSyntaxError: {}", ws.scratch_rel(), e.message),
                0.0,
            );
            out.coverage = Some(CoverageReport::default());
            return Ok(out);
        }
        let rule = self
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|needle| test_source.contains(needle.as_str())))
            .unwrap_or(&self.default_rule);
        if rule.timeout {
            return Err(ExecError::Timeout(self.timeout));
        }
        let mut out = ExecutionResult::new(rule.exit_code, rule.stdout.clone(), rule.stderr.clone(), 0.0);
        out.coverage = Some(self.candidate_coverage(rule));
        Ok(out)
    }
}

#[derive(Debug, Deserialize)]
struct AdapterResult {
    exit_code: i32,
    #[serde(default)]
    stdout: String,
    #[serde(default)]
    stderr: String,
    coverage: Option<String>,
    trace: Option<String>,
}

/// Runs an external adapter once per request.
///
/// Invocation: `<program> <args..> run --mode suite|candidate --root ROOT
/// --scope all|files [--file F]... [--coverage] [--trace] [--scratch PATH]
/// --out DIR`. The adapter writes `DIR/result.json` (`schema_version`,
/// `exit_code`, `stdout`, `stderr`, and optional `coverage`/`trace` paths
/// relative to `DIR`).
pub struct ProcessBackend {
    program: PathBuf,
    args: Vec<String>,
    timeout: Duration,
    poll: Duration,
    denylist: Vec<String>,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ProcessBackend {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        ProcessBackend {
            program: program.into(),
            args,
            timeout: DEFAULT_TIMEOUT,
            poll: Duration::from_millis(20),
            denylist: Vec::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_denylist(mut self, denylist: Vec<String>) -> Self {
        self.denylist = denylist;
        self
    }

    fn invoke(
        &self,
        ws: &Workspace,
        mode: &str,
        scope: &Scope,
        collect: Collect,
        scratch: Option<&Path>,
    ) -> Result<ExecutionResult, ExecError> {
        let out_dir = std::env::temp_dir().join(format!(
            "covergap-run-{}-{}",
            std::process::id(),
            RUN_COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        fs::create_dir_all(&out_dir)?;
        let result = self.invoke_in(ws, mode, scope, collect, scratch, &out_dir);
        let _ = fs::remove_dir_all(&out_dir);
        result
    }

    fn invoke_in(
        &self,
        ws: &Workspace,
        mode: &str,
        scope: &Scope,
        collect: Collect,
        scratch: Option<&Path>,
        out_dir: &Path,
    ) -> Result<ExecutionResult, ExecError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg("run")
            .args(["--mode", mode])
            .arg("--root")
            .arg(ws.root());
        match scope {
            Scope::All => {
                cmd.args(["--scope", "all"]);
            }
            Scope::Files(files) => {
                cmd.args(["--scope", "files"]);
                for f in files {
                    cmd.args(["--file", f]);
                }
            }
        }
        if collect.coverage {
            cmd.arg("--coverage");
        }
        if collect.trace {
            cmd.arg("--trace");
        }
        if let Some(s) = scratch {
            cmd.arg("--scratch").arg(s);
        }
        cmd.arg("--out").arg(out_dir);
        let stdout_path = out_dir.join("adapter.stdout");
        let stderr_path = out_dir.join("adapter.stderr");
        cmd.stdin(Stdio::null())
            .stdout(File::create(&stdout_path)?)
            .stderr(File::create(&stderr_path)?);

        let started = Instant::now();
        let mut child = cmd.spawn()?;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExecError::Timeout(self.timeout));
            }
            std::thread::sleep(self.poll);
        };
        let duration = started.elapsed().as_secs_f64();

        let result_path = out_dir.join("result.json");
        if !result_path.exists() {
            let stderr = fs::read_to_string(&stderr_path).unwrap_or_default();
            return Err(ExecError::Protocol(format!(
                "adapter exited with {status} without writing result.json: {}",
                crate::util::tail_chars(stderr.trim(), 2000)
            )));
        }
        let raw: AdapterResult = versioned(&fs::read_to_string(&result_path)?)?;
        let mut out = ExecutionResult::new(raw.exit_code, raw.stdout, raw.stderr, duration);
        if collect.coverage {
            let rel = raw
                .coverage
                .ok_or_else(|| ExecError::Protocol("coverage requested but not reported".into()))?;
            let mut cov = CoverageReport::from_json(&fs::read_to_string(out_dir.join(rel))?)?;
            drop_denied(&mut cov, &self.denylist);
            out.coverage = Some(cov);
        }
        if collect.trace {
            let rel = raw
                .trace
                .ok_or_else(|| ExecError::Protocol("trace requested but not reported".into()))?;
            out.trace = Some(CallTrace::from_json(&fs::read_to_string(out_dir.join(rel))?)?);
        }
        Ok(out)
    }
}

impl ExecBackend for ProcessBackend {
    fn run_suite(&self, ws: &Workspace, scope: &Scope, collect: Collect) -> Result<ExecutionResult, ExecError> {
        self.invoke(ws, "suite", scope, collect, None)
    }

    fn run_candidate(&self, ws: &Workspace, test_source: &str) -> Result<ExecutionResult, ExecError> {
        let scratch = Scratch::write(ws, test_source)?;
        let scope = Scope::Files(vec![ws.scratch_rel().to_string()]);
        let mut out = self.invoke(ws, "candidate", &scope, Collect::COVERAGE, Some(&scratch.file))?;
        drop(scratch);
        if let Some(cov) = out.coverage.as_mut() {
            source_only(cov);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("pkg")).unwrap();
        fs::write(dir.path().join("pkg/mod.py"), "def f(x):\n    return x\n").unwrap();
        dir
    }

    fn cov() -> CoverageReport {
        CoverageReport::from_json(
            r#"{"schema_version":1,"files":[
                {"path":"pkg/mod.py","executable_lines":[1,2],"covered_lines":[1]},
                {"path":"pkg/io/read.py","executable_lines":[1],"covered_lines":[]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn workspace_is_exclusive() {
        let dir = project();
        let ws = Workspace::acquire(dir.path(), "rev").unwrap();
        assert!(matches!(
            Workspace::acquire(dir.path(), "rev"),
            Err(ExecError::WorkspaceBusy(_))
        ));
        drop(ws);
        assert!(Workspace::acquire(dir.path(), "rev").is_ok());
    }

    #[test]
    fn fake_suite_passthrough_and_denylist() {
        let dir = project();
        let ws = Workspace::acquire(dir.path(), "rev").unwrap();
        let fake = FakeBackend::new(Some(cov()), None);
        let r = fake.run_suite(&ws, &Scope::All, Collect::COVERAGE).unwrap();
        assert_eq!(r.coverage, Some(cov()));
        assert!(r.trace.is_none());
        let fake = fake.with_denylist(vec!["pkg/io".into()]);
        let r = fake.run_suite(&ws, &Scope::All, Collect::TRACE).unwrap();
        assert!(r.coverage.is_none());
        assert_eq!(r.trace, Some(CallTrace::default()));
        let r = fake.run_suite(&ws, &Scope::All, Collect::COVERAGE).unwrap();
        assert_eq!(r.coverage.unwrap().files.len(), 1);
    }

    #[test]
    fn fake_candidate_rules() {
        let dir = project();
        let ws = Workspace::acquire(dir.path(), "rev").unwrap();
        let before = tree_hash(dir.path()).unwrap();
        let fake = FakeBackend::new(Some(cov()), None)
            .rule(CandidateRule {
                contains: vec!["f(2)".into()],
                covered: BTreeMap::from([
                    ("pkg/mod.py".into(), vec![2]),
                    ("tests/test_covergap_scratch.py".into(), vec![1]),
                ]),
                ..Default::default()
            })
            .rule(CandidateRule {
                contains: vec!["sleep".into()],
                timeout: true,
                ..Default::default()
            });
        let ok = fake.run_candidate(&ws, "def test_a():\n    assert f(2) == 2\n").unwrap();
        assert!(ok.passed);
        let c = ok.coverage.unwrap();
        assert_eq!(c.files.len(), 1);
        assert_eq!(c.files[0].covered_lines.iter().copied().collect::<Vec<_>>(), [2]);

        let broken = fake.run_candidate(&ws, "def test_a(:\n").unwrap();
        assert!(!broken.passed);
        assert!(broken.stderr.contains("SyntaxError"));

        assert!(matches!(
            fake.run_candidate(&ws, "def test_b():\n    sleep()\n"),
            Err(ExecError::Timeout(_))
        ));
        let nothing = fake.run_candidate(&ws, "def test_c():\n    pass\n").unwrap();
        assert!(nothing.passed);
        assert!(nothing.coverage.unwrap().files.is_empty());
        assert_eq!(tree_hash(dir.path()).unwrap(), before);
    }

    #[test]
    fn fake_script_json() {
        let dir = project();
        fs::write(dir.path().join("cov.json"), serde_json::to_string(&cov()).unwrap()).unwrap();
        let script = r#"{"schema_version":1,
            "suite":{"coverage":"cov.json","trace":{"schema_version":1,"test_roots":["t"],"edges":[{"caller":"t","callee":"f"}]}},
            "candidates":[{"contains":["x"],"exit_code":1,"stderr":"AssertionError"}],
            "default_candidate":{"covered":{"pkg/mod.py":[2]}}}"#;
        let fake = FakeBackend::from_json(script, dir.path()).unwrap();
        let ws = Workspace::acquire(dir.path(), "rev").unwrap();
        let r = fake
            .run_suite(&ws, &Scope::All, Collect { coverage: true, trace: true })
            .unwrap();
        assert_eq!(r.coverage, Some(cov()));
        assert_eq!(r.trace.unwrap().edges.len(), 1);
        let r = fake.run_candidate(&ws, "x = 1\n").unwrap();
        assert_eq!((r.passed, r.stderr.as_str()), (false, "AssertionError"));
        let r = fake.run_candidate(&ws, "y = 1\n").unwrap();
        assert!(r.passed);
        assert_eq!(r.coverage.unwrap().files[0].covered_lines.len(), 1);
    }
}

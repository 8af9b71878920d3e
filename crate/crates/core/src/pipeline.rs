//! Stage orchestration. Every stage reads the artifacts of the previous one
//! from `<out_dir>/<pr_id>/` and writes its own, so `augment` is exactly the
//! four stages run back to back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calltrace::CallTrace;
use crate::change::{parse_unified_diff, selection_verdict, DiffModel, PrMeta, PullRequest};
use crate::config::{BackendKind, Config, LlmMode};
use crate::coverage::{compute_patch_coverage, segment_focal_functions, CoverageReport, FocalFunction, PatchCoverage, StructureIndex};
use crate::exec::{Collect, ExecBackend, ExecError, FakeBackend, ProcessBackend, Scope, Workspace};
use crate::generation::{run_generation, CandidateTest, GenError, GenerationInputs};
use crate::integration::{decide_integration_mode, merge_test, test_patch};
use crate::llm::{
    Cassette, CompletionProvider, CostLedger, LiveConfig, LiveProvider, LlmError, LlmGateway, RecordingProvider,
    ReplayProvider, ReqwestTransport, Transport,
};
use crate::pr_context::{enrich_context, render_pr_markdown, CommandFetcher, EnrichConfig, FetchError, Fetcher, MapFetcher, PrContextSummary};
use crate::provenance::{read_records, sha256_hex, Clock, LogicalClock, ProvenanceLog, SystemClock};
use crate::report::{cluster_by_coverage, emit_report, select_best, ReportEntry};
use crate::test_context::{build_test_context_map, ContextCache, ContextError, ContextInputs, TestContextMap, TestSuiteIndex};
use crate::util::write_atomic;

pub const ARTIFACT_VERSION: u32 = 1;
pub const COVERAGE_FILE: &str = "coverage.json";
pub const CONTEXT_FILE: &str = "context.json";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const INTEGRATION_FILE: &str = "integration.json";
pub const REPORT_FILE: &str = "report.md";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const COST_FILE: &str = "cost.json";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Merged test files are written under this directory of the PR folder.
pub const MERGED_DIR: &str = "merged";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input error: {0}")]
    Input(String),
    #[error("execution backend failed: {0}")]
    Backend(#[from] ExecError),
    #[error("{0}")]
    Failed(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 2,
            PipelineError::Backend(_) => 3,
            PipelineError::Failed(_) => 1,
        }
    }
}

fn input(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Input(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Failed(e.to_string())
}

impl From<LlmError> for PipelineError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::MissingApiKey(_) | LlmError::Format(_) => input(e),
            other => failed(other),
        }
    }
}

impl From<ContextError> for PipelineError {
    fn from(e: ContextError) -> Self {
        match e {
            ContextError::Llm(l) => l.into(),
            ContextError::NoTestFiles | ContextError::Io { .. } | ContextError::Parse(_) => input(e),
            other => failed(other),
        }
    }
}

impl From<GenError> for PipelineError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Llm(l) => l.into(),
            other => failed(other),
        }
    }
}

/// Where the PR inputs live on disk.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub diff: PathBuf,
    pub pr_meta: PathBuf,
    /// Suite coverage; collected through the backend when absent.
    pub coverage: Option<PathBuf>,
    pub structure: PathBuf,
    /// Call trace of the selected test files; collected when absent.
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Proceed,
    /// Rejected by the PR selection filter.
    Skipped,
    FullyCovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageArtifact {
    pub schema_version: u32,
    pub pr: PrMeta,
    pub diff: DiffModel,
    pub status: Status,
    pub verdict: String,
    pub patch_coverage: PatchCoverage,
    pub pc: f64,
    pub focals: Vec<FocalFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextArtifact {
    pub schema_version: u32,
    pub pr_context: PrContextSummary,
    pub test_contexts: TestContextMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesArtifact {
    pub schema_version: u32,
    pub candidates: Vec<CandidateTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationArtifact {
    pub schema_version: u32,
    pub pc_before: f64,
    pub pc_after: f64,
    pub entries: Vec<ReportEntry>,
    /// Candidates that could not be merged, with the reason.
    pub rejected: Vec<(String, String)>,
}

/// Fetcher used when no page source is configured.
struct NoFetcher;

impl Fetcher for NoFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        Err(FetchError::Failed(format!("{url}: no page source configured")))
    }
}

/// Configuration plus the injectable pieces of the environment.
pub struct Session {
    pub config: Config,
    /// HTTP transport for live and record modes; a real client when unset.
    pub transport: Option<Box<dyn Fn() -> Box<dyn Transport>>>,
}

impl Session {
    pub fn new(config: Config) -> Self {
        Session { config, transport: None }
    }

    pub fn with_transport(mut self, make: impl Fn() -> Box<dyn Transport> + 'static) -> Self {
        self.transport = Some(Box::new(make));
        self
    }

    pub fn out_dir(&self) -> Result<&Path, PipelineError> {
        self.config
            .paths
            .out_dir
            .as_deref()
            .ok_or_else(|| input("no output directory configured (--out or paths.out_dir)"))
    }

    pub fn pr_dir(&self, pr_id: &str) -> Result<PathBuf, PipelineError> {
        if pr_id.is_empty() || pr_id.contains(['/', '\\']) || pr_id == "." || pr_id == ".." {
            return Err(input(format!("PR id {pr_id:?} cannot be used as a directory name")));
        }
        Ok(self.out_dir()?.join(pr_id))
    }

    fn workspace_root(&self) -> Result<&Path, PipelineError> {
        self.config
            .paths
            .workspace
            .as_deref()
            .ok_or_else(|| input("no workspace configured (--workspace or paths.workspace)"))
    }

    fn acquire(&self, pr_id: &str) -> Result<Workspace, PipelineError> {
        let root = self.workspace_root()?;
        let ws = Workspace::acquire(root, format!("pr-{pr_id}"))?;
        Ok(ws.with_scratch(self.config.backend.scratch.clone()))
    }

    fn backend(&self) -> Result<Box<dyn ExecBackend>, PipelineError> {
        let b = &self.config.backend;
        let timeout = Duration::from_secs(b.timeout_secs);
        let denylist = self.config.filter.scope_denylist.clone();
        match b.kind {
            BackendKind::Fake => {
                let script = b
                    .script
                    .as_deref()
                    .ok_or_else(|| input("the fake backend needs backend.script"))?;
                let fake = FakeBackend::load(script).map_err(input)?;
                Ok(Box::new(fake.with_denylist(denylist).with_timeout(timeout)))
            }
            BackendKind::Process => {
                let (program, args) = b
                    .command
                    .split_first()
                    .ok_or_else(|| input("the process backend needs backend.command"))?;
                Ok(Box::new(
                    ProcessBackend::new(program, args.to_vec())
                        .with_timeout(timeout)
                        .with_denylist(denylist),
                ))
            }
        }
    }

    fn fetcher(&self) -> Result<Box<dyn Fetcher>, PipelineError> {
        if let Some(dir) = &self.config.paths.pages {
            return Ok(Box::new(MapFetcher::from_dir(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?));
        }
        if let Some((program, args)) = self.config.backend.fetch_command.split_first() {
            return Ok(Box::new(CommandFetcher::new(program, args.to_vec())));
        }
        Ok(Box::new(NoFetcher))
    }

    fn make_transport(&self) -> Result<Box<dyn Transport>, PipelineError> {
        match &self.transport {
            Some(make) => Ok(make()),
            None => Ok(Box::new(
                ReqwestTransport::new(Duration::from_secs(self.config.llm.timeout_secs)).map_err(failed)?,
            )),
        }
    }

    fn provider(&self) -> Result<Box<dyn CompletionProvider>, PipelineError> {
        let llm = &self.config.llm;
        let live = || -> Result<LiveProvider, PipelineError> {
            let cfg = LiveConfig {
                base_url: llm.base_url.clone(),
                api_key_env: llm.api_key_env.clone(),
                max_attempts: llm.max_attempts,
                ..LiveConfig::default()
            };
            Ok(LiveProvider::new(cfg, self.make_transport()?))
        };
        let cassette_path = || {
            self.config
                .paths
                .cassette
                .clone()
                .ok_or_else(|| input(format!("{:?} mode needs a cassette (--cassette or paths.cassette)", llm.mode)))
        };
        Ok(match llm.mode {
            LlmMode::Replay => {
                let cassette = Cassette::load(&cassette_path()?)?;
                Box::new(ReplayProvider::new(cassette).strict(llm.strict_replay))
            }
            LlmMode::Record => {
                let path = cassette_path()?;
                let existing = if path.exists() { Cassette::load(&path)? } else { Cassette::new() };
                Box::new(RecordingProvider::new(live()?, path).appending_to(existing))
            }
            LlmMode::Live => Box::new(live()?),
        })
    }

    /// Gateway continuing the PR's provenance log and cost ledger.
    fn gateway(&self, pr_dir: &Path) -> Result<LlmGateway, PipelineError> {
        let log_path = pr_dir.join(PROVENANCE_FILE);
        let clock: Box<dyn Clock> = match self.config.llm.mode {
            LlmMode::Replay => {
                let last = if log_path.exists() {
                    read_records(&log_path).map_err(failed)?.last().map(|r| r.timestamp_ms).unwrap_or(0)
                } else {
                    0
                };
                Box::new(LogicalClock::starting_at(last))
            }
            _ => Box::new(SystemClock),
        };
        let log = ProvenanceLog::open(&log_path, true, clock).map_err(failed)?;
        let ledger: CostLedger = match fs::read_to_string(pr_dir.join(COST_FILE)) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| input(format!("{COST_FILE}: {e}")))?,
            Err(_) => CostLedger::default(),
        };
        let llm = &self.config.llm;
        Ok(LlmGateway::new(self.provider()?, llm.model.clone(), llm.temperature, Arc::new(log))
            .with_prices(llm.prices())
            .with_ledger(ledger))
    }
}

fn read_input(path: &Path, what: &str) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {what} {}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(failed)?;
    text.push('\n');
    write_atomic(&dir.join(name), text.as_bytes()).map_err(failed)
}

fn read_artifact<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T, PipelineError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)
        .map_err(|e| input(format!("missing stage artifact {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Record the sha256 of every artifact present in the PR directory.
fn write_manifest(dir: &Path) -> Result<(), PipelineError> {
    let mut manifest = BTreeMap::new();
    for name in [
        COVERAGE_FILE,
        CONTEXT_FILE,
        CANDIDATES_FILE,
        INTEGRATION_FILE,
        REPORT_FILE,
        PROVENANCE_FILE,
        COST_FILE,
    ] {
        if let Ok(bytes) = fs::read(dir.join(name)) {
            manifest.insert(name.to_string(), sha256_hex(bytes));
        }
    }
    let merged = dir.join(MERGED_DIR);
    if merged.is_dir() {
        for entry in walkdir::WalkDir::new(&merged).sort_by_file_name() {
            let entry = entry.map_err(failed)?;
            if entry.file_type().is_file() {
                let rel = entry.path().strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                manifest.insert(rel, sha256_hex(fs::read(entry.path()).map_err(failed)?));
            }
        }
    }
    write_json(dir, MANIFEST_FILE, &manifest)
}

fn finish_llm_stage(dir: &Path, llm: &LlmGateway) -> Result<(), PipelineError> {
    write_json(dir, COST_FILE, &llm.ledger())?;
    write_manifest(dir)
}

fn read_sources(root: &Path, diff: &DiffModel) -> BTreeMap<String, String> {
    diff.source_files()
        .filter_map(|f| match fs::read_to_string(root.join(&f.path)) {
            Ok(text) => Some((f.path.clone(), text)),
            Err(e) => {
                log::warn!("cannot read {}: {e}", f.path);
                None
            }
        })
        .collect()
}

/// Filter the PR, compute patch coverage and find focal functions. Starts a
/// fresh provenance log and cost ledger for the PR.
pub fn stage_coverage(sess: &Session, inputs: &Inputs) -> Result<CoverageArtifact, PipelineError> {
    let meta = PrMeta::from_json(&read_input(&inputs.pr_meta, "PR metadata")?).map_err(input)?;
    let diff = parse_unified_diff(&read_input(&inputs.diff, "diff")?).map_err(input)?;
    let structure = StructureIndex::from_json(&read_input(&inputs.structure, "structure index")?)
        .map_err(|e| input(format!("{}: {e}", inputs.structure.display())))?;
    let dir = sess.pr_dir(&meta.id)?;
    fs::create_dir_all(&dir).map_err(failed)?;
    for stale in [CONTEXT_FILE, CANDIDATES_FILE, INTEGRATION_FILE, REPORT_FILE, PROVENANCE_FILE, COST_FILE] {
        let _ = fs::remove_file(dir.join(stale));
    }
    let _ = fs::remove_dir_all(dir.join(MERGED_DIR));

    let pr = PullRequest { meta, diff };
    let verdict = selection_verdict(&pr, &sess.config.filter.selection_filter());
    let mut art = CoverageArtifact {
        schema_version: ARTIFACT_VERSION,
        pr: pr.meta.clone(),
        diff: pr.diff.clone(),
        status: Status::Skipped,
        verdict: verdict.to_string(),
        patch_coverage: PatchCoverage::default(),
        pc: 1.0,
        focals: Vec::new(),
    };
    if !verdict.accepted() {
        log::info!("PR {} skipped: {verdict}", pr.meta.id);
    } else {
        let report = match &inputs.coverage {
            Some(path) => CoverageReport::from_json(&read_input(path, "coverage report")?)
                .map_err(|e| input(format!("{}: {e}", path.display())))?,
            None => {
                let ws = sess.acquire(&pr.meta.id)?;
                let run = sess.backend()?.run_suite(&ws, &Scope::All, Collect::COVERAGE)?;
                run.coverage.ok_or_else(|| {
                    PipelineError::Backend(ExecError::Protocol("suite run returned no coverage".into()))
                })?
            }
        };
        let pc = compute_patch_coverage(&pr.diff, &report).map_err(input)?;
        art.pc = pc.ratio();
        if pc.is_fully_covered() {
            log::info!("PR {} is fully covered; nothing to do", pr.meta.id);
            art.status = Status::FullyCovered;
        } else {
            let sources = read_sources(sess.workspace_root()?, &pr.diff);
            art.focals = segment_focal_functions(&pc, &structure, &sources);
            art.status = Status::Proceed;
        }
        art.patch_coverage = pc;
    }
    write_json(&dir, COVERAGE_FILE, &art)?;
    write_manifest(&dir)?;
    Ok(art)
}

fn load_coverage(sess: &Session, pr_id: &str) -> Result<(PathBuf, CoverageArtifact), PipelineError> {
    let dir = sess.pr_dir(pr_id)?;
    let art: CoverageArtifact = read_artifact(&dir, COVERAGE_FILE)?;
    Ok((dir, art))
}

fn load_index(sess: &Session, root: &Path) -> Result<TestSuiteIndex, PipelineError> {
    match &sess.config.paths.test_index {
        Some(p) => TestSuiteIndex::from_json(&read_input(p, "test-suite index")?)
            .map_err(|e| input(format!("{}: {e}", p.display()))),
        None => TestSuiteIndex::from_workspace(root).map_err(input),
    }
}

/// PR context enrichment and test context discovery.
pub fn stage_context(sess: &Session, pr_id: &str, trace: Option<&Path>) -> Result<Option<ContextArtifact>, PipelineError> {
    let (dir, cov) = load_coverage(sess, pr_id)?;
    if cov.status != Status::Proceed {
        log::info!("PR {pr_id}: no context needed ({})", status_text(&cov));
        return Ok(None);
    }
    let root = sess.workspace_root()?;
    let index = load_index(sess, root)?;
    let llm = sess.gateway(&dir)?;
    let pr = PullRequest {
        meta: cov.pr.clone(),
        diff: cov.diff.clone(),
    };
    let enrich = EnrichConfig {
        max_links: sess.config.context.max_links,
        max_page_chars: sess.config.context.max_page_chars,
    };
    let fetcher = sess.fetcher()?;
    let pr_context = enrich_context(&pr, &render_pr_markdown(&pr), fetcher.as_ref(), &llm, &enrich)?;

    let cache_dir = sess
        .config
        .paths
        .cache
        .clone()
        .unwrap_or_else(|| sess.out_dir().map(|o| o.join("cache")).unwrap_or_default());
    let cache = ContextCache::new(cache_dir).map_err(failed)?;
    let inp = ContextInputs {
        root,
        index: &index,
        diff: &cov.diff,
        top_k: sess.config.context.jaccard_top_k,
        cache: Some(&cache),
    };
    let mut trace_for = |files: &[String]| -> Result<CallTrace, ContextError> {
        if let Some(path) = trace {
            let text = fs::read_to_string(path).map_err(|source| ContextError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            return CallTrace::from_json(&text).map_err(|e| ContextError::Trace(e.to_string()));
        }
        let ws = sess.acquire(pr_id).map_err(|e| ContextError::Trace(e.to_string()))?;
        let backend = sess.backend().map_err(|e| ContextError::Trace(e.to_string()))?;
        let run = backend
            .run_suite(&ws, &Scope::Files(files.to_vec()), Collect::TRACE)
            .map_err(|e| ContextError::Trace(e.to_string()))?;
        run.trace
            .ok_or_else(|| ContextError::Trace("trace run returned no call trace".into()))
    };
    let test_contexts = match build_test_context_map(&inp, &cov.focals, &mut trace_for, &llm) {
        Ok(m) => m,
        Err(ContextError::Trace(msg)) if trace.is_some() => return Err(input(msg)),
        Err(ContextError::Trace(msg)) => return Err(PipelineError::Backend(ExecError::Protocol(msg))),
        Err(e) => return Err(e.into()),
    };
    let art = ContextArtifact {
        schema_version: ARTIFACT_VERSION,
        pr_context,
        test_contexts,
    };
    write_json(&dir, CONTEXT_FILE, &art)?;
    finish_llm_stage(&dir, &llm)?;
    Ok(Some(art))
}

fn status_text(cov: &CoverageArtifact) -> String {
    match cov.status {
        Status::Proceed => "in progress".into(),
        Status::Skipped => format!("skipped: {}", cov.verdict),
        Status::FullyCovered => "fully covered".into(),
    }
}

/// Generate and refine candidate tests.
pub fn stage_generate(sess: &Session, pr_id: &str) -> Result<Option<CandidatesArtifact>, PipelineError> {
    let (dir, cov) = load_coverage(sess, pr_id)?;
    if cov.status != Status::Proceed {
        log::info!("PR {pr_id}: nothing to generate ({})", status_text(&cov));
        return Ok(None);
    }
    let ctx: ContextArtifact = read_artifact(&dir, CONTEXT_FILE)?;
    let root = sess.workspace_root()?;
    let sources = read_sources(root, &cov.diff);
    let llm = sess.gateway(&dir)?;
    let backend = sess.backend()?;
    let ws = sess.acquire(pr_id)?;
    let inp = GenerationInputs {
        diff: &cov.diff,
        pr_ctx: &ctx.pr_context,
        pc: &cov.patch_coverage,
        focals: &cov.focals,
        contexts: &ctx.test_contexts,
        sources: &sources,
        n: sess.config.generation.tests_per_pr,
        max_rounds: sess.config.generation.max_feedback_rounds,
    };
    let candidates = run_generation(&llm, backend.as_ref(), &ws, &inp)?;
    let accepted = candidates.iter().filter(|c| c.is_accepted()).count();
    log::info!("PR {pr_id}: {accepted} of {} candidates accepted", candidates.len());
    let art = CandidatesArtifact {
        schema_version: ARTIFACT_VERSION,
        candidates,
    };
    write_json(&dir, CANDIDATES_FILE, &art)?;
    finish_llm_stage(&dir, &llm)?;
    Ok(Some(art))
}

/// Cluster, select, merge and write the report. Returns the report path,
/// or `None` when the PR needed no tests.
pub fn stage_report(sess: &Session, pr_id: &str) -> Result<Option<PathBuf>, PipelineError> {
    let (dir, cov) = load_coverage(sess, pr_id)?;
    if cov.status != Status::Proceed {
        log::info!("PR {pr_id}: no report ({})", status_text(&cov));
        return Ok(None);
    }
    let ctx: ContextArtifact = read_artifact(&dir, CONTEXT_FILE)?;
    let cands: CandidatesArtifact = read_artifact(&dir, CANDIDATES_FILE)?;
    let root = sess.workspace_root()?;
    let sources = read_sources(root, &cov.diff);
    let llm = sess.gateway(&dir)?;
    let pc = &cov.patch_coverage;

    let clusters = cluster_by_coverage(&cands.candidates);
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for cluster in &clusters {
        let best = select_best(&llm, cluster, &ctx.pr_context, &cov.diff, pc);
        let order = std::iter::once(best).chain(cluster.members.iter().filter(|m| m.id != best.id));
        for cand in order {
            let file = cand.context_used.file.clone();
            let before = match files.get(&file) {
                Some(t) => t.clone(),
                None => read_input(&root.join(&file), "test file")?,
            };
            let plan = decide_integration_mode(&llm, &cand.source, &cand.context_used, &before)?;
            match merge_test(&plan, &cand.source, &before) {
                Ok(merge) => {
                    let patch = test_patch(&file, &before, &merge.merged_file);
                    files.insert(file, merge.merged_file.clone());
                    entries.push(ReportEntry {
                        candidate: cand.clone(),
                        cluster_size: cluster.members.len(),
                        plan,
                        merge,
                        patch,
                    });
                    break;
                }
                Err(e) => {
                    log::warn!("{}: cannot merge into {file}: {e}", cand.id);
                    rejected.push((cand.id.clone(), e.to_string()));
                }
            }
        }
    }

    let added = crate::report::added_by(&entries);
    let art = IntegrationArtifact {
        schema_version: ARTIFACT_VERSION,
        pc_before: pc.ratio(),
        pc_after: pc.ratio_with(&added),
        entries,
        rejected,
    };
    let merged_root = dir.join(MERGED_DIR);
    let _ = fs::remove_dir_all(&merged_root);
    for (file, text) in &files {
        write_atomic(&merged_root.join(file), text.as_bytes()).map_err(failed)?;
    }
    write_json(&dir, INTEGRATION_FILE, &art)?;
    let out_dir = sess.out_dir()?;
    let path = emit_report(out_dir, pr_id, pc, &art.entries, &sources).map_err(failed)?;
    log::info!(
        "PR {pr_id}: patch coverage {:.1}% -> {:.1}%, report at {}",
        art.pc_before * 100.0,
        art.pc_after * 100.0,
        path.display()
    );
    finish_llm_stage(&dir, &llm)?;
    Ok(Some(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub pr_id: String,
    pub status: Status,
    pub report: Option<PathBuf>,
    pub pc_before: f64,
    pub pc_after: f64,
}

/// The whole pipeline for one PR.
pub fn augment(sess: &Session, inputs: &Inputs) -> Result<AugmentOutcome, PipelineError> {
    let cov = stage_coverage(sess, inputs)?;
    let pr_id = cov.pr.id.clone();
    let mut out = AugmentOutcome {
        pr_id: pr_id.clone(),
        status: cov.status,
        report: None,
        pc_before: cov.pc,
        pc_after: cov.pc,
    };
    if cov.status != Status::Proceed {
        log::info!("PR {pr_id}: {}", status_text(&cov));
        return Ok(out);
    }
    stage_context(sess, &pr_id, inputs.trace.as_deref())?;
    stage_generate(sess, &pr_id)?;
    out.report = stage_report(sess, &pr_id)?;
    let integ: IntegrationArtifact = read_artifact(&sess.pr_dir(&pr_id)?, INTEGRATION_FILE)?;
    out.pc_after = integ.pc_after;
    Ok(out)
}

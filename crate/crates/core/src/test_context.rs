//! Locating existing tests related to a focal function and cutting out the
//! scaffolding (imports, fixtures, class header, one test) a generated test
//! should imitate.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calltrace::{ancestors_of, CallTrace};
use crate::change::{classify_file, DiffModel, FileKind};
use crate::coverage::{versioned, FocalFunction, SchemaError, SCHEMA_VERSION};
use crate::llm::{LlmError, LlmGateway, Message, Role};
use crate::provenance::sha256_hex;
use crate::pysource::{check_parses, identifiers, module_name, ItemKind, PyModule};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestGroup {
    /// `None` for module-level test functions.
    pub class: Option<String>,
    pub tests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFileSummary {
    pub path: String,
    #[serde(default)]
    pub groups: Vec<TestGroup>,
}

impl TestFileSummary {
    pub fn test_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for g in &self.groups {
            for t in &g.tests {
                ids.push(test_id(&self.path, g.class.as_deref(), t));
            }
        }
        ids
    }
}

pub fn test_id(path: &str, class: Option<&str>, method: &str) -> String {
    match class {
        Some(c) => format!("{path}::{c}::{method}"),
        None => format!("{path}::{method}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuiteIndex {
    pub schema_version: u32,
    pub files: Vec<TestFileSummary>,
}

impl Default for TestSuiteIndex {
    fn default() -> Self {
        TestSuiteIndex {
            schema_version: SCHEMA_VERSION,
            files: Vec::new(),
        }
    }
}

impl TestSuiteIndex {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let idx: TestSuiteIndex = versioned(text)?;
        for f in &idx.files {
            if classify_file(&f.path) != FileKind::Test {
                return Err(SchemaError::Invariant(format!(
                    "{} is listed in the test index but is not a test file",
                    f.path
                )));
            }
        }
        Ok(idx)
    }

    /// Index every parseable Python test file under `root` that defines at
    /// least one test.
    pub fn from_workspace(root: &Path) -> std::io::Result<Self> {
        let mut files = Vec::new();
        let walker = walkdir::WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                let name = e.file_name().to_string_lossy();
                e.depth() == 0 || !(name.starts_with('.') || name == "__pycache__")
            });
        for entry in walker {
            let entry = entry.map_err(std::io::Error::other)?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .unwrap_or(entry.path())
                .to_string_lossy()
                .replace('\\', "/");
            if !rel.ends_with(".py") || classify_file(&rel) != FileKind::Test {
                continue;
            }
            let text = fs::read_to_string(entry.path())?;
            match PyModule::parse(&text, &rel) {
                Ok(m) => {
                    let summary = summarize_module(&rel, &m);
                    if !summary.test_ids().is_empty() {
                        files.push(summary);
                    }
                }
                Err(e) => log::warn!("not indexing {rel}: {e}"),
            }
        }
        Ok(TestSuiteIndex {
            schema_version: SCHEMA_VERSION,
            files,
        })
    }

    pub fn paths(&self) -> Vec<String> {
        self.files.iter().map(|f| f.path.clone()).collect()
    }

    pub fn file(&self, path: &str) -> Option<&TestFileSummary> {
        self.files.iter().find(|f| f.path == path)
    }

    /// Map a dotted trace name such as `pkg.tests.test_a.TestX.test_y` onto
    /// an indexed test.
    pub fn resolve_dotted(&self, name: &str) -> Option<(String, Option<String>, String)> {
        for f in &self.files {
            let module = module_name(&f.path);
            let Some(rest) = name.strip_prefix(&module).and_then(|r| r.strip_prefix('.')) else {
                continue;
            };
            let (class, method) = match rest.split_once('.') {
                Some((c, m)) => (Some(c.to_string()), m.to_string()),
                None => (None, rest.to_string()),
            };
            let known = f
                .groups
                .iter()
                .any(|g| g.class == class && g.tests.iter().any(|t| *t == method));
            if known {
                return Some((f.path.clone(), class, method));
            }
        }
        None
    }
}

fn summarize_module(path: &str, m: &PyModule) -> TestFileSummary {
    let mut groups = Vec::new();
    let top: Vec<String> = m
        .items
        .iter()
        .filter_map(|i| match &i.kind {
            ItemKind::Function(f) if f.is_test() => Some(f.name.clone()),
            _ => None,
        })
        .collect();
    if !top.is_empty() {
        groups.push(TestGroup { class: None, tests: top });
    }
    for item in &m.items {
        if let ItemKind::Class(c) = &item.kind {
            if !c.name.starts_with("Test") {
                continue;
            }
            let tests: Vec<String> = c
                .members
                .iter()
                .filter_map(|i| match &i.kind {
                    ItemKind::Function(f) if f.is_test() => Some(f.name.clone()),
                    _ => None,
                })
                .collect();
            if !tests.is_empty() {
                groups.push(TestGroup {
                    class: Some(c.name.clone()),
                    tests,
                });
            }
        }
    }
    TestFileSummary {
        path: path.to_string(),
        groups,
    }
}

/// Lowercased path tokens split on `/`, `_` and `.`.
pub fn path_tokens(path: &str) -> BTreeSet<String> {
    path.split(['/', '_', '.'])
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Exact rational similarity `num / den`, compared by value.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn as_f64(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        // A zero denominator only arises for two empty token sets; treat as 0.
        let (a, b) = (self.num * other.den.max(1), other.num * self.den.max(1));
        a.cmp(&b)
    }
}

pub fn jaccard(a: &str, b: &str) -> Ratio {
    let (ta, tb) = (path_tokens(a), path_tokens(b));
    Ratio {
        num: ta.intersection(&tb).count(),
        den: ta.union(&tb).count(),
    }
}

/// Score of every test path: best similarity to any changed source path.
pub fn score_test_files(test_files: &[String], diff: &DiffModel) -> Vec<(String, Ratio)> {
    let sources: Vec<&str> = diff.source_files().map(|f| f.path.as_str()).collect();
    let unique: BTreeSet<&String> = test_files.iter().collect();
    let mut scored: Vec<(String, Ratio)> = unique
        .into_iter()
        .map(|t| {
            let best = sources
                .iter()
                .map(|s| jaccard(t, s))
                .max()
                .unwrap_or(Ratio { num: 0, den: 1 });
            (t.clone(), best)
        })
        .collect();
    scored.sort_by(|(pa, sa), (pb, sb)| sb.cmp(sa).then_with(|| pa.cmp(pb)));
    scored
}

pub fn rank_test_files_jaccard(index: &TestSuiteIndex, diff: &DiffModel, k: usize) -> Vec<String> {
    score_test_files(&index.paths(), diff)
        .into_iter()
        .take(k.max(1))
        .map(|(p, _)| p)
        .collect()
}

/// Test files the PR itself touches, or else the `k` most similar ones.
pub fn candidate_test_files(index: &TestSuiteIndex, diff: &DiffModel, k: usize) -> Vec<String> {
    let touched: Vec<String> = diff
        .test_files()
        .filter(|f| f.path.ends_with(".py"))
        .map(|f| f.path.clone())
        .collect();
    if !touched.is_empty() {
        return touched;
    }
    rank_test_files_jaccard(index, diff, k)
}

const PICK_FILES_SYSTEM: &str = "You match code changes to the existing tests that exercise them. \
Reply with the relevant test file paths from the candidate list, one per line.";

fn diff_listing(diff: &DiffModel) -> String {
    diff.files
        .iter()
        .map(|f| format!("- {} ({:?}, {:?})\n", f.path, f.kind, f.change))
        .collect()
}

/// Candidates named in `response`, in order of mention.
pub fn parse_named_paths(response: &str, candidates: &[String]) -> Vec<String> {
    let mut hits: Vec<(usize, &String)> = candidates
        .iter()
        .filter_map(|c| response.find(c.as_str()).map(|i| (i, c)))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, c)| c.clone()).collect()
}

pub fn select_test_files(
    candidates: &[String],
    diff: &DiffModel,
    llm: &LlmGateway,
) -> Result<Vec<String>, LlmError> {
    if candidates.len() <= 1 {
        return Ok(candidates.to_vec());
    }
    let listing: String = candidates.iter().map(|c| format!("- {c}\n")).collect();
    let reply = llm.complete(
        Role::PickTestFiles,
        vec![
            Message::system(PICK_FILES_SYSTEM),
            Message::user(format!(
                "Changed files:\n{}\nCandidate test files:\n{listing}",
                diff_listing(diff)
            )),
        ],
    )?;
    let picked = parse_named_paths(&reply.text, candidates);
    if picked.is_empty() {
        log::info!("test-file selection named no candidate; keeping all {}", candidates.len());
        return Ok(candidates.to_vec());
    }
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextOrigin {
    StaticDynamic,
    LlmFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestContext {
    pub file: String,
    pub class_name: Option<String>,
    pub method_name: String,
    pub scaffold: String,
    pub origin: ContextOrigin,
}

impl TestContext {
    pub fn test_id(&self) -> String {
        test_id(&self.file, self.class_name.as_deref(), &self.method_name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestContextMap {
    pub selected_files: Vec<String>,
    pub entries: BTreeMap<String, Vec<TestContext>>,
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("no test context could be found for {0}")]
    ContextUnavailable(String),
    #[error("the project has no test files to draw context from")]
    NoTestFiles,
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("collecting call trace: {0}")]
    Trace(String),
    #[error("{0}")]
    Parse(#[from] crate::pysource::ParseFailure),
}

/// Cut the scaffold for one test out of its file: module imports, the
/// module-level assignments and fixtures it references, the enclosing class
/// header with its setup/fixture methods, and the test itself.
pub fn extract_scaffold(
    text: &str,
    path: &str,
    class: Option<&str>,
    method: &str,
) -> Result<String, ContextError> {
    let m = PyModule::parse(text, path)?;
    let mut referenced = BTreeSet::new();
    let mut pieces: Vec<(u32, String)> = Vec::new();
    let missing = || ContextError::ContextUnavailable(test_id(path, class, method));

    match class {
        Some(cname) => {
            let (citem, c) = m.class(cname).ok_or_else(missing)?;
            c.function(method).ok_or_else(missing)?;
            let mut body = m.lines_text(citem.start_line, c.header_end_line).to_string();
            let mut members = Vec::new();
            for member in &c.members {
                let keep = match &member.kind {
                    ItemKind::Function(f) => f.is_fixture() || f.name == method,
                    ItemKind::Assign(_) => true,
                    _ => false,
                };
                if keep && member.start_line > c.header_end_line {
                    let t = m.item_text(member);
                    referenced.extend(identifiers(t));
                    members.push(t.to_string());
                }
            }
            referenced.extend(identifiers(&body));
            body.push_str(&members.join("\n"));
            pieces.push((citem.start_line, body));
        }
        None => {
            let (titem, _) = m.function(method).ok_or_else(missing)?;
            let t = m.item_text(titem);
            referenced.extend(identifiers(t));
            pieces.push((titem.start_line, t.to_string()));
        }
    }

    // Module-level fixtures can pull in further fixtures and globals, so
    // close over references until nothing new is added.
    let mut included: BTreeSet<u32> = BTreeSet::new();
    loop {
        let mut grew = false;
        for item in &m.items {
            if included.contains(&item.start_line) {
                continue;
            }
            let wanted = match &item.kind {
                ItemKind::Assign(names) => names.iter().any(|n| referenced.contains(n)),
                ItemKind::Function(f) => f.is_fixture() && referenced.contains(&f.name),
                _ => false,
            };
            if wanted {
                let t = m.item_text(item);
                referenced.extend(identifiers(t));
                pieces.push((item.start_line, t.to_string()));
                included.insert(item.start_line);
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    for (item, _) in m.imports() {
        pieces.push((item.start_line, m.item_text(item).to_string()));
    }
    pieces.sort_by_key(|(line, _)| *line);

    let mut out = String::new();
    let mut prev_import = false;
    for (i, (_, text)) in pieces.iter().enumerate() {
        let is_import = text.starts_with("import ") || text.starts_with("from ");
        if i > 0 && !(is_import && prev_import) {
            out.push('\n');
        }
        out.push_str(text);
        if !text.ends_with('\n') {
            out.push('\n');
        }
        prev_import = is_import;
    }
    if let Err(e) = check_parses(&out, path) {
        log::warn!("scaffold for {} does not parse ({e}); using the whole file", test_id(path, class, method));
        return Ok(text.to_string());
    }
    Ok(out)
}

/// On-disk JSON cache for test contexts and test-file selections. Readers
/// take a shared lock, writers an exclusive one.
#[derive(Debug, Clone)]
pub struct ContextCache {
    dir: PathBuf,
}

impl ContextCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ContextCache { dir })
    }

    fn lock_file(&self) -> std::io::Result<File> {
        OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.dir.join(".lock"))
    }

    fn path_for(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{kind}-{key}.json"))
    }

    pub fn get<T: serde::de::DeserializeOwned>(&self, kind: &str, key: &str) -> Option<T> {
        let lock = self.lock_file().ok()?;
        lock.lock_shared().ok()?;
        let text = fs::read_to_string(self.path_for(kind, key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> std::io::Result<()> {
        let lock = self.lock_file()?;
        lock.lock()?;
        let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        crate::util::write_atomic(&self.path_for(kind, key), text.as_bytes())
    }
}

/// Inputs shared by every focal function when building contexts.
pub struct ContextInputs<'a> {
    pub root: &'a Path,
    pub index: &'a TestSuiteIndex,
    pub diff: &'a DiffModel,
    pub top_k: usize,
    pub cache: Option<&'a ContextCache>,
}

fn read_rel(root: &Path, rel: &str) -> Result<String, ContextError> {
    let path = root.join(rel);
    fs::read_to_string(&path).map_err(|source| ContextError::Io { path, source })
}

const PICK_FUNCTION_SYSTEM: &str = "You choose which existing test best resembles a test that \
should exercise a given function. Reply with exactly one test id from the list, in the form \
path::Class::method or path::function.";

fn fallback_context(
    inp: &ContextInputs<'_>,
    selected: &[String],
    focal: &FocalFunction,
    llm: &LlmGateway,
) -> Result<TestContext, ContextError> {
    let ids: Vec<String> = selected
        .iter()
        .filter_map(|p| inp.index.file(p))
        .flat_map(|f| f.test_ids())
        .collect();
    if ids.is_empty() {
        return Err(ContextError::ContextUnavailable(focal.qualified_name.clone()));
    }
    let listing: String = ids.iter().map(|i| format!("- {i}\n")).collect();
    let mut messages = vec![
        Message::system(PICK_FUNCTION_SYSTEM),
        Message::user(format!(
            "Function `{}` in {}:\n\n```python\n{}```\n\nExisting tests:\n{listing}",
            focal.qualified_name, focal.file, focal.annotated_source
        )),
    ];
    for _attempt in 0..2 {
        let reply = llm.complete(Role::PickTestFunction, messages.clone())?;
        let mut hits: Vec<(usize, usize, &String)> = ids
            .iter()
            .filter_map(|id| reply.text.find(id.as_str()).map(|i| (i, usize::MAX - id.len(), id)))
            .collect();
        hits.sort();
        if let Some((_, _, id)) = hits.first() {
            let mut parts = id.splitn(3, "::");
            let file = parts.next().unwrap_or_default().to_string();
            let (class, method) = match (parts.next(), parts.next()) {
                (Some(c), Some(m)) => (Some(c.to_string()), m.to_string()),
                (Some(m), None) => (None, m.to_string()),
                _ => unreachable!("ids always carry a test name"),
            };
            let text = read_rel(inp.root, &file)?;
            let scaffold = extract_scaffold(&text, &file, class.as_deref(), &method)?;
            return Ok(TestContext {
                file,
                class_name: class,
                method_name: method,
                scaffold,
                origin: ContextOrigin::LlmFallback,
            });
        }
        messages.push(Message::assistant(reply.text));
        messages.push(Message::user(
            "That is not one of the listed test ids. Reply with one id copied exactly from the list.",
        ));
    }
    Err(ContextError::ContextUnavailable(focal.qualified_name.clone()))
}

/// Build the focal → contexts map. `trace_for` runs the profiler over the
/// selected files; it is called at most once, and not at all when every
/// focal is served from the cache.
pub fn build_test_context_map(
    inp: &ContextInputs<'_>,
    focals: &[FocalFunction],
    trace_for: &mut dyn FnMut(&[String]) -> Result<CallTrace, ContextError>,
    llm: &LlmGateway,
) -> Result<TestContextMap, ContextError> {
    let mut map = TestContextMap::default();
    if focals.is_empty() {
        return Ok(map);
    }
    let candidates = candidate_test_files(inp.index, inp.diff, inp.top_k);
    if candidates.is_empty() {
        return Err(ContextError::NoTestFiles);
    }
    let selection_key = sha256_hex(format!("{}\0{}", candidates.join("\n"), diff_listing(inp.diff)));
    let selected = match inp.cache.and_then(|c| c.get::<Vec<String>>("selection", &selection_key)) {
        Some(s) => s,
        None => {
            let s = select_test_files(&candidates, inp.diff, llm)?;
            if let Some(c) = inp.cache {
                if let Err(e) = c.put("selection", &selection_key, &s) {
                    log::warn!("cache write failed: {e}");
                }
            }
            s
        }
    };

    let mut content = String::new();
    for path in &selected {
        content.push_str(path);
        content.push('\0');
        content.push_str(&read_rel(inp.root, path)?);
        content.push('\0');
    }
    let content_hash = sha256_hex(&content);

    let mut trace: Option<CallTrace> = None;
    for focal in focals {
        let key = sha256_hex(format!("{content_hash}\0{}", focal.qualified_name));
        if let Some(hit) = inp.cache.and_then(|c| c.get::<Vec<TestContext>>("context", &key)) {
            map.entries.insert(focal.qualified_name.clone(), hit);
            continue;
        }
        if trace.is_none() {
            trace = Some(trace_for(&selected)?);
        }
        let t = trace.as_ref().unwrap();
        let mut contexts = Vec::new();
        let mut seen = BTreeSet::new();
        for ancestor in ancestors_of(t, &focal.qualified_name) {
            if !t.test_roots.contains(&ancestor) {
                continue;
            }
            let Some((file, class, method)) = inp.index.resolve_dotted(&ancestor) else {
                log::warn!("trace root {ancestor} does not match any indexed test");
                continue;
            };
            if !seen.insert(test_id(&file, class.as_deref(), &method)) {
                continue;
            }
            let text = read_rel(inp.root, &file)?;
            let scaffold = extract_scaffold(&text, &file, class.as_deref(), &method)?;
            contexts.push(TestContext {
                file,
                class_name: class,
                method_name: method,
                scaffold,
                origin: ContextOrigin::StaticDynamic,
            });
        }
        if contexts.is_empty() {
            match fallback_context(inp, &selected, focal, llm) {
                Ok(c) => contexts.push(c),
                Err(ContextError::ContextUnavailable(name)) => {
                    log::warn!("no test context for {name}; it will not get generated tests");
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(c) = inp.cache {
            if let Err(e) = c.put("context", &key, &contexts) {
                log::warn!("cache write failed: {e}");
            }
        }
        map.entries.insert(focal.qualified_name.clone(), contexts);
    }
    map.selected_files = selected;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::change::{ChangeKind, ChangedFile};

    fn diff(paths: &[&str]) -> DiffModel {
        DiffModel {
            files: paths
                .iter()
                .map(|p| ChangedFile {
                    path: p.to_string(),
                    kind: classify_file(p),
                    change: ChangeKind::Modified,
                    touched_lines: [1].into(),
                })
                .collect(),
            total_code_files: paths.len(),
        }
    }

    #[test]
    fn jaccard_example() {
        let r = jaccard("scipy/linalg/tests/test_matrix.py", "scipy/linalg/matrix_decomp.py");
        assert_eq!((r.num, r.den), (4, 7));
        assert_eq!(jaccard("a/b.py", "a/b.py"), Ratio { num: 3, den: 3 });
    }

    #[test]
    fn ranking_ties_lexicographic() {
        let d = diff(&["pkg/core.py"]);
        let files = vec!["pkg/tests/test_zz.py".to_string(), "pkg/tests/test_aa.py".to_string()];
        let ranked = score_test_files(&files, &d);
        assert_eq!(ranked[0].0, "pkg/tests/test_aa.py");
        let d = diff(&["pkg/tests/test_zz.py", "src/x.py"]);
        // test files in the diff are not SOURCE and do not score
        assert_eq!(score_test_files(&files, &d)[0].0, "pkg/tests/test_aa.py");
    }

    const TESTFILE: &str = "import numpy as np\nimport pytest\nfrom pkg.mod import f\n\n\
dtypes = [np.float32]\nunused = 3\n\n\n\
@pytest.fixture\ndef data():\n    return [1, 2]\n\n\n\
class TestF:\n    def setup_method(self):\n        self.x = 1\n\n    \
@pytest.mark.parametrize('dt', dtypes)\n    def test_a(self, dt):\n        assert f(1) == 1\n\n    \
def test_b(self, data):\n        assert f(data) == data\n\n\n\
def test_top(data):\n    assert f(2) == 2\n";

    #[test]
    fn scaffold_contents() {
        let s = extract_scaffold(TESTFILE, "pkg/tests/test_mod.py", Some("TestF"), "test_a").unwrap();
        assert!(s.contains("import numpy as np\nimport pytest\nfrom pkg.mod import f\n"));
        assert!(s.contains("dtypes = [np.float32]"));
        assert!(!s.contains("unused"));
        assert!(!s.contains("def data"));
        assert!(s.contains("class TestF:"));
        assert!(s.contains("def setup_method"));
        assert!(s.contains("def test_a"));
        assert!(!s.contains("def test_b"));
        check_parses(&s, "s").unwrap();

        let s = extract_scaffold(TESTFILE, "p", None, "test_top").unwrap();
        assert!(s.contains("def data"));
        assert!(!s.contains("class TestF"));
        assert!(matches!(
            extract_scaffold(TESTFILE, "p", Some("TestF"), "nope"),
            Err(ContextError::ContextUnavailable(_))
        ));
    }

    #[test]
    fn index_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("pkg/tests")).unwrap();
        fs::write(dir.path().join("pkg/tests/test_mod.py"), TESTFILE).unwrap();
        fs::write(dir.path().join("pkg/mod.py"), "def f(x):\n    return x\n").unwrap();
        fs::write(dir.path().join("pkg/tests/test_broken.py"), "def (:\n").unwrap();
        let idx = TestSuiteIndex::from_workspace(dir.path()).unwrap();
        assert_eq!(idx.paths(), ["pkg/tests/test_mod.py"]);
        assert_eq!(
            idx.files[0].test_ids(),
            [
                "pkg/tests/test_mod.py::test_top",
                "pkg/tests/test_mod.py::TestF::test_a",
                "pkg/tests/test_mod.py::TestF::test_b"
            ]
        );
        assert_eq!(
            idx.resolve_dotted("pkg.tests.test_mod.TestF.test_b"),
            Some(("pkg/tests/test_mod.py".into(), Some("TestF".into()), "test_b".into()))
        );
        assert_eq!(idx.resolve_dotted("pkg.tests.test_mod.helper"), None);
    }

    #[test]
    fn named_paths() {
        let c = vec!["a/test_x.py".to_string(), "a/test_y.py".to_string()];
        assert_eq!(parse_named_paths("a/test_y.py\na/test_x.py", &c), ["a/test_y.py", "a/test_x.py"]);
        assert!(parse_named_paths("b/test_z.py", &c).is_empty());
    }
}

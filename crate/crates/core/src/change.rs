//! Pull-request change model: unified diff parsing, file classification and
//! the PR selection filter.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed diff at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum PrMetaError {
    #[error("invalid PR metadata JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("link {0:?} does not appear in the PR body or comments")]
    DanglingLink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileKind {
    Source,
    Test,
    Doc,
    Other,
}

impl FileKind {
    pub fn is_code(self) -> bool {
        matches!(self, FileKind::Source | FileKind::Test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChangeKind {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedFile {
    pub path: String,
    pub kind: FileKind,
    pub change: ChangeKind,
    /// Post-image line numbers of added or modified lines.
    pub touched_lines: BTreeSet<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffModel {
    pub files: Vec<ChangedFile>,
    pub total_code_files: usize,
}

impl DiffModel {
    pub fn file(&self, path: &str) -> Option<&ChangedFile> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn source_files(&self) -> impl Iterator<Item = &ChangedFile> {
        self.files.iter().filter(|f| f.kind == FileKind::Source)
    }

    /// Test files touched by the PR that still exist after it.
    pub fn test_files(&self) -> impl Iterator<Item = &ChangedFile> {
        self.files
            .iter()
            .filter(|f| f.kind == FileKind::Test && f.change != ChangeKind::Deleted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub author: String,
    pub text: String,
}

/// PR metadata as supplied on disk. The diff is carried separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrMeta {
    #[serde(deserialize_with = "id_from_any")]
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub comments: Vec<Comment>,
    #[serde(default)]
    pub links: Vec<String>,
}

fn id_from_any<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "PR id must be a string or number, got {other}"
        ))),
    }
}

impl PrMeta {
    pub fn from_json(text: &str) -> Result<Self, PrMetaError> {
        let meta: PrMeta = serde_json::from_str(text)?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), PrMetaError> {
        for link in &self.links {
            let found = self.body.contains(link.as_str())
                || self.comments.iter().any(|c| c.text.contains(link.as_str()));
            if !found {
                return Err(PrMetaError::DanglingLink(link.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullRequest {
    pub meta: PrMeta,
    pub diff: DiffModel,
}

const DOC_EXTENSIONS: &[&str] = &["md", "rst", "txt"];

const CODE_EXTENSIONS: &[&str] = &[
    "py", "pyx", "pxd", "pxi", "pyi", "c", "h", "cc", "cpp", "cxx", "hpp", "hh", "f", "f90", "f95",
    "for", "rs", "go", "java", "kt", "scala", "js", "jsx", "ts", "tsx", "rb", "jl", "m", "swift",
    "cs", "cu", "cuh",
];

/// Classify a repository-relative path. Pure function of the path string.
pub fn classify_file(path: &str) -> FileKind {
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let Some(basename) = segments.last().copied() else {
        return FileKind::Other;
    };
    let (stem, ext) = match basename.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => (stem, Some(ext.to_ascii_lowercase())),
        _ => (basename, None),
    };

    let in_test_dir = segments[..segments.len() - 1]
        .iter()
        .any(|s| *s == "tests" || *s == "test");
    if in_test_dir || stem.starts_with("test_") || stem.ends_with("_test") {
        return FileKind::Test;
    }

    let in_doc_dir = segments[..segments.len() - 1]
        .iter()
        .any(|s| *s == "doc" || *s == "docs");
    let doc_ext = ext.as_deref().is_some_and(|e| DOC_EXTENSIONS.contains(&e));
    if in_doc_dir || doc_ext {
        return FileKind::Doc;
    }

    match ext.as_deref() {
        Some(e) if CODE_EXTENSIONS.contains(&e) => FileKind::Source,
        _ => FileKind::Other,
    }
}

struct PendingFile {
    header_line: usize,
    git_old: Option<String>,
    git_new: Option<String>,
    old_path: Option<String>,
    new_path: Option<String>,
    new_file: bool,
    deleted_file: bool,
    renamed: bool,
    rename_to: Option<String>,
    touched: BTreeSet<u32>,
}

impl PendingFile {
    fn new(header_line: usize) -> Self {
        PendingFile {
            header_line,
            git_old: None,
            git_new: None,
            old_path: None,
            new_path: None,
            new_file: false,
            deleted_file: false,
            renamed: false,
            rename_to: None,
            touched: BTreeSet::new(),
        }
    }

    fn finish(self) -> Result<ChangedFile, DiffError> {
        let old_is_null = self.old_path.as_deref() == Some(DEV_NULL);
        let new_is_null = self.new_path.as_deref() == Some(DEV_NULL);
        let change = if self.deleted_file || new_is_null {
            ChangeKind::Deleted
        } else if self.new_file || old_is_null || self.renamed {
            ChangeKind::Added
        } else {
            ChangeKind::Modified
        };
        let path = if change == ChangeKind::Deleted {
            self.old_path
                .filter(|p| p != DEV_NULL)
                .or(self.git_old)
        } else {
            self.rename_to
                .or(self.new_path.filter(|p| p != DEV_NULL))
                .or(self.git_new)
        };
        let path = path.ok_or_else(|| DiffError::Malformed {
            line: self.header_line,
            reason: "file header without a usable path".into(),
        })?;
        let touched_lines = if change == ChangeKind::Deleted {
            BTreeSet::new()
        } else {
            self.touched
        };
        Ok(ChangedFile {
            kind: classify_file(&path),
            path,
            change,
            touched_lines,
        })
    }
}

const DEV_NULL: &str = "/dev/null";

struct HunkState {
    old_remaining: u32,
    new_remaining: u32,
    next_new_line: u32,
}

fn malformed(line: usize, reason: impl Into<String>) -> DiffError {
    DiffError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn unquote(path: &str) -> String {
    let p = path.trim();
    if p.len() >= 2 && p.starts_with('"') && p.ends_with('"') {
        p[1..p.len() - 1].replace("\\\"", "\"").replace("\\\\", "\\")
    } else {
        p.to_string()
    }
}

fn strip_prefix_component(path: String, prefix: &str) -> String {
    match path.strip_prefix(prefix) {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => path,
    }
}

/// Path from a `---`/`+++` line with any trailing timestamp removed.
fn header_path(rest: &str, prefix: &str) -> String {
    let raw = rest.split('\t').next().unwrap_or(rest);
    let p = unquote(raw.trim_end());
    if p == DEV_NULL {
        return p;
    }
    strip_prefix_component(p, prefix)
}

fn parse_git_header(rest: &str) -> (Option<String>, Option<String>) {
    let rest = rest.trim_end();
    if let Some(idx) = rest.rfind(" b/") {
        let old = unquote(&rest[..idx]);
        let new = unquote(&rest[idx + 1..]);
        (
            Some(strip_prefix_component(old, "a/")),
            Some(strip_prefix_component(new, "b/")),
        )
    } else {
        (None, None)
    }
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk_header(line: &str) -> Option<((u32, u32), (u32, u32))> {
    let rest = line.strip_prefix("@@ ")?;
    let end = rest.find(" @@")?;
    let mut parts = rest[..end].split_whitespace();
    let old = parts.next()?.strip_prefix('-')?;
    let new = parts.next()?.strip_prefix('+')?;
    if parts.next().is_some() {
        return None;
    }
    Some((parse_range(old)?, parse_range(new)?))
}

/// Parse a unified diff (plain `diff -u` or git flavoured) into a [`DiffModel`].
pub fn parse_unified_diff(raw: &str) -> Result<DiffModel, DiffError> {
    let mut files: Vec<ChangedFile> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut current: Option<PendingFile> = None;
    let mut hunk: Option<HunkState> = None;
    let mut last_line_no = 0;

    let mut push = |pending: PendingFile, files: &mut Vec<ChangedFile>| -> Result<(), DiffError> {
        let line = pending.header_line;
        let file = pending.finish()?;
        if !seen.insert(file.path.clone()) {
            return Err(malformed(line, format!("duplicate entry for {}", file.path)));
        }
        files.push(file);
        Ok(())
    };

    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        last_line_no = line_no;

        if let Some(h) = hunk.as_mut() {
            if h.old_remaining > 0 || h.new_remaining > 0 {
                let file = current.as_mut().expect("hunk implies an open file");
                match line.as_bytes().first() {
                    None | Some(b' ') => {
                        if h.old_remaining == 0 || h.new_remaining == 0 {
                            return Err(malformed(line_no, "context line exceeds hunk length"));
                        }
                        h.old_remaining -= 1;
                        h.new_remaining -= 1;
                        h.next_new_line += 1;
                    }
                    Some(b'+') => {
                        if h.new_remaining == 0 {
                            return Err(malformed(line_no, "added line exceeds hunk length"));
                        }
                        file.touched.insert(h.next_new_line);
                        h.new_remaining -= 1;
                        h.next_new_line += 1;
                    }
                    Some(b'-') => {
                        if h.old_remaining == 0 {
                            return Err(malformed(line_no, "removed line exceeds hunk length"));
                        }
                        h.old_remaining -= 1;
                    }
                    Some(b'\\') => {}
                    Some(_) => {
                        return Err(malformed(line_no, "hunk shorter than its header declares"));
                    }
                }
                continue;
            }
        }

        if line.starts_with('\\') {
            continue;
        }

        if let Some(rest) = line.strip_prefix("diff --git ") {
            if let Some(done) = current.take() {
                push(done, &mut files)?;
            }
            hunk = None;
            let mut pending = PendingFile::new(line_no);
            let (old, new) = parse_git_header(rest);
            pending.git_old = old;
            pending.git_new = new;
            current = Some(pending);
            continue;
        }

        if let Some(rest) = line.strip_prefix("--- ") {
            // A `---` outside a hunk opens a new file unless a git header
            // already opened one that has not seen its paths yet.
            let reuse = matches!(&current, Some(p) if p.old_path.is_none() && p.touched.is_empty() && hunk.is_none());
            if !reuse {
                if let Some(done) = current.take() {
                    push(done, &mut files)?;
                }
                current = Some(PendingFile::new(line_no));
            }
            hunk = None;
            current.as_mut().unwrap().old_path = Some(header_path(rest, "a/"));
            continue;
        }

        if let Some(rest) = line.strip_prefix("+++ ") {
            match current.as_mut() {
                Some(p) if p.old_path.is_some() && p.new_path.is_none() => {
                    p.new_path = Some(header_path(rest, "b/"));
                }
                _ => return Err(malformed(line_no, "'+++' without a preceding '---'")),
            }
            continue;
        }

        if line.starts_with("@@") {
            let Some(file) = current.as_mut() else {
                return Err(malformed(line_no, "hunk without a file header"));
            };
            if file.new_path.is_none() {
                return Err(malformed(line_no, "hunk before '---'/'+++' headers"));
            }
            let Some(((_, old_len), (new_start, new_len))) = parse_hunk_header(line) else {
                return Err(malformed(line_no, "unparseable hunk header"));
            };
            hunk = Some(HunkState {
                old_remaining: old_len,
                new_remaining: new_len,
                next_new_line: new_start,
            });
            continue;
        }

        match current.as_mut() {
            None => {} // preamble such as a commit message
            Some(p) => {
                if line.starts_with("new file mode") {
                    p.new_file = true;
                } else if line.starts_with("deleted file mode") {
                    p.deleted_file = true;
                } else if let Some(to) = line.strip_prefix("rename to ") {
                    p.renamed = true;
                    p.rename_to = Some(unquote(to));
                } else if line.starts_with("rename from ") {
                    p.renamed = true;
                } else if line == "-- " || line == "--" {
                    // format-patch signature separator
                } else if hunk.is_some()
                    && matches!(line.as_bytes().first(), Some(b'+' | b'-' | b' '))
                {
                    return Err(malformed(line_no, "hunk longer than its header declares"));
                }
                // index, mode, similarity and binary lines carry no line data
            }
        }
    }

    if let Some(h) = &hunk {
        if h.old_remaining > 0 || h.new_remaining > 0 {
            return Err(malformed(last_line_no, "diff ends inside a hunk"));
        }
    }
    if let Some(done) = current.take() {
        push(done, &mut files)?;
    }

    let total_code_files = files.iter().filter(|f| f.kind.is_code()).count();
    Ok(DiffModel {
        files,
        total_code_files,
    })
}

/// Knobs for [`pr_selection_filter`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionFilter {
    pub max_code_files: usize,
    pub exclusion_keywords: Vec<String>,
    /// Path prefixes outside coverage tracking scope.
    pub scope_denylist: Vec<String>,
}

impl Default for SelectionFilter {
    fn default() -> Self {
        SelectionFilter {
            max_code_files: 5,
            exclusion_keywords: vec!["DOC".into(), "backport".into()],
            scope_denylist: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterVerdict {
    Accept,
    NoCodeChanges,
    TooManyFiles(usize),
    ExcludedKeyword(String),
    OutOfScope(String),
}

impl FilterVerdict {
    pub fn accepted(&self) -> bool {
        matches!(self, FilterVerdict::Accept)
    }
}

impl std::fmt::Display for FilterVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterVerdict::Accept => write!(f, "accepted"),
            FilterVerdict::NoCodeChanges => write!(f, "no code changes other than deletions"),
            FilterVerdict::TooManyFiles(n) => write!(f, "modifies {n} code files"),
            FilterVerdict::ExcludedKeyword(k) => write!(f, "title contains excluded keyword {k:?}"),
            FilterVerdict::OutOfScope(p) => write!(f, "touches {p}, outside coverage scope"),
        }
    }
}

/// Case-insensitive whole-word match, so "DOC" hits "DOC: fix" but not "docstring".
fn title_has_keyword(title: &str, keyword: &str) -> bool {
    let kw = keyword.to_lowercase();
    if kw.is_empty() {
        return false;
    }
    title
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .any(|word| word == kw)
}

pub fn selection_verdict(pr: &PullRequest, filter: &SelectionFilter) -> FilterVerdict {
    let has_code_change = pr.diff.files.iter().any(|f| {
        f.kind.is_code() && f.change != ChangeKind::Deleted && !f.touched_lines.is_empty()
    });
    if !has_code_change {
        return FilterVerdict::NoCodeChanges;
    }
    if pr.diff.total_code_files > filter.max_code_files {
        return FilterVerdict::TooManyFiles(pr.diff.total_code_files);
    }
    if let Some(k) = filter
        .exclusion_keywords
        .iter()
        .find(|k| title_has_keyword(&pr.meta.title, k))
    {
        return FilterVerdict::ExcludedKeyword(k.clone());
    }
    for file in &pr.diff.files {
        if in_denylist(&file.path, &filter.scope_denylist) {
            return FilterVerdict::OutOfScope(file.path.clone());
        }
    }
    FilterVerdict::Accept
}

pub fn pr_selection_filter(pr: &PullRequest, filter: &SelectionFilter) -> bool {
    selection_verdict(pr, filter).accepted()
}

pub fn in_denylist(path: &str, denylist: &[String]) -> bool {
    denylist.iter().any(|prefix| {
        let prefix = prefix.trim_end_matches('/');
        !prefix.is_empty()
            && (path == prefix || Path::new(path).starts_with(Path::new(prefix)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn single_hunk_single_add() {
        let diff = "--- a/pkg/mod.py\n+++ b/pkg/mod.py\n@@ -1,2 +1,3 @@\n a = 1\n+b = 2\n c = 3\n";
        let model = parse_unified_diff(diff).unwrap();
        assert_eq!(model.files.len(), 1);
        assert_eq!(model.files[0].path, "pkg/mod.py");
        assert_eq!(model.files[0].touched_lines, lines(&[2]));
        assert_eq!(model.files[0].change, ChangeKind::Modified);
        assert_eq!(model.total_code_files, 1);
    }

    #[test]
    fn empty_diff_has_no_files() {
        let model = parse_unified_diff("").unwrap();
        assert!(model.files.is_empty());
        assert_eq!(model.total_code_files, 0);
    }

    #[test]
    fn deleted_and_new_files() {
        let diff = "diff --git a/old.py b/old.py\ndeleted file mode 100644\nindex 1..0\n--- a/old.py\n+++ /dev/null\n@@ -1,2 +0,0 @@\n-x = 1\n-y = 2\ndiff --git a/new.py b/new.py\nnew file mode 100644\n--- /dev/null\n+++ b/new.py\n@@ -0,0 +1,2 @@\n+x = 1\n+y = 2\n";
        let model = parse_unified_diff(diff).unwrap();
        assert_eq!(model.files[0].path, "old.py");
        assert_eq!(model.files[0].change, ChangeKind::Deleted);
        assert!(model.files[0].touched_lines.is_empty());
        assert_eq!(model.files[1].path, "new.py");
        assert_eq!(model.files[1].change, ChangeKind::Added);
        assert_eq!(model.files[1].touched_lines, lines(&[1, 2]));
    }

    #[test]
    fn rename_is_added_at_new_path() {
        let diff = "diff --git a/pkg/a.py b/pkg/b.py\nsimilarity index 90%\nrename from pkg/a.py\nrename to pkg/b.py\n--- a/pkg/a.py\n+++ b/pkg/b.py\n@@ -3,1 +3,1 @@\n-x = 1\n+x = 2\n";
        let model = parse_unified_diff(diff).unwrap();
        assert_eq!(model.files[0].path, "pkg/b.py");
        assert_eq!(model.files[0].change, ChangeKind::Added);
        assert_eq!(model.files[0].touched_lines, lines(&[3]));
    }

    #[test]
    fn pure_rename_without_hunks() {
        let diff = "diff --git a/x.py b/y.py\nsimilarity index 100%\nrename from x.py\nrename to y.py\n";
        let model = parse_unified_diff(diff).unwrap();
        assert_eq!(model.files[0].path, "y.py");
        assert!(model.files[0].touched_lines.is_empty());
    }

    #[test]
    fn truncated_hunk_is_an_error() {
        let diff = "--- a/m.py\n+++ b/m.py\n@@ -1,3 +1,4 @@\n a\n+b\n";
        assert!(matches!(
            parse_unified_diff(diff),
            Err(DiffError::Malformed { line: 5, .. })
        ));
    }

    #[test]
    fn overlong_hunk_is_an_error() {
        let diff = "--- a/m.py\n+++ b/m.py\n@@ -1,1 +1,2 @@\n a\n+b\n+c\n";
        assert!(matches!(
            parse_unified_diff(diff),
            Err(DiffError::Malformed { line: 6, .. })
        ));
    }

    #[test]
    fn hunk_without_header_is_an_error() {
        assert!(parse_unified_diff("@@ -1 +1 @@\n-a\n+b\n").is_err());
    }

    #[test]
    fn duplicate_file_is_an_error() {
        let one = "--- a/m.py\n+++ b/m.py\n@@ -1 +1 @@\n-a\n+b\n";
        let diff = format!("{one}{one}");
        assert!(parse_unified_diff(&diff).is_err());
    }

    #[test]
    fn no_newline_marker_and_timestamps() {
        let diff = "--- a/m.py\t2024-01-01 00:00:00\n+++ b/m.py\t2024-01-02 00:00:00\n@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n\\ No newline at end of file\n";
        let model = parse_unified_diff(diff).unwrap();
        assert_eq!(model.files[0].path, "m.py");
        assert_eq!(model.files[0].touched_lines, lines(&[1]));
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_file("scipy/linalg/tests/test_matrix.py"), FileKind::Test);
        assert_eq!(classify_file("scipy/linalg/matrix_decomp.py"), FileKind::Source);
        assert_eq!(classify_file("docs/intro.md"), FileKind::Doc);
        assert_eq!(classify_file("pkg/io_test.py"), FileKind::Test);
        assert_eq!(classify_file("test/helpers.c"), FileKind::Test);
        assert_eq!(classify_file("doc/source/conf.py"), FileKind::Doc);
        assert_eq!(classify_file("README.rst"), FileKind::Doc);
        assert_eq!(classify_file("setup.cfg"), FileKind::Other);
        assert_eq!(classify_file("pkg/testing.py"), FileKind::Source);
        assert_eq!(classify_file("pkg/contest_x.py"), FileKind::Source);
    }

    fn pr(title: &str, diff: &str) -> PullRequest {
        PullRequest {
            meta: PrMeta {
                id: "1".into(),
                title: title.into(),
                body: String::new(),
                comments: vec![],
                links: vec![],
            },
            diff: parse_unified_diff(diff).unwrap(),
        }
    }

    fn file_diff(path: &str) -> String {
        format!("--- a/{path}\n+++ b/{path}\n@@ -1 +1 @@\n-a\n+b\n")
    }

    #[test]
    fn filter_rejects_six_source_files() {
        let diff: String = (0..6).map(|i| file_diff(&format!("pkg/m{i}.py"))).collect();
        let f = SelectionFilter::default();
        assert!(!pr_selection_filter(&pr("ENH: thing", &diff), &f));
        let diff5: String = (0..5).map(|i| file_diff(&format!("pkg/m{i}.py"))).collect();
        assert!(pr_selection_filter(&pr("ENH: thing", &diff5), &f));
    }

    #[test]
    fn filter_rejects_doc_only() {
        let f = SelectionFilter::default();
        assert!(!pr_selection_filter(&pr("ENH: docs", &file_diff("docs/a.md")), &f));
    }

    #[test]
    fn filter_accepts_small_bug_fix() {
        let diff = format!("{}{}", file_diff("scipy/signal/a.py"), file_diff("scipy/signal/b.py"));
        let f = SelectionFilter::default();
        assert!(pr_selection_filter(&pr("BUG: fix zpk2tf", &diff), &f));
    }

    #[test]
    fn filter_keywords_and_scope() {
        let diff = file_diff("pandas/core/a.py");
        let f = SelectionFilter::default();
        assert!(!pr_selection_filter(&pr("DOC: tweak", &diff), &f));
        assert!(!pr_selection_filter(&pr("Backport PR #123", &diff), &f));
        assert!(pr_selection_filter(&pr("BUG: docstring fix", &diff), &f));
        let scoped = SelectionFilter {
            scope_denylist: vec!["pandas/io".into()],
            ..SelectionFilter::default()
        };
        assert!(!pr_selection_filter(&pr("BUG: x", &file_diff("pandas/io/a.py")), &scoped));
        assert!(pr_selection_filter(&pr("BUG: x", &file_diff("pandas/iox/a.py")), &scoped));
    }

    #[test]
    fn deletion_only_code_change_is_rejected() {
        let diff = "--- a/m.py\n+++ b/m.py\n@@ -1,2 +1,1 @@\n a\n-b\n";
        assert!(!pr_selection_filter(&pr("ENH", diff), &SelectionFilter::default()));
    }

    #[test]
    fn pr_meta_links_must_be_present() {
        let ok = r#"{"id": 7, "title": "t", "body": "see https://x.org/a", "comments": [{"author":"b","text":"and https://y.org"}], "links": ["https://x.org/a", "https://y.org"]}"#;
        let meta = PrMeta::from_json(ok).unwrap();
        assert_eq!(meta.id, "7");
        let bad = r#"{"id": "7", "title": "t", "body": "", "links": ["https://x.org/a"]}"#;
        assert!(matches!(PrMeta::from_json(bad), Err(PrMetaError::DanglingLink(_))));
    }
}

//! Patch coverage: executable/covered/uncovered changed lines, source
//! annotation and focal-function segmentation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::DiffModel;

pub const SCHEMA_VERSION: u32 = 1;

pub const UNCOVERED_MARKER: &str = "# UNCOVERED!";
pub const BRANCH_MARKER: &str = "# BRANCH PARTIALLY UNCOVERED!";
pub const COVERED_BY_TEST_MARKER: &str = "# COVERED BY THIS TEST";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing top-level \"schema_version\"")]
    MissingVersion,
    #[error("unsupported schema_version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u32 },
    #[error("{0}")]
    Invariant(String),
}

/// Check `schema_version` before handing the document to serde.
pub(crate) fn versioned<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        None => return Err(SchemaError::MissingVersion),
        Some(v) if v != SCHEMA_VERSION as u64 => {
            return Err(SchemaError::UnsupportedVersion {
                found: v,
                expected: SCHEMA_VERSION,
            })
        }
        Some(_) => {}
    }
    Ok(serde_json::from_value(value)?)
}

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("coverage report has no entry for changed source file {0}")]
    CoverageFileMissing(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line} is outside the source ({len} lines)")]
pub struct LineOutOfRange {
    pub line: u32,
    pub len: usize,
}

/// A single line in a repository file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineRef {
    pub path: String,
    pub line: u32,
}

impl LineRef {
    pub fn new(path: impl Into<String>, line: u32) -> Self {
        LineRef {
            path: path.into(),
            line,
        }
    }
}

impl std::fmt::Display for LineRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.path, self.line)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCoverage {
    pub path: String,
    pub executable_lines: BTreeSet<u32>,
    pub covered_lines: BTreeSet<u32>,
    #[serde(default)]
    pub missed_branch_lines: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub files: Vec<FileCoverage>,
}

impl Default for CoverageReport {
    fn default() -> Self {
        CoverageReport {
            schema_version: SCHEMA_VERSION,
            files: Vec::new(),
        }
    }
}

impl CoverageReport {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let report: CoverageReport = versioned(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut paths = BTreeSet::new();
        for f in &self.files {
            if !paths.insert(f.path.as_str()) {
                return Err(SchemaError::Invariant(format!(
                    "duplicate coverage entry for {}",
                    f.path
                )));
            }
            if !f.covered_lines.is_subset(&f.executable_lines) {
                return Err(SchemaError::Invariant(format!(
                    "{}: covered lines are not a subset of executable lines",
                    f.path
                )));
            }
            if !f.missed_branch_lines.is_subset(&f.executable_lines) {
                return Err(SchemaError::Invariant(format!(
                    "{}: missed-branch lines are not a subset of executable lines",
                    f.path
                )));
            }
            if f.executable_lines.contains(&0) {
                return Err(SchemaError::Invariant(format!("{}: line 0", f.path)));
            }
        }
        Ok(())
    }

    pub fn file(&self, path: &str) -> Option<&FileCoverage> {
        self.files.iter().find(|f| f.path == path)
    }

    /// All covered lines as [`LineRef`]s.
    pub fn covered(&self) -> BTreeSet<LineRef> {
        self.files
            .iter()
            .flat_map(|f| f.covered_lines.iter().map(|l| LineRef::new(&f.path, *l)))
            .collect()
    }
}

/// Patch coverage of one PR. `covered ⊎ uncovered = executable`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchCoverage {
    pub executable: BTreeSet<LineRef>,
    pub covered: BTreeSet<LineRef>,
    pub uncovered: BTreeSet<LineRef>,
    /// Changed executable lines with a partially missed branch. Annotation
    /// metadata only; does not enter the ratio.
    #[serde(default)]
    pub missed_branches: BTreeSet<LineRef>,
}

impl PatchCoverage {
    /// `|C| / |E|`, or 1.0 when nothing executable changed.
    pub fn ratio(&self) -> f64 {
        if self.executable.is_empty() {
            1.0
        } else {
            self.covered.len() as f64 / self.executable.len() as f64
        }
    }

    pub fn is_fully_covered(&self) -> bool {
        self.uncovered.is_empty()
    }

    pub fn uncovered_in(&self, path: &str) -> BTreeSet<u32> {
        lines_in(&self.uncovered, path)
    }

    pub fn branches_in(&self, path: &str) -> BTreeSet<u32> {
        lines_in(&self.missed_branches, path)
    }

    /// Ratio after additionally treating `extra` as covered.
    pub fn ratio_with(&self, extra: &BTreeSet<LineRef>) -> f64 {
        if self.executable.is_empty() {
            return 1.0;
        }
        let newly = self.uncovered.intersection(extra).count();
        (self.covered.len() + newly) as f64 / self.executable.len() as f64
    }
}

pub fn lines_in(set: &BTreeSet<LineRef>, path: &str) -> BTreeSet<u32> {
    set.iter()
        .filter(|l| l.path == path)
        .map(|l| l.line)
        .collect()
}

/// `E` = touched ∩ executable over SOURCE files; `C` = `E` ∩ covered; `U` = `E` \ `C`.
pub fn compute_patch_coverage(
    diff: &DiffModel,
    cov: &CoverageReport,
) -> Result<PatchCoverage, CoverageError> {
    let mut pc = PatchCoverage::default();
    for file in diff.source_files() {
        if file.touched_lines.is_empty() {
            continue;
        }
        let Some(fc) = cov.file(&file.path) else {
            return Err(CoverageError::CoverageFileMissing(file.path.clone()));
        };
        for &line in file.touched_lines.intersection(&fc.executable_lines) {
            let r = LineRef::new(&file.path, line);
            if fc.covered_lines.contains(&line) {
                pc.covered.insert(r.clone());
            } else {
                pc.uncovered.insert(r.clone());
            }
            if fc.missed_branch_lines.contains(&line) {
                pc.missed_branches.insert(r.clone());
            }
            pc.executable.insert(r);
        }
    }
    Ok(pc)
}

/// Append `marker` as a trailing comment to each listed line. A line that
/// already ends with its marker is left alone; everything else is
/// byte-identical, including line terminators.
pub fn annotate_lines(
    source: &str,
    markers: &BTreeMap<u32, &str>,
) -> Result<String, LineOutOfRange> {
    let lines: Vec<&str> = source.split_inclusive('\n').collect();
    if let Some((&line, _)) = markers
        .iter()
        .find(|(&l, _)| l == 0 || l as usize > lines.len())
    {
        return Err(LineOutOfRange {
            line,
            len: lines.len(),
        });
    }
    let mut out = String::with_capacity(source.len() + markers.len() * 16);
    for (idx, raw) in lines.iter().enumerate() {
        let Some(marker) = markers.get(&(idx as u32 + 1)) else {
            out.push_str(raw);
            continue;
        };
        let (body, eol) = split_eol(raw);
        out.push_str(body);
        if !body.ends_with(marker) {
            out.push(' ');
            out.push_str(marker);
        }
        out.push_str(eol);
    }
    Ok(out)
}

fn split_eol(line: &str) -> (&str, &str) {
    if let Some(body) = line.strip_suffix("\r\n") {
        (body, "\r\n")
    } else if let Some(body) = line.strip_suffix('\n') {
        (body, "\n")
    } else {
        (line, "")
    }
}

/// Mark uncovered lines, and branch-missed lines that are not uncovered.
pub fn annotate_uncovered(
    source: &str,
    uncovered: &BTreeSet<u32>,
    missed_branches: &BTreeSet<u32>,
) -> Result<String, LineOutOfRange> {
    let mut markers: BTreeMap<u32, &str> = missed_branches
        .iter()
        .map(|&l| (l, BRANCH_MARKER))
        .collect();
    markers.extend(uncovered.iter().map(|&l| (l, UNCOVERED_MARKER)));
    annotate_lines(source, &markers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefKind {
    Function,
    Method,
    Class,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    /// Dotted qualified name, matching the names used in call traces.
    pub name: String,
    pub kind: DefKind,
    pub start: u32,
    pub end: u32,
}

impl Definition {
    pub fn contains_line(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }

    fn contains(&self, other: &Definition) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    fn disjoint(&self, other: &Definition) -> bool {
        self.end < other.start || other.end < self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStructure {
    pub path: String,
    pub defs: Vec<Definition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureIndex {
    pub schema_version: u32,
    pub files: Vec<FileStructure>,
}

impl StructureIndex {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let idx: StructureIndex = versioned(text)?;
        idx.validate()?;
        Ok(idx)
    }

    /// Spans must form a laminar family (nested or disjoint) and every
    /// method must sit inside a class.
    pub fn validate(&self) -> Result<(), SchemaError> {
        for file in &self.files {
            for d in &file.defs {
                if d.start == 0 || d.start > d.end {
                    return Err(SchemaError::Invariant(format!(
                        "{}: {} has invalid span {}-{}",
                        file.path, d.name, d.start, d.end
                    )));
                }
            }
            for (i, a) in file.defs.iter().enumerate() {
                for b in &file.defs[i + 1..] {
                    if !(a.disjoint(b) || a.contains(b) || b.contains(a)) {
                        return Err(SchemaError::Invariant(format!(
                            "{}: spans of {} and {} partially overlap",
                            file.path, a.name, b.name
                        )));
                    }
                }
                if a.kind == DefKind::Method
                    && !file
                        .defs
                        .iter()
                        .any(|c| c.kind == DefKind::Class && c.contains(a) && c != a)
                {
                    return Err(SchemaError::Invariant(format!(
                        "{}: method {} is not inside a class",
                        file.path, a.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn file(&self, path: &str) -> Option<&FileStructure> {
        self.files.iter().find(|f| f.path == path)
    }
}

/// A function or method holding at least one uncovered changed line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocalFunction {
    pub qualified_name: String,
    pub file: String,
    pub span: (u32, u32),
    pub uncovered_lines: BTreeSet<u32>,
    pub annotated_source: String,
}

/// Innermost function or method whose span contains `line`.
pub fn innermost_callable(defs: &[Definition], line: u32) -> Option<&Definition> {
    defs.iter()
        .filter(|d| d.kind != DefKind::Class && d.contains_line(line))
        .min_by_key(|d| (d.end - d.start, std::cmp::Reverse(d.start)))
}

/// Group uncovered lines by their innermost enclosing function or method.
/// Top-level lines and files without structure or source are skipped.
pub fn segment_focal_functions(
    pc: &PatchCoverage,
    idx: &StructureIndex,
    sources: &BTreeMap<String, String>,
) -> Vec<FocalFunction> {
    let files: BTreeSet<&str> = pc.uncovered.iter().map(|l| l.path.as_str()).collect();
    let mut out = Vec::new();
    for path in files {
        let Some(structure) = idx.file(path) else {
            log::warn!("no structure index entry for {path}; its uncovered lines are skipped");
            continue;
        };
        let Some(source) = sources.get(path) else {
            log::warn!("source of {path} unavailable; its uncovered lines are skipped");
            continue;
        };
        let mut groups: BTreeMap<(u32, u32, &str), BTreeSet<u32>> = BTreeMap::new();
        for line in pc.uncovered_in(path) {
            if let Some(def) = innermost_callable(&structure.defs, line) {
                groups
                    .entry((def.start, def.end, def.name.as_str()))
                    .or_default()
                    .insert(line);
            }
        }
        let annotated = match annotate_uncovered(source, &pc.uncovered_in(path), &pc.branches_in(path)) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("{path}: {e}; coverage does not match source, skipping");
                continue;
            }
        };
        let annotated_lines: Vec<&str> = annotated.split_inclusive('\n').collect();
        for ((start, end, name), uncovered_lines) in groups {
            let hi = (end as usize).min(annotated_lines.len());
            let lo = (start as usize - 1).min(hi);
            out.push(FocalFunction {
                qualified_name: name.to_string(),
                file: path.to_string(),
                span: (start, end),
                uncovered_lines,
                annotated_source: annotated_lines[lo..hi].concat(),
            });
        }
    }
    out
}

/// Source lines `start..=end` (1-based) of `text`.
pub fn span_text(text: &str, start: u32, end: u32) -> String {
    text.split_inclusive('\n')
        .skip(start.saturating_sub(1) as usize)
        .take((end + 1).saturating_sub(start) as usize)
        .collect()
}

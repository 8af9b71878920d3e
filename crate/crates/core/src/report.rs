//! Clustering accepted tests by the coverage they add, picking one test per
//! cluster and writing the reviewer-facing markdown report.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::DiffModel;
use crate::coverage::{
    annotate_lines, lines_in, LineOutOfRange, LineRef, PatchCoverage, COVERED_BY_TEST_MARKER,
    UNCOVERED_MARKER,
};
use crate::generation::CandidateTest;
use crate::integration::{IntegrationPlan, MergeResult};
use crate::llm::{LlmGateway, Message, Role};
use crate::pr_context::PrContextSummary;
use crate::pysource::{ItemKind, PyModule};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCluster {
    pub key: BTreeSet<LineRef>,
    pub members: Vec<CandidateTest>,
}

/// Group items by exact key, drop groups whose key is a strict subset of
/// another group's key, and order by key size (largest first) then key.
/// Members keep their input order.
pub fn cluster_by_key<T, K: Ord + Clone>(
    items: impl IntoIterator<Item = T>,
    key: impl Fn(&T) -> BTreeSet<K>,
) -> Vec<(BTreeSet<K>, Vec<T>)> {
    let mut groups: BTreeMap<BTreeSet<K>, Vec<T>> = BTreeMap::new();
    for item in items {
        groups.entry(key(&item)).or_default().push(item);
    }
    let keys: Vec<BTreeSet<K>> = groups.keys().cloned().collect();
    let mut out: Vec<(BTreeSet<K>, Vec<T>)> = groups
        .into_iter()
        .filter(|(k, _)| !keys.iter().any(|other| k.len() < other.len() && k.is_subset(other)))
        .collect();
    out.sort_by(|a, b| (Reverse(a.0.len()), &a.0).cmp(&(Reverse(b.0.len()), &b.0)));
    out
}

/// Cluster accepted candidates by their added lines. Candidates that were
/// not accepted or add nothing are ignored.
pub fn cluster_by_coverage(accepted: &[CandidateTest]) -> Vec<CoverageCluster> {
    let usable = accepted.iter().filter(|c| {
        let ok = c.is_accepted() && !c.added_lines().is_empty();
        if !ok {
            log::debug!("{} is not an accepted test with added coverage; not clustered", c.id);
        }
        ok
    });
    cluster_by_key(usable.cloned(), CandidateTest::added_lines)
        .into_iter()
        .map(|(key, members)| CoverageCluster { key, members })
        .collect()
}

const SELECT_SYSTEM: &str = "You review generated regression tests for a pull request. Several \
tests below add exactly the same coverage. Pick the single best one using three criteria:\n\
1) worthiness: how likely the test is to catch a regression in the changed code;\n\
2) integration: how naturally the test fits into the existing test file and its conventions;\n\
3) relevance: how closely the test targets the behavior the pull request changes.\n\
Reply with the id of the chosen test, for example `candidate-3`.";

const SELECT_EXAMPLES: &str = include_str!("../assets/select_examples.md");

fn select_prompt(cluster: &CoverageCluster, pr_ctx: &PrContextSummary, diff: &DiffModel, pc: &PatchCoverage) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Pull request context:\n{}\n", pr_ctx.summary.trim());
    s.push_str("Changed files:\n");
    for f in &diff.files {
        let _ = writeln!(s, "- {} ({:?}, {} touched lines)", f.path, f.kind, f.touched_lines.len());
    }
    let _ = writeln!(
        s,
        "\nPatch coverage before these tests: {}/{} ({:.1}%).",
        pc.covered.len(),
        pc.executable.len(),
        pc.ratio() * 100.0
    );
    let _ = writeln!(s, "Each test below newly covers: {}\n", format_lines(&cluster.key));
    let _ = writeln!(s, "Examples of the criteria:\n{}", SELECT_EXAMPLES.trim());
    for m in &cluster.members {
        let _ = write!(s, "\n### {}\n\n```python\n{}", m.id, m.source);
        if !m.source.ends_with('\n') {
            s.push('\n');
        }
        s.push_str("```\n");
    }
    s
}

/// Resolve a selection reply to a member index: the first member id named,
/// else a 1-based position written as `#N` or a bare number.
pub fn parse_selection(reply: &str, ids: &[&str]) -> Option<usize> {
    static ID_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"candidate-\d+").unwrap());
    static NUM_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#?\b(\d+)\b").unwrap());
    for m in ID_RE.find_iter(reply) {
        if let Some(i) = ids.iter().position(|id| *id == m.as_str()) {
            return Some(i);
        }
    }
    NUM_RE
        .captures_iter(reply)
        .filter_map(|c| c[1].parse::<usize>().ok())
        .find(|&n| (1..=ids.len()).contains(&n))
        .map(|n| n - 1)
}

/// Pick the best member of a cluster. A singleton is returned without a
/// model call; an unusable reply or a failed call selects the first member.
pub fn select_best<'c>(
    llm: &LlmGateway,
    cluster: &'c CoverageCluster,
    pr_ctx: &PrContextSummary,
    diff: &DiffModel,
    pc: &PatchCoverage,
) -> &'c CandidateTest {
    assert!(!cluster.members.is_empty(), "clusters are never empty");
    if cluster.members.len() == 1 {
        return &cluster.members[0];
    }
    let ids: Vec<&str> = cluster.members.iter().map(|m| m.id.as_str()).collect();
    let messages = vec![
        Message::system(SELECT_SYSTEM),
        Message::user(select_prompt(cluster, pr_ctx, diff, pc)),
    ];
    match llm.complete(Role::SelectBest, messages) {
        Ok(reply) => match parse_selection(&reply.text, &ids) {
            Some(i) => &cluster.members[i],
            None => {
                log::warn!("could not resolve a test from the selection reply; using {}", ids[0]);
                &cluster.members[0]
            }
        },
        Err(e) => {
            log::warn!("test selection failed ({e}); using {}", ids[0]);
            &cluster.members[0]
        }
    }
}

fn format_lines(lines: &BTreeSet<LineRef>) -> String {
    let mut by_file: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for l in lines {
        by_file.entry(&l.path).or_default().push(l.line);
    }
    by_file
        .iter()
        .map(|(p, ls)| {
            let nums: Vec<String> = ls.iter().map(u32::to_string).collect();
            format!("{p}: {}", nums.join(", "))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// One selected, merged test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub candidate: CandidateTest,
    pub cluster_size: usize,
    pub plan: IntegrationPlan,
    pub merge: MergeResult,
    /// Unified diff of the test file for this test alone.
    pub patch: String,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot render coverage for {path}: {source}")]
    Annotation {
        path: String,
        source: LineOutOfRange,
    },
    #[error("source of {0} is needed for the coverage view but was not provided")]
    MissingSource(String),
    #[error("I/O error writing the report: {0}")]
    Io(#[from] std::io::Error),
}

/// Union of the selected tests' added lines.
pub fn added_by(entries: &[ReportEntry]) -> BTreeSet<LineRef> {
    entries.iter().flat_map(|e| e.candidate.added_lines()).collect()
}

fn pc_line(covered: usize, executable: usize, ratio: f64) -> String {
    format!("{:.1}% ({covered}/{executable})", ratio * 100.0)
}

/// Numbered excerpt of `source` around the changed executable lines, with
/// `key` lines marked as covered by the test and the rest of the still
/// uncovered lines marked uncovered.
pub fn coverage_view(
    path: &str,
    source: &str,
    pc: &PatchCoverage,
    key: &BTreeSet<LineRef>,
) -> Result<String, LineOutOfRange> {
    let mine = lines_in(key, path);
    let mut markers: BTreeMap<u32, &str> = lines_in(&pc.uncovered, path)
        .into_iter()
        .filter(|l| !mine.contains(l))
        .map(|l| (l, UNCOVERED_MARKER))
        .collect();
    markers.extend(mine.iter().map(|&l| (l, COVERED_BY_TEST_MARKER)));
    let annotated = annotate_lines(source, &markers)?;
    let changed = lines_in(&pc.executable, path);
    let lines: Vec<&str> = annotated.lines().collect();
    let (Some(&lo), Some(&hi)) = (changed.first(), changed.last()) else {
        return Ok(String::new());
    };
    let start = lo.saturating_sub(2).max(1);
    let end = (hi + 2).min(lines.len() as u32);
    let mut out = String::new();
    for n in start..=end {
        let _ = writeln!(out, "{n:>5} | {}", lines[n as usize - 1]);
    }
    Ok(out)
}

fn test_names(source: &str) -> Vec<String> {
    let Ok(m) = PyModule::parse(source, "candidate") else {
        return Vec::new();
    };
    let mut names = Vec::new();
    for item in &m.items {
        match &item.kind {
            ItemKind::Function(f) if f.is_test() => names.push(f.name.clone()),
            ItemKind::Class(c) => {
                for mem in &c.members {
                    if let ItemKind::Function(f) = &mem.kind {
                        if f.is_test() {
                            names.push(format!("{}.{}", c.name, f.name));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    names
}

fn fenced(out: &mut String, lang: &str, body: &str) {
    let _ = write!(out, "```{lang}\n{body}");
    if !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n\n");
}

/// Render the report. `sources` maps changed source paths to their
/// post-change text.
pub fn render_report(
    pr_id: &str,
    pc: &PatchCoverage,
    entries: &[ReportEntry],
    sources: &BTreeMap<String, String>,
) -> Result<String, ReportError> {
    let added = added_by(entries);
    let newly = pc.uncovered.intersection(&added).count();
    let before = pc_line(pc.covered.len(), pc.executable.len(), pc.ratio());
    let after = pc_line(pc.covered.len() + newly, pc.executable.len(), pc.ratio_with(&added));

    let mut out = String::new();
    let _ = writeln!(out, "# Generated tests for PR {pr_id}\n");
    let _ = writeln!(out, "Patch coverage: {before} before, {after} after.\n");
    if entries.is_empty() {
        out.push_str("## Summary\n\n");
        out.push_str(
            "No contribution: none of the generated tests passed while covering a previously \
             uncovered changed line, so the test suite is unchanged.\n\n",
        );
        out.push_str("## Coverage\n\n");
        let _ = writeln!(out, "{} of {} changed executable lines remain uncovered.", pc.uncovered.len(), pc.executable.len());
        return Ok(out);
    }

    for (i, e) in entries.iter().enumerate() {
        let c = &e.candidate;
        let key = c.added_lines();
        let names = test_names(&c.source);
        let name = names.first().cloned().unwrap_or_else(|| c.id.clone());
        let _ = writeln!(out, "# Test {}: `{name}`\n", i + 1);

        out.push_str("## Summary\n\n");
        let _ = writeln!(
            out,
            "`{name}` ({}) exercises `{}`. It passed after {} feedback round(s) and newly covers {} changed line(s): {}.",
            c.id,
            c.focal,
            c.round,
            key.len(),
            format_lines(&key)
        );
        if e.cluster_size > 1 {
            let _ = writeln!(out, "It was chosen from {} tests that add the same coverage.", e.cluster_size);
        }
        let target = match &e.plan.class_name {
            Some(cls) => format!("{}::{cls}", e.plan.file),
            None => e.plan.file.clone(),
        };
        let how = match e.plan.mode {
            crate::integration::IntegrationMode::NewTest => format!("added as a new test in `{target}`"),
            crate::integration::IntegrationMode::ExtendExisting => {
                format!("appended to `{target}::{}`", e.plan.method_name)
            }
        };
        let _ = writeln!(out, "The test was {how}.");
        for notice in &e.merge.notices {
            let _ = writeln!(out, "\nNote: {notice}");
        }
        if !c.uncovered_summary.trim().is_empty() {
            out.push_str("\nWhat the targeted code does:\n\n");
            for line in c.uncovered_summary.trim().lines() {
                let _ = writeln!(out, "> {line}");
            }
        }
        out.push('\n');

        out.push_str("## Coverage\n\n");
        let files: BTreeSet<&str> = key.iter().map(|l| l.path.as_str()).collect();
        for path in files {
            let src = sources.get(path).ok_or_else(|| ReportError::MissingSource(path.to_string()))?;
            let view = coverage_view(path, src, pc, &key).map_err(|source| ReportError::Annotation {
                path: path.to_string(),
                source,
            })?;
            let _ = writeln!(out, "`{path}`:\n");
            fenced(&mut out, "python", &view);
        }

        out.push_str("## Runtime Log\n\n");
        let mut log = String::new();
        for r in &c.history {
            let _ = writeln!(
                log,
                "round {}: {}, {} line(s) added -> {:?}",
                r.round,
                if r.passed { "passed" } else { "failed" },
                r.added,
                r.state
            );
            if !r.passed && !r.stderr_excerpt.is_empty() {
                for l in r.stderr_excerpt.lines() {
                    let _ = writeln!(log, "    {l}");
                }
            }
        }
        if let Some(o) = &c.outcome {
            let _ = writeln!(log, "final run: {:.2}s", o.duration_secs);
        }
        fenced(&mut out, "text", &log);

        out.push_str("## Test Patch\n\n");
        fenced(&mut out, "diff", &e.patch);

        out.push_str("## Full Test File\n\n");
        let _ = writeln!(out, "`{}`:\n", e.plan.file);
        fenced(&mut out, "python", &e.merge.merged_file);
    }
    Ok(out)
}

/// Render and atomically write `<out_dir>/<pr_id>/report.md`.
pub fn emit_report(
    out_dir: &Path,
    pr_id: &str,
    pc: &PatchCoverage,
    entries: &[ReportEntry],
    sources: &BTreeMap<String, String>,
) -> Result<PathBuf, ReportError> {
    let text = render_report(pr_id, pc, entries, sources)?;
    let path = out_dir.join(pr_id).join("report.md");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use covergap::config::Config;
use covergap::llm::FailClosedTransport;
use covergap::pipeline::{self, AugmentOutcome, Inputs, PipelineError, Session};
use tempfile::TempDir;
use walkdir::WalkDir;

pub const PROJECTS: [&str; 3] = ["geomkit", "textutil", "statkit"];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn copy_dir(from: &Path, to: &Path) {
    for entry in WalkDir::new(from) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(from).unwrap();
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).unwrap();
        } else {
            fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

/// A private copy of a bundled fixture project. Runs lock and write into
/// the workspace, so they never touch the checked-in tree.
pub fn project_copy(name: &str) -> TempDir {
    let tmp = TempDir::new().unwrap();
    copy_dir(&fixtures().join("projects").join(name), tmp.path());
    tmp
}

pub fn inputs(dir: &Path) -> Inputs {
    Inputs {
        diff: dir.join("pr.diff"),
        pr_meta: dir.join("pr.json"),
        coverage: Some(dir.join("coverage.json")),
        structure: dir.join("structure.json"),
        trace: Some(dir.join("trace.json")),
    }
}

pub fn config(dir: &Path, out: &Path) -> Config {
    let mut cfg = Config::load(&dir.join("covergap.toml")).unwrap();
    cfg.paths.out_dir = Some(out.to_path_buf());
    cfg
}

pub fn session(dir: &Path, out: &Path, transport: &FailClosedTransport) -> Session {
    let t = transport.clone();
    Session::new(config(dir, out)).with_transport(move || Box::new(t.clone()))
}

/// Run `augment` on a project copy; the transport refuses and counts any
/// network attempt.
pub fn run_augment(
    dir: &Path,
    out: &Path,
) -> (Result<AugmentOutcome, PipelineError>, usize) {
    let transport = FailClosedTransport::new();
    let sess = session(dir, out, &transport);
    let res = pipeline::augment(&sess, &inputs(dir));
    (res, transport.attempts())
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            (rel, fs::read(e.path()).unwrap())
        })
        .collect()
}

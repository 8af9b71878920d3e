//! The process backend, driven by a shell adapter, behaves like the
//! table-driven fake for the same project.

mod common;

use std::path::Path;
use std::time::Duration;

use covergap::config::BackendKind;
use covergap::exec::{Collect, ExecBackend, ExecutionResult, FakeBackend, ProcessBackend, Scope, Workspace};
use covergap::llm::FailClosedTransport;
use covergap::pipeline::{self, Inputs, Session};

fn adapter(project: &Path) -> ProcessBackend {
    let script = common::fixtures().join("adapter/geomkit.sh");
    ProcessBackend::new(
        "sh",
        vec![script.display().to_string(), project.display().to_string()],
    )
    .with_timeout(Duration::from_secs(30))
}

fn comparable(r: &ExecutionResult) -> impl PartialEq + std::fmt::Debug {
    (r.passed, r.exit_code, r.stdout.trim().to_string(), r.stderr.trim().to_string(), r.coverage.clone(), r.trace.clone())
}

const CANDIDATES: [&str; 4] = [
    "from geomkit.shapes import Rect\n\n\ndef test_a():\n    assert Rect(0.1, 0.3).area(digits=2) == 0.03\n",
    "from geomkit.shapes import Rect\n\n\ndef test_b():\n    Rect(1, 1).scale(0)\n",
    "from geomkit.shapes import Rect\n\n\ndef test_c():\n    assert Rect(1, 1).area(ndigits=1) == 1\n",
    "from geomkit.shapes import Rect\n\n\ndef test_d():\n    assert Rect(1, 1).area() == 1\n",
];

#[test]
fn suite_and_candidate_runs_agree() {
    let dir = common::project_copy("geomkit");
    let fake = FakeBackend::load(&dir.path().join("backend.json")).unwrap();
    let process = adapter(dir.path());
    let ws = Workspace::acquire(dir.path().join("workspace"), "post").unwrap();

    let collect = Collect { coverage: true, trace: true };
    let a = fake.run_suite(&ws, &Scope::All, collect).unwrap();
    let b = process.run_suite(&ws, &Scope::Files(vec!["tests/test_shapes.py".into()]), collect).unwrap();
    assert_eq!(comparable(&a), comparable(&b));

    for src in CANDIDATES {
        let a = fake.run_candidate(&ws, src).unwrap();
        let b = process.run_candidate(&ws, src).unwrap();
        assert_eq!(comparable(&a), comparable(&b), "{src}");
        // Coverage of the scratch test itself is never reported.
        let cov = b.coverage.unwrap();
        assert!(cov.files.iter().all(|f| f.path == "geomkit/shapes.py"));
    }
    assert!(!ws.scratch_path().exists(), "scratch test left behind");
}

#[test]
fn fake_rejects_candidate_with_syntax_error() {
    let dir = common::project_copy("geomkit");
    let fake = FakeBackend::load(&dir.path().join("backend.json")).unwrap();
    let ws = Workspace::acquire(dir.path().join("workspace"), "post").unwrap();
    let r = fake.run_candidate(&ws, "def test_x(:\n    pass\n").unwrap();
    assert!(!r.passed);
    assert!(r.stderr.contains("SyntaxError"));
}

#[test]
fn adapter_that_hangs_times_out() {
    let dir = common::project_copy("geomkit");
    let script = dir.path().join("hang.sh");
    std::fs::write(&script, "sleep 5\n").unwrap();
    let backend = ProcessBackend::new("sh", vec![script.display().to_string()]).with_timeout(Duration::from_millis(200));
    let ws = Workspace::acquire(dir.path().join("workspace"), "post").unwrap();
    let err = backend.run_candidate(&ws, CANDIDATES[3]).unwrap_err();
    assert!(err.to_string().contains("timeout"), "{err}");
    assert!(!ws.scratch_path().exists());
}

#[test]
fn augment_through_the_adapter_matches_the_fake() {
    let run = |kind: BackendKind| {
        let dir = common::project_copy("geomkit");
        let out = dir.path().join("out");
        let mut cfg = common::config(dir.path(), &out);
        cfg.backend.kind = kind;
        if kind == BackendKind::Process {
            let script = common::fixtures().join("adapter/geomkit.sh");
            cfg.backend.command = vec!["sh".into(), script.display().to_string(), dir.path().display().to_string()];
        }
        let t = FailClosedTransport::new();
        let sess = Session::new(cfg).with_transport(move || Box::new(t.clone()));
        // Coverage and trace come from the backend's suite run.
        let inputs = Inputs {
            diff: dir.path().join("pr.diff"),
            pr_meta: dir.path().join("pr.json"),
            coverage: None,
            structure: dir.path().join("structure.json"),
            trace: None,
        };
        let outcome = pipeline::augment(&sess, &inputs).unwrap();
        let tree = common::read_tree(&out.join(&outcome.pr_id));
        (outcome.pc_after, dir, tree)
    };
    let (pc_fake, _d1, fake) = run(BackendKind::Fake);
    let (pc_proc, _d2, proc_) = run(BackendKind::Process);
    assert_eq!(pc_fake, 1.0);
    assert_eq!(pc_fake, pc_proc);
    for name in ["coverage.json", "context.json", "merged/tests/test_shapes.py"] {
        assert!(fake[name] == proc_[name], "{name} differs");
    }
    // Run times differ; everything else in the report is the same.
    let strip = |b: &Vec<u8>| {
        String::from_utf8_lossy(b)
            .lines()
            .filter(|l| !l.starts_with("final run:"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&fake["report.md"]), strip(&proc_["report.md"]));
}

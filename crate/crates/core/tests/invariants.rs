use std::collections::BTreeSet;

use proptest::collection::{btree_set, vec};
use proptest::prelude::*;

use covergap::change::{parse_unified_diff, ChangeKind, ChangedFile, DiffModel, FileKind};
use covergap::config::Config;
use covergap::coverage::{annotate_uncovered, compute_patch_coverage, CoverageReport, FileCoverage};
use covergap::generation::{next_state, FeedbackState};
use covergap::integration::{merge_test, IntegrationPlan};
use covergap::pr_context::parse_link_choice;
use covergap::pysource::{check_parses, PyModule};
use covergap::report::{cluster_by_key, parse_selection};
use covergap::test_context::{jaccard, ContextOrigin, TestContext};

fn lines() -> impl Strategy<Value = BTreeSet<u32>> {
    btree_set(1u32..80, 0..40)
}

proptest! {
    #[test]
    fn diff_parser_never_panics(text in "(diff --git a/x b/x\n|--- a/x\n|\\+\\+\\+ b/x\n|@@ -1,2 \\+1,3 @@\n| ctx\n|\\+add\n|-del\n|[ -~]{0,12}\n){0,30}") {
        let _ = parse_unified_diff(&text);
    }

    #[test]
    fn patch_coverage_partitions_changed_executable_lines(
        touched in lines(), executable in lines(), covered_pick in lines(),
    ) {
        let covered: BTreeSet<u32> = covered_pick.intersection(&executable).copied().collect();
        let diff = DiffModel {
            files: vec![ChangedFile {
                path: "pkg/m.py".into(),
                kind: FileKind::Source,
                change: ChangeKind::Modified,
                touched_lines: touched.clone(),
            }],
            total_code_files: 1,
        };
        let cov = CoverageReport {
            files: vec![FileCoverage {
                path: "pkg/m.py".into(),
                executable_lines: executable.clone(),
                covered_lines: covered.clone(),
                missed_branch_lines: BTreeSet::new(),
            }],
            ..Default::default()
        };
        let pc = compute_patch_coverage(&diff, &cov).unwrap();
        prop_assert!(pc.covered.is_disjoint(&pc.uncovered));
        prop_assert_eq!(pc.covered.len() + pc.uncovered.len(), pc.executable.len());
        prop_assert_eq!(pc.executable.len(), touched.intersection(&executable).count());
        let r = pc.ratio();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(pc.is_fully_covered(), r == 1.0);
        prop_assert!(pc.ratio_with(&pc.uncovered) == 1.0);
        prop_assert!(pc.ratio_with(&BTreeSet::new()) == r);
    }

    #[test]
    fn annotation_is_idempotent_and_keeps_line_count(
        body in vec("[a-z #=():\t]{0,20}", 1..30), picks in btree_set(1u32..30, 0..10), branch in btree_set(1u32..30, 0..10),
    ) {
        let src: String = body.iter().map(|l| format!("{l}\n")).collect();
        let n = body.len() as u32;
        let unc: BTreeSet<u32> = picks.into_iter().filter(|&l| l <= n).collect();
        let br: BTreeSet<u32> = branch.into_iter().filter(|&l| l <= n).collect();
        let once = annotate_uncovered(&src, &unc, &br).unwrap();
        prop_assert_eq!(once.lines().count(), src.lines().count());
        prop_assert_eq!(annotate_uncovered(&once, &unc, &br).unwrap(), once);
    }

    #[test]
    fn jaccard_is_a_symmetric_similarity(a in "[a-z]{1,4}(/[a-z_]{1,6}){0,3}\\.py", b in "[a-z]{1,4}(/[a-z_]{1,6}){0,3}\\.py") {
        let (ab, ba) = (jaccard(&a, &b), jaccard(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.num <= ab.den);
        let same = jaccard(&a, &a);
        prop_assert_eq!(same.num, same.den);
    }

    #[test]
    fn feedback_never_runs_past_the_round_cap(passed: bool, added: bool, round in 0u32..10, max in 0u32..6) {
        let s = next_state(passed, added, round, max);
        prop_assert_eq!(s == FeedbackState::Accept, passed && added);
        if round >= max && !(passed && added) {
            prop_assert_eq!(s, FeedbackState::Exhausted);
        }
        if round < max {
            prop_assert_ne!(s, FeedbackState::Exhausted);
        }
    }

    #[test]
    fn clusters_are_maximal_and_ordered(keys in vec(btree_set(0u8..5, 0..4), 0..12)) {
        let items: Vec<(usize, BTreeSet<u8>)> = keys.into_iter().enumerate().collect();
        let clusters = cluster_by_key(items.clone(), |t| t.1.clone());
        for (i, (k, members)) in clusters.iter().enumerate() {
            prop_assert!(members.iter().all(|m| &m.1 == k));
            prop_assert_eq!(members.len(), items.iter().filter(|t| &t.1 == k).count());
            for (o, _) in &clusters {
                prop_assert!(!(k.len() < o.len() && k.is_subset(o)));
            }
            if let Some((next, _)) = clusters.get(i + 1) {
                prop_assert!((k.len(), std::cmp::Reverse(k)) > (next.len(), std::cmp::Reverse(next)));
            }
        }
        // Every item whose key is not dominated lands in some cluster.
        for (_, k) in &items {
            let dominated = items.iter().any(|(_, o)| k.len() < o.len() && k.is_subset(o));
            prop_assert_eq!(clusters.iter().any(|(c, _)| c == k), !dominated);
        }
    }

    #[test]
    fn reply_parsers_stay_in_range(reply in "[ -~\n]{0,60}", len in 0usize..6) {
        if let Some(i) = parse_link_choice(&reply, len) {
            prop_assert!(i < len);
        }
        let ids: Vec<String> = (1..=len).map(|i| format!("candidate-{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        if let Some(i) = parse_selection(&reply, &refs) {
            prop_assert!(i < len);
        }
    }

    #[test]
    fn merging_generated_tests_is_idempotent(
        existing_n in 1usize..5,
        imports in btree_set(0usize..4, 0..4),
        body in vec(0u8..3, 1..4),
        into_class: bool,
    ) {
        const IMPORTS: [&str; 4] = ["import os", "import pytest", "from pkg import f", "from pkg import g as h"];
        let mut existing = String::from("import pytest\n\n");
        if into_class {
            existing.push_str("\nclass TestE:\n");
            for i in 0..existing_n {
                existing.push_str(&format!("    def test_e{i}(self):\n        assert {i} == {i}\n\n"));
            }
        } else {
            for i in 0..existing_n {
                existing.push_str(&format!("\ndef test_e{i}():\n    assert {i} == {i}\n\n"));
            }
        }
        let mut cand: String = imports.iter().map(|&i| format!("{}\n", IMPORTS[i])).collect();
        cand.push_str("\n\ndef test_new():\n");
        for b in &body {
            cand.push_str(match b {
                0 => "    x = [1, 2]\n",
                1 => "    assert len(\"ab\") == 2\n",
                _ => "    if True:\n        pass\n",
            });
        }
        let ctx = TestContext {
            file: "tests/test_e.py".into(),
            class_name: into_class.then(|| "TestE".to_string()),
            method_name: "test_e0".into(),
            scaffold: String::new(),
            origin: ContextOrigin::StaticDynamic,
        };
        for plan in [IntegrationPlan::new_test(&ctx), IntegrationPlan::extend(&ctx)] {
            let once = merge_test(&plan, &cand, &existing).unwrap().merged_file;
            prop_assert!(check_parses(&once, "merged").is_ok());
            let m = PyModule::parse(&once, "merged").unwrap();
            for i in 0..existing_n {
                let name = format!("test_e{i}");
                let found = if into_class { m.class("TestE").and_then(|(_, c)| c.function(&name)).is_some() } else { m.function(&name).is_some() };
                prop_assert!(found, "{} lost", name);
            }
            let twice = merge_test(&plan, &cand, &once).unwrap().merged_file;
            prop_assert_eq!(twice, once);
        }
    }

    #[test]
    fn environment_overrides_reach_the_config(n in 1usize..1000, t in 0u32..=20) {
        let mut cfg = Config::default();
        let temp = format!("{}", t as f64 / 10.0);
        cfg.apply_env([
            ("COVERGAP_GENERATION_TESTS_PER_PR", n.to_string()),
            ("COVERGAP_LLM_TEMPERATURE", temp),
            ("UNRELATED", "x".to_string()),
        ]).unwrap();
        prop_assert_eq!(cfg.generation.tests_per_pr, n);
        prop_assert!((cfg.llm.temperature - t as f64 / 10.0).abs() < 1e-9);
        prop_assert!(cfg.validate().is_ok());
    }
}

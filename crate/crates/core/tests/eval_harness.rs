use std::path::{Path, PathBuf};

use camp::eval::{generate_suite, load_manifest, pass_at_k, run_suite, verify, EvalError, EvalOptions, Level, SuiteSpec, Verifier};
use camp::llm::{GenerationRequest, GenerationResponse, Generator, LlmError, MockBackend};
use camp::params::LearnedParams;
use camp::pipeline::ModelConfig;
use serde::Deserialize;

/// Fraction of k-subsets of n samples (the first c correct) holding a correct one.
fn brute_pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    let (mut hit, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        all += 1;
        if mask & ((1u32 << c) - 1) != 0 {
            hit += 1;
        }
    }
    hit as f64 / all as f64
}

#[test]
fn pass_at_k_matches_subset_enumeration() {
    for n in 1..=12 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).unwrap();
                let want = brute_pass_at_k(n, c, k);
                assert!((got - want).abs() < 1e-12, "n={n} c={c} k={k}: {got} vs {want}");
            }
        }
    }
    assert!((pass_at_k(5, 2, 2).unwrap() - 0.7).abs() < 1e-12);
    assert!(matches!(pass_at_k(5, 1, 0), Err(EvalError::BadK { .. })));
    assert!(matches!(pass_at_k(5, 1, 6), Err(EvalError::BadK { .. })));
    assert!(matches!(pass_at_k(5, 6, 1), Err(EvalError::BadCount { .. })));
}

#[test]
fn pass_at_k_is_exact_at_scale() {
    // C(200-3, 10)/C(200, 10) = 190·189·188 / (200·199·198)
    let want = 1.0 - (190.0 * 189.0 * 188.0) / (200.0 * 199.0 * 198.0);
    assert!((pass_at_k(200, 3, 10).unwrap() - want).abs() < 1e-12);
}

fn suite(dir: &Path, tasks: usize) -> camp::eval::GeneratedSuite {
    generate_suite(
        dir,
        &SuiteSpec {
            tasks_per_level: tasks,
            seed: 0,
            base_rate: 0.05,
        },
    )
    .unwrap()
}

fn params() -> LearnedParams {
    LearnedParams::initial(EvalOptions::default().index.d_emb, 1.0)
}

#[test]
fn report_is_monotone_in_k() {
    let dir = tempfile::tempdir().unwrap();
    let s = suite(dir.path(), 4);
    let backend = MockBackend::from_file(&s.rules).unwrap();
    let opts = EvalOptions {
        ks: (1..=10).collect(),
        ..EvalOptions::default()
    };
    let report = run_suite(&ModelConfig::ALL, &s.cases, &backend, &params(), &opts).unwrap();
    assert!(report.skipped.is_empty());
    for model in ModelConfig::ALL {
        for level in Level::ALL {
            let vals: Vec<f64> = (1..=10).map(|k| report.pass_at(model, level, k).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1] + 1e-15), "{model} {level:?}: {vals:?}");
            assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn single_project_task_separates_camp_from_cloud_only() {
    let dir = tempfile::tempdir().unwrap();
    let s = suite(dir.path(), 1);
    let task: Vec<_> = s.cases.iter().filter(|c| c.level == Level::ProjectRunnable).cloned().collect();
    let backend = MockBackend::from_file(&s.rules).unwrap();
    let opts = EvalOptions {
        n: 400,
        ks: vec![1],
        ..EvalOptions::default()
    };
    let report = run_suite(&[ModelConfig::Camp, ModelConfig::CloudOnly], &task, &backend, &params(), &opts).unwrap();
    assert_eq!(report.pass_at(ModelConfig::Camp, Level::ProjectRunnable, 1), Some(1.0));
    let cloud = report.pass_at(ModelConfig::CloudOnly, Level::ProjectRunnable, 1).unwrap();
    assert!((cloud - 0.05).abs() < 0.04, "cloud-only pass@1 {cloud}");
}

#[test]
fn identical_runs_give_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let s = suite(dir.path(), 3);
    let backend = MockBackend::from_file(&s.rules).unwrap();
    let opts = EvalOptions::default();
    let a = run_suite(&ModelConfig::ALL, &s.cases, &backend, &params(), &opts).unwrap().to_json();
    let single = EvalOptions { workers: 1, ..opts.clone() };
    let b = run_suite(&ModelConfig::ALL, &s.cases, &backend, &params(), &single).unwrap().to_json();
    assert_eq!(a, b);
}

struct Broken;

impl Generator for Broken {
    fn backend_id(&self) -> String {
        "broken".into()
    }

    fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        Err(LlmError::Transport {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

#[test]
fn backend_failures_count_as_incorrect() {
    let dir = tempfile::tempdir().unwrap();
    let s = suite(dir.path(), 1);
    let report = run_suite(&[ModelConfig::Camp], &s.cases, &Broken, &params(), &EvalOptions::default()).unwrap();
    assert_eq!(report.stats.backend_failures, 3);
    assert!(report.tasks.iter().all(|t| t.c == 0 && t.failure.is_some()));
    assert!(report.cells.iter().all(|c| c.pass_at_k == 0.0));
}

#[test]
fn unreadable_fixture_is_skipped_and_bad_manifest_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = suite(dir.path(), 1);
    let mut cases = s.cases.clone();
    cases[0].repo_fixture = dir.path().join("does-not-exist");
    let backend = MockBackend::from_file(&s.rules).unwrap();
    let report = run_suite(&[ModelConfig::CloudOnly], &cases, &backend, &params(), &EvalOptions::default()).unwrap();
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].task_id, cases[0].task_id);
    assert_eq!(report.tasks.len(), 2);

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"task_id\": 3}\n").unwrap();
    assert!(matches!(load_manifest(&bad), Err(EvalError::Manifest { line: 1, .. })));
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    assert!(matches!(load_manifest(&empty), Err(EvalError::EmptyManifest(_))));
}

#[derive(Deserialize)]
struct Mutation {
    name: String,
    sample: String,
    expect: bool,
}

#[derive(Deserialize)]
struct Cases {
    verifier: Verifier,
    reference: String,
    mutations: Vec<Mutation>,
}

fn fixture() -> (PathBuf, Cases) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/running_max");
    let cases: Cases = serde_json::from_str(&std::fs::read_to_string(root.join("cases.json")).unwrap()).unwrap();
    (root.join("repo"), cases)
}

#[test]
fn command_verifier_agrees_with_hand_tabulated_verdicts() {
    let (repo, cases) = fixture();
    assert!(verify(&cases.reference, &cases.verifier, &repo).unwrap());
    assert_eq!(cases.mutations.len(), 20);
    for m in &cases.mutations {
        let got = verify(&m.sample, &cases.verifier, &repo).unwrap();
        assert_eq!(got, m.expect, "mutation {}", m.name);
    }
    // the committed fixture is never modified in place
    assert!(std::fs::read_to_string(repo.join("stats.py")).unwrap().contains("# SOLUTION"));
}

#[test]
fn command_verifier_times_out_as_failure() {
    let (repo, cases) = fixture();
    let Verifier::CommandExec { file, marker, command, .. } = cases.verifier else { panic!("fixture verifier") };
    let short = Verifier::CommandExec {
        file,
        marker,
        command,
        timeout_secs: 1.0,
    };
    let started = std::time::Instant::now();
    assert!(!verify("while True:\n    pass\n", &short, &repo).unwrap());
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn needle_verifier_modes() {
    let plain = Verifier::NeedleMatch {
        needle: "merge_rows(".into(),
        regex: false,
    };
    assert!(verify("x = merge_rows(a)", &plain, Path::new(".")).unwrap());
    assert!(!verify("x = merge_row(a)", &plain, Path::new(".")).unwrap());
    let re = Verifier::NeedleMatch {
        needle: r"merge_\w+\(".into(),
        regex: true,
    };
    assert!(verify("merge_cols(a)", &re, Path::new(".")).unwrap());
    let empty = Verifier::NeedleMatch {
        needle: String::new(),
        regex: false,
    };
    assert!(matches!(verify("x", &empty, Path::new(".")), Err(EvalError::Verifier(_))));
}

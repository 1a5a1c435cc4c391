//! Pass@K benchmark harness.

mod suite;
mod verify;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::EnvironmentState;
use crate::index::{build_index, IndexConfig, IndexSnapshot};
use crate::llm::{GenerationRequest, Generator};
use crate::params::LearnedParams;
use crate::pipeline::{build_prompt, ModelConfig, PipelineOptions, PromptRequest};

pub use suite::{generate_suite, GeneratedSuite, SuiteSpec};
pub use verify::{verify, Verifier};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("k = {k} must be between 1 and n = {n}")]
    BadK { n: usize, k: usize },
    #[error("c = {c} exceeds n = {n}")]
    BadCount { n: usize, c: usize },
    #[error("manifest {path} line {line}: {message}")]
    Manifest { path: String, line: usize, message: String },
    #[error("manifest {0} has no cases")]
    EmptyManifest(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed verifier: {0}")]
    Verifier(String),
    #[error("sandbox setup failed: {0}")]
    Sandbox(String),
    #[error("invalid evaluation settings: {0}")]
    Config(String),
}

/// Unbiased Pass@K estimate `1 − C(n−c, k)/C(n, k)`, evaluated as
/// `1 − Π_{i=n−c+1..n} (1 − k/i)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if k == 0 || k > n {
        return Err(EvalError::BadK { n, k });
    }
    if c > n {
        return Err(EvalError::BadCount { n, c });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let prod: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - prod)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    ClassRunnable,
    FileRunnable,
    ProjectRunnable,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::ClassRunnable, Level::FileRunnable, Level::ProjectRunnable];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::ClassRunnable => "class-runnable",
            Level::FileRunnable => "file-runnable",
            Level::ProjectRunnable => "project-runnable",
        }
    }
}

/// One benchmark task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub task_id: String,
    pub level: Level,
    /// Repository directory; relative paths resolve against the manifest's directory.
    pub repo_fixture: PathBuf,
    pub environment: EnvironmentState,
    pub query: String,
    pub verifier: Verifier,
}

/// Reads a JSONL manifest, one case per non-blank line.
pub fn load_manifest(path: &Path) -> Result<Vec<EvalCase>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut case: EvalCase = serde_json::from_str(line).map_err(|e| EvalError::Manifest {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if case.repo_fixture.is_relative() {
            case.repo_fixture = base.join(&case.repo_fixture);
        }
        let root = &case.environment.repo_root;
        if root.as_os_str().is_empty() {
            case.environment.repo_root = case.repo_fixture.clone();
        } else if root.is_relative() {
            case.environment.repo_root = base.join(root);
        }
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(EvalError::EmptyManifest(path.display().to_string()));
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Samples per task.
    pub n: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub workers: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub pipeline: PipelineOptions,
    pub index: IndexConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n: 10,
            ks: vec![1, 5, 10],
            seed: 0,
            workers: 4,
            temperature: 0.8,
            max_tokens: 256,
            pipeline: PipelineOptions::default(),
            index: IndexConfig::default(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > self.n) {
            return Err(EvalError::Config(format!("every K must be in 1..={} (n)", self.n)));
        }
        if self.workers == 0 {
            return Err(EvalError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub model: ModelConfig,
    pub task_id: String,
    pub level: Level,
    pub n: usize,
    /// Samples the verifier accepted.
    pub c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub model: ModelConfig,
    pub level: Level,
    pub k: usize,
    pub pass_at_k: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub tasks_evaluated: usize,
    pub samples: usize,
    pub backend_failures: usize,
    pub verifier_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub n: usize,
    pub ks: Vec<usize>,
    pub models: Vec<ModelConfig>,
    pub cells: Vec<ReportCell>,
    pub tasks: Vec<TaskOutcome>,
    pub skipped: Vec<SkippedTask>,
    pub stats: RunStats,
}

/// Published reference Pass@1, @5 and @10 per level, in percent.
pub const REFERENCE: [(ModelConfig, [[f64; 3]; 3]); 4] = [
    (ModelConfig::CloudOnly, [[8.73, 12.57, 14.55], [21.03, 29.09, 32.35], [9.37, 12.08, 13.04]]),
    (ModelConfig::BaseRag, [[19.84, 35.06, 40.91], [24.98, 35.94, 39.01], [15.66, 21.89, 24.62]]),
    (ModelConfig::FileContext, [[31.23, 43.41, 47.30], [29.52, 37.80, 42.30], [11.08, 16.87, 17.92]]),
    (ModelConfig::Camp, [[28.96, 41.72, 46.07], [35.30, 43.45, 45.80], [21.91, 25.05, 26.43]]),
];

/// Published Pass@k in percent, for k in {1, 5, 10}.
pub fn reference_value(model: ModelConfig, level: Level, k: usize) -> Option<f64> {
    let col = [1, 5, 10].iter().position(|&x| x == k)?;
    let row = REFERENCE.iter().find(|(m, _)| *m == model)?;
    Some(row.1[level as usize][col])
}

impl EvalReport {
    pub fn cell(&self, model: ModelConfig, level: Level, k: usize) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.model == model && c.level == level && c.k == k)
    }

    pub fn pass_at(&self, model: ModelConfig, level: Level, k: usize) -> Option<f64> {
        self.cell(model, level, k).map(|c| c.pass_at_k)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,level,k,pass_at_k,tasks\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{},{:.6},{}\n", c.model, c.level.as_str(), c.k, c.pass_at_k, c.tasks));
        }
        s
    }

    /// Aligned table with one row per model and one column per (level, K);
    /// reference values follow in parentheses where available.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Model".to_string()];
        for level in Level::ALL {
            for &k in &self.ks {
                header.push(format!("{} P@{k}", level.as_str()));
            }
        }
        let mut rows = vec![header];
        for &m in &self.models {
            let mut row = vec![m.display_name().to_string()];
            for level in Level::ALL {
                for &k in &self.ks {
                    let ours = self.pass_at(m, level, k).map_or("-".to_string(), |p| format!("{:.2}%", p * 100.0));
                    row.push(match reference_value(m, level, k) {
                        Some(r) => format!("{ours} ({r:.2}%)"),
                        None => ours,
                    });
                }
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (ri, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if ri == 0 {
                out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
                out.push('\n');
            }
        }
        out.push_str("(reference values in parentheses)\n");
        out
    }
}

type FixtureSet = BTreeMap<PathBuf, Result<Arc<IndexSnapshot>, String>>;

/// Indexes each distinct fixture once.
fn load_fixtures(cases: &[EvalCase], config: &IndexConfig) -> FixtureSet {
    let mut paths: Vec<PathBuf> = cases.iter().map(|c| c.repo_fixture.clone()).collect();
    paths.sort();
    paths.dedup();
    paths
        .into_par_iter()
        .map(|p| {
            let r = build_index(&p, config).map(Arc::new).map_err(|e| e.to_string());
            (p, r)
        })
        .collect()
}

fn check_shape(case: &EvalCase, snapshot: &IndexSnapshot) -> Result<(), String> {
    if case.level == Level::ProjectRunnable && snapshot.files().count() < 2 {
        return Err("project-runnable fixture must span at least two files".into());
    }
    Ok(())
}

fn run_case(
    model: ModelConfig,
    case: &EvalCase,
    snapshot: &IndexSnapshot,
    backend: &dyn Generator,
    params: &LearnedParams,
    opts: &EvalOptions,
) -> (TaskOutcome, usize) {
    let mut outcome = TaskOutcome {
        model,
        task_id: case.task_id.clone(),
        level: case.level,
        n: opts.n,
        c: 0,
        failure: None,
    };
    let req = PromptRequest {
        environment: &case.environment,
        query: &case.query,
        input_text: None,
        history: Vec::new(),
    };
    let built = match build_prompt(model, snapshot, params, &req, &opts.pipeline) {
        Ok(b) => b,
        Err(e) => {
            outcome.failure = Some(format!("prompt: {e}"));
            return (outcome, 0);
        }
    };
    let request = GenerationRequest {
        id: format!("{}/{}", model, case.task_id),
        payload: built.payload,
        n_samples: opts.n,
        temperature: opts.temperature,
        max_tokens: opts.max_tokens,
        seed: Some(opts.seed),
        task_id: Some(case.task_id.clone()),
    };
    let samples = match backend.generate(&request) {
        Ok(r) if r.samples.len() == opts.n => r.samples,
        Ok(r) => {
            outcome.failure = Some(format!("backend returned {} samples, expected {}", r.samples.len(), opts.n));
            return (outcome, 0);
        }
        Err(e) => {
            outcome.failure = Some(format!("backend: {e}"));
            return (outcome, 0);
        }
    };
    let mut verifier_errors = 0;
    for s in &samples {
        match verify(s, &case.verifier, &case.repo_fixture) {
            Ok(true) => outcome.c += 1,
            Ok(false) => {}
            Err(e) => {
                verifier_errors += 1;
                outcome.failure.get_or_insert_with(|| format!("verifier: {e}"));
            }
        }
    }
    (outcome, verifier_errors)
}

/// Evaluates every model on every case. Backend failures count as incorrect
/// samples; cases whose fixture cannot be indexed are skipped.
pub fn run_suite(
    models: &[ModelConfig],
    cases: &[EvalCase],
    backend: &dyn Generator,
    params: &LearnedParams,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    opts.validate()?;
    if models.is_empty() {
        return Err(EvalError::Config("no models selected".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let fixtures = pool.install(|| load_fixtures(cases, &opts.index));

    let mut skipped = Vec::new();
    let mut runnable = Vec::new();
    for case in cases {
        let checked = fixtures[&case.repo_fixture]
            .as_ref()
            .map_err(|e| e.clone())
            .and_then(|s| check_shape(case, s).map(|_| s.clone()));
        match checked {
            Ok(s) => runnable.push((case, s)),
            Err(reason) => skipped.push(SkippedTask {
                task_id: case.task_id.clone(),
                reason,
            }),
        }
    }

    let mut tasks = Vec::new();
    let mut stats = RunStats::default();
    for &model in models {
        let results: Vec<(TaskOutcome, usize)> = pool.install(|| {
            runnable
                .par_iter()
                .map(|(case, snap)| run_case(model, case, snap, backend, params, opts))
                .collect()
        });
        for (t, verr) in results {
            stats.tasks_evaluated += 1;
            stats.samples += t.n;
            stats.verifier_errors += verr;
            if t.failure.as_deref().is_some_and(|f| f.starts_with("backend")) {
                stats.backend_failures += 1;
            }
            tasks.push(t);
        }
    }

    let mut cells = Vec::new();
    for &model in models {
        for level in Level::ALL {
            let ts: Vec<&TaskOutcome> = tasks.iter().filter(|t| t.model == model && t.level == level).collect();
            if ts.is_empty() {
                continue;
            }
            for &k in &opts.ks {
                let mut sum = 0.0;
                for t in &ts {
                    sum += pass_at_k(t.n, t.c, k)?;
                }
                cells.push(ReportCell {
                    model,
                    level,
                    k,
                    pass_at_k: sum / ts.len() as f64,
                    tasks: ts.len(),
                });
            }
        }
    }
    Ok(EvalReport {
        seed: opts.seed,
        n: opts.n,
        ks: opts.ks.clone(),
        models: models.to_vec(),
        cells,
        tasks,
        skipped,
        stats,
    })
}

/// Single-model evaluation.
pub fn run_config(
    model: ModelConfig,
    cases: &[EvalCase],
    backend: &dyn Generator,
    params: &LearnedParams,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    run_suite(&[model], cases, backend, params, opts)
}

/// `1 - mean Pass@1` of CAMP on `cases` with the prompt arranged by `order`.
/// Used as the loss when learning the component ordering.
pub fn ordering_loss(
    order: &[crate::prompt::ComponentKind],
    cases: &[EvalCase],
    backend: &dyn Generator,
    params: &LearnedParams,
    opts: &EvalOptions,
) -> Result<f64, EvalError> {
    let mut p = params.clone();
    p.ordering = crate::prompt::ComponentOrder::new(order).map_err(|e| EvalError::Config(e.to_string()))?;
    let mut o = opts.clone();
    o.ks = vec![1];
    let report = run_config(ModelConfig::Camp, cases, backend, &p, &o)?;
    if report.tasks.is_empty() {
        return Err(EvalError::Config("no runnable cases".into()));
    }
    let mut sum = 0.0;
    for t in &report.tasks {
        sum += pass_at_k(t.n, t.c, 1)?;
    }
    Ok(1.0 - sum / report.tasks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_at_k_anchors() {
        assert_eq!(pass_at_k(10, 10, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(10, 0, 7).unwrap(), 0.0);
        assert!((pass_at_k(5, 2, 2).unwrap() - 0.7).abs() < 1e-15);
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
    }

    #[test]
    fn reference_lookup() {
        assert_eq!(reference_value(ModelConfig::Camp, Level::ProjectRunnable, 1), Some(21.91));
        assert_eq!(reference_value(ModelConfig::FileContext, Level::ClassRunnable, 10), Some(47.30));
        assert_eq!(reference_value(ModelConfig::CloudOnly, Level::FileRunnable, 3), None);
    }

    #[test]
    fn options_validation() {
        let o = EvalOptions {
            n: 4,
            ..Default::default()
        };
        assert!(o.validate().is_err());
        assert!(EvalOptions::default().validate().is_ok());
    }
}

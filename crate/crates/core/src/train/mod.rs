//! Parameter learning.
//!
//! [`train_retrievers`] fits the heuristic matrix `H` and the context weights
//! `η'` by accelerated proximal gradient on the negative retrieval
//! log-likelihood plus a nuclear-norm penalty on `H`. [`train_ordering`]
//! learns the prompt component order from pairwise swap tests.

mod ordering;
mod planted;
mod prox;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{collect_signals, ContextSource, EnvironmentState, DEFAULT_TAU_C};
use crate::index::{IndexSnapshot, UnitId};
use crate::retrieval::FusionWeights;

pub use ordering::{train_ordering, OrderingError, OrderingOutcome, DEFAULT_EPSILON, DEFAULT_MAX_COMPONENTS};
pub use planted::{planted_problem, PlantedProblem};
pub use prox::{nuclear_norm, project_simplex, svt};

pub const N_SOURCES: usize = ContextSource::ALL.len();

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training data is empty")]
    EmptyBatch,
    #[error("need at least {need} training examples, got {got}")]
    TooFewExamples { need: usize, got: usize },
    #[error("examples reference missing or excluded document units: {}", .0.join(", "))]
    MissingDocs(Vec<String>),
    #[error("example {index} was prepared against snapshot {expected}, index is {actual}")]
    SnapshotMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("example {0} has an empty query (no input, context or user query)")]
    EmptyQuery(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite loss at iteration {iteration}: {dump}")]
    NonFinite { iteration: usize, dump: String },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// One supervised retrieval example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_query: Option<String>,
    pub environment: EnvironmentState,
    /// The unit that should rank first.
    pub positive_doc: UnitId,
    /// Content hash (hex) of the snapshot the example was written against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_ref: Option<String>,
}

/// An example reduced to embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemExample {
    pub input: Option<Vec<f64>>,
    pub user_query: Option<Vec<f64>>,
    /// Features of the context sources present for this example.
    pub signals: Vec<(ContextSource, Vec<f64>)>,
    /// Indices into the problem's documents.
    pub candidates: Vec<usize>,
    /// Position of the positive document inside `candidates`.
    pub positive: usize,
}

/// Retrieval training problem over raw embeddings.
#[derive(Debug, Clone)]
pub struct RetrievalProblem {
    pub d: usize,
    /// One document embedding per row.
    pub docs: DMatrix<f64>,
    pub examples: Vec<ProblemExample>,
    pub fusion: FusionWeights,
    pub tau_c: usize,
}

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grad_h: DMatrix<f64>,
    pub grad_eta: Vec<f64>,
}

struct Forward {
    loss: f64,
    /// `E_p[e] - e⁺`
    residual: DVector<f64>,
    query: DVector<f64>,
    grad_eta: [f64; N_SOURCES],
}

impl RetrievalProblem {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.docs.ncols() != self.d {
            return Err(TrainError::Dimension(format!("docs have {} columns, d = {}", self.docs.ncols(), self.d)));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            let dims_ok = ex.input.iter().chain(&ex.user_query).all(|v| v.len() == self.d)
                && ex.signals.iter().all(|(_, f)| f.len() == self.d);
            if !dims_ok {
                return Err(TrainError::Dimension(format!("example {i}")));
            }
            if ex.candidates.is_empty() || ex.positive >= ex.candidates.len() || ex.candidates.iter().any(|&c| c >= self.docs.nrows()) {
                return Err(TrainError::Dimension(format!("example {i} has invalid candidates")));
            }
        }
        Ok(())
    }

    /// Query embedding of one example (as retrieval would compute it) and
    /// the pieces needed for the context-weight gradient.
    fn query(&self, ex: &ProblemExample, eta: &[f64]) -> Option<QueryParts> {
        // keep the tau_c largest weights, ties by source order
        let mut idx: Vec<usize> = (0..ex.signals.len()).collect();
        let w = |i: usize| eta[ex.signals[i].0.index()];
        idx.sort_by(|&a, &b| w(b).total_cmp(&w(a)).then(ex.signals[a].0.cmp(&ex.signals[b].0)).then(a.cmp(&b)));
        let kept: Vec<usize> = idx.into_iter().take(self.tau_c).filter(|&i| w(i) > 0.0).collect();
        let s: f64 = kept.iter().map(|&i| w(i)).sum();
        let mut ctx = None;
        if s > 0.0 {
            let mut c = DVector::zeros(self.d);
            for &i in &kept {
                c += DVector::from_column_slice(&ex.signals[i].1) * (w(i) / s);
            }
            if c.iter().any(|v| *v != 0.0) {
                ctx = Some(c);
            }
        }
        let f = &self.fusion;
        let mut total = 0.0;
        let mut raw = DVector::zeros(self.d);
        if let Some(x) = &ex.input {
            raw += DVector::from_column_slice(x) * f.input;
            total += f.input;
        }
        if let Some(c) = &ctx {
            raw += c * f.context;
            total += f.context;
        }
        if let Some(u) = &ex.user_query {
            raw += DVector::from_column_slice(u) * f.user_query;
            total += f.user_query;
        }
        if total <= 0.0 {
            return None;
        }
        raw /= total;
        let norm = raw.norm();
        if norm == 0.0 {
            return None;
        }
        Some(QueryParts {
            q: raw / norm,
            raw_norm: norm,
            ctx: ctx.map(|c| (c, kept, s, f.context / total)),
        })
    }

    fn forward(&self, ex: &ProblemExample, h: &DMatrix<f64>, eta: &[f64], want_grad: bool) -> Option<Forward> {
        let qp = self.query(ex, eta)?;
        let hq = h * &qp.q;
        let scores: Vec<f64> = ex.candidates.iter().map(|&c| self.docs.row(c).transpose().dot(&hq)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - scores[ex.positive];
        if !want_grad {
            return Some(Forward {
                loss,
                residual: DVector::zeros(0),
                query: qp.q,
                grad_eta: [0.0; N_SOURCES],
            });
        }
        let mut residual = DVector::zeros(self.d);
        for (&c, e) in ex.candidates.iter().zip(&exps) {
            residual += self.docs.row(c).transpose() * (e / z);
        }
        residual -= self.docs.row(ex.candidates[ex.positive]).transpose();

        let mut grad_eta = [0.0; N_SOURCES];
        if let Some((c, kept, s, wc)) = &qp.ctx {
            // d loss / d raw = (I - q qᵀ) Hᵀ residual / ‖raw‖
            let g_q = h.transpose() * &residual;
            let g_raw = (&g_q - &qp.q * qp.q.dot(&g_q)) / qp.raw_norm;
            for &i in kept {
                let (src, f) = &ex.signals[i];
                let diff = DVector::from_column_slice(f) - c;
                grad_eta[src.index()] += wc * g_raw.dot(&diff) / s;
            }
        }
        Some(Forward {
            loss,
            residual,
            query: qp.q,
            grad_eta,
        })
    }

    /// Mean negative log-likelihood of the positives.
    pub fn loss(&self, h: &DMatrix<f64>, eta: &[f64]) -> Result<f64, TrainError> {
        if self.examples.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let losses: Vec<Option<f64>> = self
            .examples
            .par_iter()
            .map(|ex| self.forward(ex, h, eta, false).map(|f| f.loss))
            .collect();
        let mut total = 0.0;
        for (i, l) in losses.into_iter().enumerate() {
            total += l.ok_or(TrainError::EmptyQuery(i))?;
        }
        Ok(total / self.examples.len() as f64)
    }

    /// Loss with exact gradients in `H` and in the per-source context weights.
    pub fn loss_and_grads(&self, h: &DMatrix<f64>, eta: &[f64]) -> Result<LossAndGrads, TrainError> {
        let n = self.examples.len();
        if n == 0 {
            return Err(TrainError::EmptyBatch);
        }
        if eta.len() != N_SOURCES || h.nrows() != self.d || h.ncols() != self.d {
            return Err(TrainError::Dimension(format!("H is {}x{}, eta has {} entries", h.nrows(), h.ncols(), eta.len())));
        }
        let fwd: Vec<Option<Forward>> = self.examples.par_iter().map(|ex| self.forward(ex, h, eta, true)).collect();
        // fixed-order reduction keeps results bitwise reproducible
        let mut loss = 0.0;
        let mut residuals = DMatrix::zeros(self.d, n);
        let mut queries = DMatrix::zeros(self.d, n);
        let mut grad_eta = vec![0.0; N_SOURCES];
        for (i, f) in fwd.into_iter().enumerate() {
            let f = f.ok_or(TrainError::EmptyQuery(i))?;
            loss += f.loss;
            residuals.set_column(i, &f.residual);
            queries.set_column(i, &f.query);
            for (g, v) in grad_eta.iter_mut().zip(f.grad_eta) {
                *g += v;
            }
        }
        let scale = 1.0 / n as f64;
        let grad_h = residuals * queries.transpose() * scale;
        grad_eta.iter_mut().for_each(|g| *g *= scale);
        Ok(LossAndGrads {
            loss: loss * scale,
            grad_h,
            grad_eta,
        })
    }
}

struct QueryParts {
    q: DVector<f64>,
    raw_norm: f64,
    /// (aggregate, kept signal indices, weight sum, effective fusion weight)
    ctx: Option<(DVector<f64>, Vec<usize>, f64, f64)>,
}

/// Reduces examples to embeddings against `snapshot`. The cursor's own unit
/// is never a candidate.
pub fn prepare_problem(
    data: &[TrainingExample],
    snapshot: &IndexSnapshot,
    fusion: FusionWeights,
    tau_c: usize,
) -> Result<RetrievalProblem, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let d = snapshot.d_emb();
    let units = snapshot.doc_units();
    let mut docs = DMatrix::zeros(units.len(), d);
    for (i, u) in units.iter().enumerate() {
        docs.set_row(i, &nalgebra::RowDVector::from_row_slice(u.embedding.as_slice()));
    }
    let mut missing = BTreeSet::new();
    let mut examples = Vec::with_capacity(data.len());
    let actual = snapshot.content_hash_hex();
    for (i, ex) in data.iter().enumerate() {
        if let Some(r) = &ex.snapshot_ref {
            if *r != actual {
                return Err(TrainError::SnapshotMismatch {
                    index: i,
                    expected: r.clone(),
                    actual,
                });
            }
        }
        let cursor_unit = ex.environment.cursor_unit(snapshot);
        let candidates: Vec<usize> = (0..units.len()).filter(|&j| Some(&units[j].id) != cursor_unit.as_ref()).collect();
        let Some(positive) = snapshot
            .unit_position(&ex.positive_doc)
            .and_then(|p| candidates.iter().position(|&c| c == p))
        else {
            missing.insert(ex.positive_doc.to_string());
            continue;
        };
        let signals = collect_signals(&ex.environment, snapshot)
            .signals
            .into_iter()
            .map(|s| (s.source, s.feature.into_vec()))
            .collect();
        examples.push(ProblemExample {
            input: snapshot.embed_text(&ex.input_text).ok().map(|e| e.into_vec()),
            user_query: ex.user_query.as_deref().and_then(|q| snapshot.embed_text(q).ok()).map(|e| e.into_vec()),
            signals,
            candidates,
            positive,
        });
    }
    if !missing.is_empty() {
        return Err(TrainError::MissingDocs(missing.into_iter().collect()));
    }
    Ok(RetrievalProblem {
        d,
        docs,
        examples,
        fusion,
        tau_c,
    })
}

/// Mean negative log-likelihood and its gradients for a batch of examples.
pub fn loss_and_grads(
    h: &DMatrix<f64>,
    eta: &[f64],
    batch: &[TrainingExample],
    snapshot: &IndexSnapshot,
) -> Result<LossAndGrads, TrainError> {
    prepare_problem(batch, snapshot, FusionWeights::default(), DEFAULT_TAU_C)?.loss_and_grads(h, eta)
}

/// `(1 + sqrt(1 + 4 t²)) / 2`
pub fn next_momentum(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Stop once the penalized objective changes by less than this between iterations.
    pub tol: f64,
    /// Weight of the nuclear-norm penalty on `H`.
    pub nuclear_weight: f64,
    /// Starting gradient step for `H` (the `1/τ_H` of the update); halved by backtracking.
    pub step_h: f64,
    /// Starting gradient step for `η'` (`1/τ_η'`).
    pub step_eta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `H⁰ = init_scale · I`.
    pub init_scale: f64,
    pub tau_c: usize,
    pub fusion: FusionWeights,
    /// Swap-significance threshold for ordering search.
    pub epsilon: f64,
    /// Reject a step that raises the penalized objective and restart the
    /// momentum from the current point.
    pub restart: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-7,
            nuclear_weight: 1e-3,
            step_h: 16.0,
            step_eta: 4.0,
            alpha: 1.0,
            beta: 1.0,
            init_scale: 0.1,
            tau_c: DEFAULT_TAU_C,
            fusion: FusionWeights::default(),
            epsilon: DEFAULT_EPSILON,
            restart: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let pos = |v: f64, n: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TrainError::Config(format!("{n} must be positive")))
            }
        };
        pos(self.step_h, "step_h")?;
        pos(self.step_eta, "step_eta")?;
        pos(self.alpha, "alpha")?;
        pos(self.beta, "beta")?;
        if self.nuclear_weight < 0.0 || self.tol < 0.0 || self.tau_c == 0 {
            return Err(TrainError::Config("nuclear_weight, tol must be >= 0 and tau_c >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Data term: mean negative log-likelihood.
    pub loss: f64,
    /// `loss + nuclear_weight · ‖H‖_*`, the quantity being minimized.
    pub objective: f64,
    pub nuclear_norm: f64,
    pub step_h: f64,
    pub step_eta: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub h: DMatrix<f64>,
    pub eta: Vec<f64>,
    /// Entry 0 is the initial point.
    pub loss_history: Vec<IterationRecord>,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().unwrap().loss
    }

    /// CSV with header `iteration,loss,objective,nuclear_norm,step_h,step_eta`.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,loss,objective,nuclear_norm,step_h,step_eta\n");
        for r in &self.loss_history {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e}\n",
                r.iteration, r.loss, r.objective, r.nuclear_norm, r.step_h, r.step_eta
            ));
        }
        s
    }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Smallest step considered before giving up on backtracking.
const MIN_STEP: f64 = 1e-12;

/// Accelerated proximal gradient over `(H, η')`.
///
/// Each iteration extrapolates `H` with momentum, takes a gradient step,
/// applies singular-value thresholding and a relaxed update with `alpha`;
/// then does the same for `η'` (projected onto the simplex) with `beta`.
/// Step sizes shrink by halving until the quadratic upper bound holds.
pub fn train_on_problem(problem: &RetrievalProblem, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let h0 = DMatrix::identity(problem.d, problem.d) * config.init_scale;
    train_from(problem, config, h0, vec![1.0 / N_SOURCES as f64; N_SOURCES])
}

/// Same as [`train_on_problem`] from an explicit starting point.
pub fn train_from(
    problem: &RetrievalProblem,
    config: &TrainConfig,
    h0: DMatrix<f64>,
    eta0: Vec<f64>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    problem.validate()?;
    if h0.nrows() != problem.d || h0.ncols() != problem.d || eta0.len() != N_SOURCES {
        return Err(TrainError::Dimension("initial point".into()));
    }
    let lambda = config.nuclear_weight;
    let (mut h_prev, mut h) = (h0.clone(), h0);
    let (mut eta_prev, mut eta) = (eta0.clone(), eta0);
    let (mut t_prev, mut t) = (1.0f64, 1.0f64);
    let (mut step_h, mut step_eta) = (config.step_h, config.step_eta);

    let check = |loss: f64, it: usize, h: &DMatrix<f64>, eta: &[f64], sh: f64, se: f64| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(TrainError::NonFinite {
                iteration: it,
                dump: format!("|H|_F={:.6e} eta={eta:?} step_h={sh:e} step_eta={se:e}", h.norm()),
            })
        }
    };
    let mut loss = check(problem.loss(&h, &eta)?, 0, &h, &eta, step_h, step_eta)?;
    let mut objective = loss + lambda * nuclear_norm(&h);
    let mut history = vec![IterationRecord {
        iteration: 0,
        loss,
        objective,
        nuclear_norm: nuclear_norm(&h),
        step_h,
        step_eta,
    }];
    let mut converged = false;

    for n in 1..=config.max_iters {
        let mom = (t_prev - 1.0) / t;

        // heuristic matrix
        let h_bar = &h + (&h - &h_prev) * mom;
        let at_bar = problem.loss_and_grads(&h_bar, &eta)?;
        check(at_bar.loss, n, &h_bar, &eta, step_h, step_eta)?;
        let h_prox = loop {
            let g = &h_bar - &at_bar.grad_h * step_h;
            let cand = svt(&g, step_h * lambda);
            let diff = &cand - &h_bar;
            let bound = at_bar.loss + frob_dot(&at_bar.grad_h, &diff) + diff.norm_squared() / (2.0 * step_h);
            let f = problem.loss(&cand, &eta)?;
            if f <= bound + 1e-12 || step_h < MIN_STEP {
                break cand;
            }
            step_h *= 0.5;
        };
        let h_next = &h + (h_prox - &h) * config.alpha;

        // context weights, evaluated at the updated H
        let eta_bar: Vec<f64> = eta.iter().zip(&eta_prev).map(|(a, b)| a + mom * (a - b)).collect();
        let eta_bar = project_simplex(&eta_bar);
        let at_eta = problem.loss_and_grads(&h_next, &eta_bar)?;
        let eta_prox = loop {
            let g: Vec<f64> = eta_bar.iter().zip(&at_eta.grad_eta).map(|(e, g)| e - step_eta * g).collect();
            let cand = project_simplex(&g);
            let diff: Vec<f64> = cand.iter().zip(&eta_bar).map(|(a, b)| a - b).collect();
            let lin: f64 = at_eta.grad_eta.iter().zip(&diff).map(|(a, b)| a * b).sum();
            let sq: f64 = diff.iter().map(|x| x * x).sum();
            let bound = at_eta.loss + lin + sq / (2.0 * step_eta);
            let f = problem.loss(&h_next, &cand)?;
            if f <= bound + 1e-12 || step_eta < MIN_STEP {
                break cand;
            }
            step_eta *= 0.5;
        };
        let eta_next: Vec<f64> = eta.iter().zip(&eta_prox).map(|(e, p)| e + config.beta * (p - e)).collect();

        let new_loss = check(problem.loss(&h_next, &eta_next)?, n, &h_next, &eta_next, step_h, step_eta)?;
        let nuc = nuclear_norm(&h_next);
        let new_objective = new_loss + lambda * nuc;
        if config.restart && new_objective > objective {
            // keep the current point and drop the momentum
            h_prev = h.clone();
            eta_prev = eta.clone();
            t_prev = 1.0;
            t = 1.0;
            history.push(IterationRecord {
                iteration: n,
                loss,
                objective,
                nuclear_norm: nuclear_norm(&h),
                step_h,
                step_eta,
            });
            continue;
        }
        h_prev = std::mem::replace(&mut h, h_next);
        eta_prev = std::mem::replace(&mut eta, eta_next);
        let t_next = next_momentum(t);
        t_prev = t;
        t = t_next;
        let delta = (new_objective - objective).abs();
        objective = new_objective;
        loss = new_loss;
        history.push(IterationRecord {
            iteration: n,
            loss: new_loss,
            objective: new_objective,
            nuclear_norm: nuc,
            step_h,
            step_eta,
        });
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        h,
        eta,
        loss_history: history,
        converged,
    })
}

/// Learns `(H, η')` from examples written against `snapshot`.
pub fn train_retrievers(data: &[TrainingExample], snapshot: &IndexSnapshot, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if data.len() < 2 {
        return Err(TrainError::TooFewExamples { need: 2, got: data.len() });
    }
    let problem = prepare_problem(data, snapshot, config.fusion, config.tau_c)?;
    train_on_problem(&problem, config)
}

/// Fraction of examples whose positive ranks first under `(h, eta)`.
pub fn top1_accuracy(problem: &RetrievalProblem, h: &DMatrix<f64>, eta: &[f64]) -> f64 {
    let hits = problem
        .examples
        .iter()
        .filter(|ex| {
            let Some(qp) = problem.query(ex, eta) else { return false };
            let hq = h * &qp.q;
            let scores: Vec<f64> = ex.candidates.iter().map(|&c| problem.docs.row(c).transpose().dot(&hq)).collect();
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scores[ex.positive] >= best && scores.iter().filter(|&&s| s == best).count() == 1
        })
        .count();
    hits as f64 / problem.examples.len().max(1) as f64
}

//! Bilinear softmax ranking of document units.
//!
//! A unit `z` scores `emb(z)ᵀ H q` against the fused query embedding `q`;
//! probabilities are the softmax of those scores over every candidate.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::ContextVector;
use crate::index::{EmbeddingVector, IndexSnapshot, UnitId};
use crate::train::nuclear_norm;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("heuristic matrix must be square and finite")]
    InvalidMatrix,
    #[error("no candidate document units")]
    NoCandidates,
    #[error("empty retrieval query")]
    EmptyQuery,
    #[error("K must be at least 1")]
    InvalidK,
}

/// Square matrix ranking documents against queries, with its nuclear norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicMatrix {
    values: DMatrix<f64>,
    nuclear_norm: f64,
}

impl HeuristicMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self, RetrievalError> {
        if !values.is_square() || values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::InvalidMatrix);
        }
        let nuclear_norm = nuclear_norm(&values);
        Ok(Self { values, nuclear_norm })
    }

    pub fn identity(d: usize) -> Self {
        Self::scaled_identity(d, 1.0)
    }

    pub fn scaled_identity(d: usize, s: f64) -> Self {
        Self {
            values: DMatrix::identity(d, d) * s,
            nuclear_norm: d as f64 * s.abs(),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            values: DMatrix::zeros(d, d),
            nuclear_norm: 0.0,
        }
    }

    pub fn from_row_major(d: usize, data: &[f64]) -> Result<Self, RetrievalError> {
        if data.len() != d * d {
            return Err(RetrievalError::Dimension {
                expected: d * d,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(d, d, data))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.values.transpose().as_slice().to_vec()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.nuclear_norm
    }

    /// `H q`, reused across all candidates of one query.
    pub fn apply(&self, query: &[f64]) -> Result<Vec<f64>, RetrievalError> {
        if query.len() != self.dim() {
            return Err(RetrievalError::Dimension {
                expected: self.dim(),
                got: query.len(),
            });
        }
        Ok((&self.values * DVector::from_column_slice(query)).as_slice().to_vec())
    }
}

/// Softmax with max-shift.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Bilinear scores `docᵀ H query` for every candidate.
pub fn bilinear_scores(h: &HeuristicMatrix, query: &[f64], docs: &[&[f64]]) -> Result<Vec<f64>, RetrievalError> {
    if docs.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let hq = h.apply(query)?;
    docs.iter()
        .map(|d| {
            if d.len() != hq.len() {
                return Err(RetrievalError::Dimension {
                    expected: hq.len(),
                    got: d.len(),
                });
            }
            Ok(d.iter().zip(&hq).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Probability of each candidate given the query.
pub fn score(h: &HeuristicMatrix, query: &[f64], docs: &[&[f64]]) -> Result<Vec<f64>, RetrievalError> {
    Ok(softmax(&bilinear_scores(h, query, docs)?))
}

/// Convex weights for fusing input, context and user query into one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    pub input: f64,
    pub context: f64,
    pub user_query: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            input: 0.5,
            context: 0.3,
            user_query: 0.2,
        }
    }
}

/// Fused query: `normalize(Σ wᵢ partᵢ / Σ wᵢ)` over the parts present.
pub fn compose_query(
    fusion: &FusionWeights,
    input: Option<&[f64]>,
    context: Option<&[f64]>,
    user_query: Option<&[f64]>,
) -> Result<Vec<f64>, RetrievalError> {
    let parts = [(fusion.input, input), (fusion.context, context), (fusion.user_query, user_query)];
    let present: Vec<(f64, &[f64])> = parts.iter().filter_map(|(w, p)| p.map(|p| (*w, p))).collect();
    let total: f64 = present.iter().map(|(w, _)| w).sum();
    let Some(d) = present.first().map(|(_, p)| p.len()) else {
        return Err(RetrievalError::EmptyQuery);
    };
    if total <= 0.0 {
        return Err(RetrievalError::EmptyQuery);
    }
    let mut raw = vec![0.0; d];
    for (w, p) in &present {
        if p.len() != d {
            return Err(RetrievalError::Dimension {
                expected: d,
                got: p.len(),
            });
        }
        for (r, v) in raw.iter_mut().zip(p.iter()) {
            *r += w / total * v;
        }
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(RetrievalError::EmptyQuery);
    }
    Ok(raw.into_iter().map(|v| v / norm).collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    #[default]
    All,
    /// Only units from these repository-relative files.
    Files(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    pub fusion: FusionWeights,
    pub scope: CandidateScope,
    /// Skip the unit enclosing the cursor.
    pub exclude_cursor_unit: bool,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            fusion: FusionWeights::default(),
            scope: CandidateScope::All,
            exclude_cursor_unit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub unit: UnitId,
    pub probability: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub items: Vec<RetrievedItem>,
    pub query_digest: String,
    /// Size of the candidate set the probabilities were normalized over.
    pub candidates: usize,
}

fn digest(input: &str, user_query: Option<&str>, context: Option<&[f64]>) -> String {
    let mut h = Sha256::new();
    h.update(input.as_bytes());
    h.update([0]);
    if let Some(q) = user_query {
        h.update([1]);
        h.update(q.as_bytes());
    }
    h.update([0]);
    for v in context.into_iter().flatten() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn optional_embedding(snapshot: &IndexSnapshot, text: Option<&str>) -> Option<EmbeddingVector> {
    text.and_then(|t| snapshot.embed_text(t).ok())
}

/// Top-`k` units with the default options.
pub fn retrieve(
    snapshot: &IndexSnapshot,
    context: Option<&ContextVector>,
    input_text: &str,
    user_query: Option<&str>,
    h: &HeuristicMatrix,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    retrieve_with(snapshot, context, input_text, user_query, h, k, &RetrievalOptions::default())
}

pub fn retrieve_with(
    snapshot: &IndexSnapshot,
    context: Option<&ContextVector>,
    input_text: &str,
    user_query: Option<&str>,
    h: &HeuristicMatrix,
    k: usize,
    opts: &RetrievalOptions,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if h.dim() != snapshot.d_emb() {
        return Err(RetrievalError::Dimension {
            expected: snapshot.d_emb(),
            got: h.dim(),
        });
    }
    let input = optional_embedding(snapshot, Some(input_text));
    let uq = optional_embedding(snapshot, user_query);
    let ctx = context
        .map(|c| c.aggregate.as_slice())
        .filter(|a| a.iter().any(|v| *v != 0.0));
    let query = compose_query(
        &opts.fusion,
        input.as_ref().map(|e| e.as_slice()),
        ctx,
        uq.as_ref().map(|e| e.as_slice()),
    )?;

    let exclude = if opts.exclude_cursor_unit {
        context.and_then(|c| c.cursor_unit())
    } else {
        None
    };
    let cands: Vec<_> = snapshot
        .doc_units()
        .iter()
        .filter(|u| Some(&u.id) != exclude)
        .filter(|u| match &opts.scope {
            CandidateScope::All => true,
            CandidateScope::Files(fs) => fs.contains(&u.file),
        })
        .collect();
    let docs: Vec<&[f64]> = cands.iter().map(|u| u.embedding.as_slice()).collect();
    let scores = bilinear_scores(h, &query, &docs)?;
    let probs = softmax(&scores);
    let mut items: Vec<RetrievedItem> = cands
        .iter()
        .zip(probs.iter().zip(&scores))
        .map(|(u, (&p, &s))| RetrievedItem {
            unit: u.id.clone(),
            probability: p,
            score: s,
        })
        .collect();
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.unit.cmp(&b.unit))
    });
    let candidates = items.len();
    items.truncate(k);
    Ok(RetrievalResult {
        items,
        query_digest: digest(input_text, user_query, ctx),
        candidates,
    })
}

//! Context extraction from the local development environment.
//!
//! Four sources are read: the cursor position, the absolute repository path,
//! cached build artifacts and a summary of the symbol index. Each yields a
//! feature vector in embedding space; the context vector is their weighted sum.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::index::{hash_features, Diagnostic, EmbeddingVector, IndexSnapshot, SymbolId, UnitId};

/// Number of index symbols summarized by the index-information signal.
pub const INDEX_SUMMARY_SIZE: usize = 8;

pub const DEFAULT_TAU_C: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ContextError {
    #[error("degenerate context weights")]
    DegenerateWeights,
    #[error("{weights} weights given for {signals} signals")]
    TooFewWeights { weights: usize, signals: usize },
    #[error("context weights must be finite and non-negative")]
    InvalidWeight,
    #[error("tau_c must be at least 1")]
    ZeroCap,
}

/// Headless description of the editor state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub repo_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor: Option<Cursor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    /// Repository-relative path (absolute paths under the root are accepted).
    pub file: String,
    pub line: u32,
    pub col: u32,
}

impl EnvironmentState {
    pub fn new(repo_root: impl Into<PathBuf>) -> Self {
        Self {
            repo_root: repo_root.into(),
            cursor: None,
            artifacts: None,
        }
    }

    pub fn from_json_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Cursor file relative to the repository root, with `/` separators.
    pub fn cursor_file(&self) -> Option<String> {
        let c = self.cursor.as_ref()?;
        let p = Path::new(&c.file);
        let rel = if p.is_absolute() {
            p.strip_prefix(&self.repo_root).ok()?
        } else {
            p
        };
        Some(
            rel.components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/"),
        )
    }

    /// The document unit enclosing the cursor, if any.
    pub fn cursor_unit(&self, snapshot: &IndexSnapshot) -> Option<UnitId> {
        let line = self.cursor.as_ref()?.line;
        snapshot.unit_at(&self.cursor_file()?, line).map(|u| u.id.clone())
    }

    pub fn absolute_root(&self) -> PathBuf {
        std::path::absolute(&self.repo_root).unwrap_or_else(|_| self.repo_root.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    CursorPosition,
    RepoPath,
    BuildArtifacts,
    IndexInformation,
}

impl ContextSource {
    pub const ALL: [ContextSource; 4] = [
        ContextSource::CursorPosition,
        ContextSource::RepoPath,
        ContextSource::BuildArtifacts,
        ContextSource::IndexInformation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactInfo {
    pub path: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalPayload {
    Cursor { file: String, line: u32, col: u32, unit: UnitId },
    RepoPath { path: String },
    Artifacts { entries: Vec<ArtifactInfo> },
    IndexInformation { symbols: Vec<SymbolId>, names: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSignal {
    pub source: ContextSource,
    pub payload: SignalPayload,
    pub feature: EmbeddingVector,
}

#[derive(Debug, Clone, Default)]
pub struct CollectedSignals {
    pub signals: Vec<ContextSignal>,
    pub diagnostics: Vec<Diagnostic>,
}

fn word_features(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| w.chars().count() >= 2)
        .map(|w| format!("tok:{w}"))
        .collect()
}

/// Features of the repository-path signal: one token per path word.
pub fn repo_path_features(path: &Path) -> Vec<String> {
    word_features(&path.to_string_lossy())
}

/// Features of the build-artifact signal: words of each artifact's file stem.
pub fn artifact_features(paths: &[String]) -> Vec<String> {
    paths
        .iter()
        .flat_map(|p| {
            let stem = Path::new(p).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            word_features(&stem)
        })
        .collect()
}

/// Highest in-degree definitions reachable from the cursor file (or from the
/// whole index when there is no cursor file), ties broken by symbol id.
pub fn index_summary(snapshot: &IndexSnapshot, cursor_file: Option<&str>) -> Vec<SymbolId> {
    let from_cursor: BTreeSet<SymbolId> = cursor_file
        .map(|f| {
            snapshot
                .file_symbols(f)
                .flat_map(|r| r.dependencies.iter().cloned())
                .collect()
        })
        .unwrap_or_default();
    let mut cands: Vec<SymbolId> = if from_cursor.is_empty() {
        snapshot.definitions().values().flatten().cloned().collect()
    } else {
        from_cursor.into_iter().collect()
    };
    cands.sort_by(|a, b| snapshot.in_degree(b).cmp(&snapshot.in_degree(a)).then_with(|| a.cmp(b)));
    cands.truncate(INDEX_SUMMARY_SIZE);
    cands
}

pub fn index_summary_features(names: &[String]) -> Vec<String> {
    names
        .iter()
        .flat_map(|n| [format!("tok:{n}"), format!("dep:{n}")])
        .collect()
}

/// One signal per available source, in source order.
pub fn collect_signals(env: &EnvironmentState, snapshot: &IndexSnapshot) -> CollectedSignals {
    let d = snapshot.d_emb();
    let mut out = CollectedSignals::default();

    if let (Some(c), Some(file)) = (&env.cursor, env.cursor_file()) {
        if let Some(u) = snapshot.unit_at(&file, c.line) {
            out.signals.push(ContextSignal {
                source: ContextSource::CursorPosition,
                payload: SignalPayload::Cursor {
                    file: file.clone(),
                    line: c.line,
                    col: c.col,
                    unit: u.id.clone(),
                },
                feature: u.embedding.clone(),
            });
        }
    }

    let root = env.absolute_root();
    out.signals.push(ContextSignal {
        source: ContextSource::RepoPath,
        payload: SignalPayload::RepoPath {
            path: root.to_string_lossy().into_owned(),
        },
        feature: hash_features(&repo_path_features(&root), d),
    });

    let mut entries = Vec::new();
    for a in env.artifacts.iter().flatten() {
        let full = if a.is_absolute() { a.clone() } else { env.repo_root.join(a) };
        match std::fs::metadata(&full) {
            Ok(m) => entries.push(ArtifactInfo {
                path: a.to_string_lossy().into_owned(),
                size: m.len(),
            }),
            Err(e) => out.diagnostics.push(Diagnostic {
                path: a.to_string_lossy().into_owned(),
                message: format!("artifact unreadable: {e}"),
            }),
        }
    }
    if !entries.is_empty() {
        let paths: Vec<String> = entries.iter().map(|e| e.path.clone()).collect();
        out.signals.push(ContextSignal {
            source: ContextSource::BuildArtifacts,
            payload: SignalPayload::Artifacts { entries },
            feature: hash_features(&artifact_features(&paths), d),
        });
    }

    // index information describes the editing location, so it needs a cursor
    let summary = env.cursor_file().map(|f| index_summary(snapshot, Some(&f))).unwrap_or_default();
    if !summary.is_empty() {
        let names: Vec<String> = summary
            .iter()
            .map(|id| snapshot.record(id).map(|r| r.name.clone()).unwrap_or_default())
            .collect();
        out.signals.push(ContextSignal {
            source: ContextSource::IndexInformation,
            feature: hash_features(&index_summary_features(&names), d),
            payload: SignalPayload::IndexInformation { symbols: summary, names },
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub signal: ContextSignal,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub entries: Vec<ContextEntry>,
    pub aggregate: Vec<f64>,
    pub tau_c: usize,
}

impl ContextVector {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn cursor_unit(&self) -> Option<&UnitId> {
        self.entries.iter().find_map(|e| match &e.signal.payload {
            SignalPayload::Cursor { unit, .. } => Some(unit),
            _ => None,
        })
    }
}

/// Weighted sum of signal features. `weights[i]` applies to `signals[i]`.
/// Only the `tau_c` largest weights survive (ties by source order, then
/// position); survivors are renormalized onto the simplex.
pub fn aggregate(signals: &[ContextSignal], weights: &[f64], tau_c: usize) -> Result<ContextVector, ContextError> {
    if tau_c == 0 {
        return Err(ContextError::ZeroCap);
    }
    if weights.len() < signals.len() {
        return Err(ContextError::TooFewWeights {
            weights: weights.len(),
            signals: signals.len(),
        });
    }
    let w = &weights[..signals.len()];
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ContextError::InvalidWeight);
    }
    let mut order: Vec<usize> = (0..signals.len()).collect();
    order.sort_by(|&a, &b| {
        w[b].total_cmp(&w[a])
            .then(signals[a].source.cmp(&signals[b].source))
            .then(a.cmp(&b))
    });
    let mut kept = vec![0.0; signals.len()];
    for &i in order.iter().take(tau_c) {
        kept[i] = w[i];
    }
    let total: f64 = kept.iter().sum();
    if total <= 0.0 {
        return Err(ContextError::DegenerateWeights);
    }
    let d = signals.first().map_or(0, |s| s.feature.dim());
    let mut agg = vec![0.0; d];
    let mut entries = Vec::with_capacity(signals.len());
    for (s, k) in signals.iter().zip(&kept) {
        let weight = k / total;
        if weight > 0.0 {
            for (a, f) in agg.iter_mut().zip(s.feature.as_slice()) {
                *a += weight * f;
            }
        }
        entries.push(ContextEntry {
            signal: s.clone(),
            weight,
        });
    }
    Ok(ContextVector {
        entries,
        aggregate: agg,
        tau_c,
    })
}

/// Maps per-source weights onto a signal list.
pub fn source_weights(eta: &[f64], signals: &[ContextSignal]) -> Vec<f64> {
    signals.iter().map(|s| eta.get(s.source.index()).copied().unwrap_or(0.0)).collect()
}

/// Collects signals and aggregates them with per-source weights `eta`.
pub fn context_vector(
    env: &EnvironmentState,
    snapshot: &IndexSnapshot,
    eta: &[f64],
    tau_c: usize,
) -> (Result<ContextVector, ContextError>, Vec<Diagnostic>) {
    let collected = collect_signals(env, snapshot);
    let w = source_weights(eta, &collected.signals);
    (aggregate(&collected.signals, &w, tau_c), collected.diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(source: ContextSource, v: Vec<f64>) -> ContextSignal {
        ContextSignal {
            source,
            payload: SignalPayload::RepoPath { path: String::new() },
            feature: EmbeddingVector::normalized(v),
        }
    }

    #[test]
    fn single_signal_is_identity() {
        let s = sig(ContextSource::RepoPath, vec![0.6, 0.8, 0.0]);
        let c = aggregate(std::slice::from_ref(&s), &[1.0], 4).unwrap();
        assert_eq!(c.aggregate, s.feature.as_slice());
        assert_eq!(c.weights(), vec![1.0]);
    }

    #[test]
    fn orthogonal_halves_have_norm_sqrt_half() {
        let u = sig(ContextSource::CursorPosition, vec![1.0, 0.0]);
        let v = sig(ContextSource::RepoPath, vec![0.0, 1.0]);
        let c = aggregate(&[u, v], &[0.5, 0.5], 4).unwrap();
        let norm = c.aggregate.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cap_drops_lowest_weight() {
        let signals: Vec<_> = (0..5)
            .map(|i| sig(ContextSource::ALL[i % 4], vec![1.0, i as f64]))
            .collect();
        let c = aggregate(&signals, &[0.3, 0.25, 0.2, 0.15, 0.1], 4).unwrap();
        let w = c.weights();
        assert_eq!(w[4], 0.0);
        assert!((w[..4].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w.iter().filter(|x| **x > 0.0).count(), 4);
    }

    #[test]
    fn cap_ties_break_by_source_order() {
        let signals = vec![
            sig(ContextSource::IndexInformation, vec![1.0, 0.0]),
            sig(ContextSource::CursorPosition, vec![0.0, 1.0]),
        ];
        let c = aggregate(&signals, &[0.5, 0.5], 1).unwrap();
        assert_eq!(c.weights(), vec![0.0, 1.0]);
    }

    #[test]
    fn degenerate_and_invalid_weights() {
        let s = sig(ContextSource::RepoPath, vec![1.0]);
        assert_eq!(aggregate(std::slice::from_ref(&s), &[0.0], 4).unwrap_err(), ContextError::DegenerateWeights);
        assert_eq!(aggregate(std::slice::from_ref(&s), &[-1.0], 4).unwrap_err(), ContextError::InvalidWeight);
        assert!(matches!(aggregate(std::slice::from_ref(&s), &[], 4), Err(ContextError::TooFewWeights { .. })));
        assert_eq!(aggregate(&[s], &[1.0], 0).unwrap_err(), ContextError::ZeroCap);
    }

    #[test]
    fn cursor_file_relativizes_absolute_paths() {
        let mut env = EnvironmentState::new("/repo");
        env.cursor = Some(Cursor {
            file: "/repo/src/a.rs".into(),
            line: 0,
            col: 0,
        });
        assert_eq!(env.cursor_file().as_deref(), Some("src/a.rs"));
    }

    #[test]
    fn environment_json_shape() {
        let env: EnvironmentState = serde_json::from_str(
            r#"{"repo_root": "r", "cursor": {"file": "a.rs", "line": 3, "col": 1}, "artifacts": ["t/x.o"]}"#,
        )
        .unwrap();
        assert_eq!(env.cursor.unwrap().line, 3);
        let minimal: EnvironmentState = serde_json::from_str(r#"{"repo_root": "r"}"#).unwrap();
        assert!(minimal.cursor.is_none() && minimal.artifacts.is_none());
    }
}

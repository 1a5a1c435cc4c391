//! Learned parameters and their on-disk format.
//!
//! Layout (little-endian): magic `CAMPPRM\0`, `u32` version, `u32` d,
//! `d·d` `f64` of `H` row-major, `u32` source count and that many `f64` of
//! `η'`, `u32` ordering length and one `u8` kind code each, `u32` metadata
//! length and UTF-8 JSON metadata.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::prompt::{ComponentKind, ComponentOrder};
use crate::retrieval::HeuristicMatrix;
use crate::train::N_SOURCES;

const MAGIC: &[u8; 8] = b"CAMPPRM\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("unsupported parameter file version {0}")]
    Version(u32),
    #[error("truncated parameter file")]
    Truncated,
    #[error("corrupt parameter file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub nuclear_weight: Option<f64>,
    pub examples: usize,
    pub seed: Option<u64>,
    /// Content hash of the snapshot the parameters were trained on.
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedParams {
    pub h: HeuristicMatrix,
    /// Per-source context weights on the simplex, in source order.
    pub eta: Vec<f64>,
    pub ordering: ComponentOrder,
    pub meta: TrainingMeta,
}

impl LearnedParams {
    /// `H = init_scale · I`, uniform `η'`, default ordering.
    pub fn initial(d: usize, init_scale: f64) -> Self {
        Self {
            h: HeuristicMatrix::scaled_identity(d, init_scale),
            eta: vec![1.0 / N_SOURCES as f64; N_SOURCES],
            ordering: ComponentOrder::default(),
            meta: TrainingMeta::default(),
        }
    }

    pub fn d(&self) -> usize {
        self.h.dim()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.h.dim();
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(32 + 8 * (d * d + self.eta.len()) + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.h.to_row_major() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.eta.len() as u32).to_le_bytes());
        for v in &self.eta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let kinds = self.ordering.kinds();
        out.extend_from_slice(&(kinds.len() as u32).to_le_bytes());
        out.extend(kinds.iter().map(|k| k.code()));
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamsError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ParamsError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ParamsError::Version(version));
        }
        let d = r.u32()? as usize;
        let data = (0..d * d).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let h = HeuristicMatrix::from_row_major(d, &data).map_err(|e| ParamsError::Corrupt(e.to_string()))?;
        let n_eta = r.u32()? as usize;
        if n_eta != N_SOURCES {
            return Err(ParamsError::Corrupt(format!("expected {N_SOURCES} context weights, found {n_eta}")));
        }
        let eta = (0..n_eta).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if eta.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ParamsError::Corrupt("context weights must be finite and non-negative".into()));
        }
        let n_kinds = r.u32()? as usize;
        let kinds = r
            .take(n_kinds)?
            .iter()
            .map(|&c| ComponentKind::from_code(c).ok_or_else(|| ParamsError::Corrupt(format!("unknown component code {c}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let ordering = ComponentOrder::new(&kinds).map_err(|e| ParamsError::Corrupt(e.to_string()))?;
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| ParamsError::Corrupt(e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(ParamsError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { h, eta, ordering, meta })
    }

    /// Writes atomically through a temporary file in the target directory.
    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        let io = |source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(&self.to_bytes()).map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let bytes = std::fs::read(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParamsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ParamsError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ParamsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ParamsError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Shared handle to the active parameters. Readers clone an `Arc` and keep
/// a consistent set even while a new one is published.
#[derive(Debug)]
pub struct ParamStore {
    current: RwLock<Arc<LearnedParams>>,
}

impl ParamStore {
    pub fn new(params: LearnedParams) -> Self {
        Self {
            current: RwLock::new(Arc::new(params)),
        }
    }

    pub fn current(&self) -> Arc<LearnedParams> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn publish(&self, params: LearnedParams) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(params);
    }
}

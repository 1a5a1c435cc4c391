//! Signed feature hashing into a fixed number of buckets.

use serde::{Deserialize, Serialize};

use super::SymbolKind;

/// Unit-norm dense vector of the index's configured dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wraps raw values, L2-normalizing them. A vector that is exactly zero
    /// becomes the reserved basis vector `e_0`.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "embedding dimension must be positive");
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bucket index and sign for one feature string.
pub fn feature_bucket(feature: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a(feature.as_bytes());
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

pub fn hash_features<S: AsRef<str>>(features: &[S], dim: usize) -> EmbeddingVector {
    let mut values = vec![0.0; dim];
    for f in features {
        let (b, s) = feature_bucket(f.as_ref(), dim);
        values[b] += s;
    }
    EmbeddingVector::normalized(values)
}

/// Word pieces of a comment or free text (letters/digits/underscore runs).
pub(crate) fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| w.chars().count() >= 2)
}

/// Features contributed by one symbol occurrence.
pub(crate) fn symbol_features(
    name: &str,
    kind: SymbolKind,
    dep_targets: impl IntoIterator<Item = String>,
    out: &mut Vec<String>,
) {
    match kind {
        SymbolKind::Comment => out.extend(words(name).map(|w| format!("tok:{w}"))),
        SymbolKind::Other => out.push(format!("tok:{name}")),
        k => {
            out.push(format!("tok:{name}"));
            out.push(format!("{}:{name}", k.as_str()));
        }
    }
    out.extend(dep_targets.into_iter().map(|t| format!("dep:{t}")));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn zero_vector_maps_to_reserved_basis() {
        let e = EmbeddingVector::normalized(vec![0.0; 8]);
        assert_eq!(e.as_slice()[0], 1.0);
        assert_eq!(e.as_slice()[1..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn cancelling_features_use_reserved_basis() {
        // find two features landing in the same bucket with opposite signs
        let dim = 4;
        let mut seen: Vec<(usize, f64, String)> = Vec::new();
        let pair = (0..10_000)
            .map(|i| format!("tok:f{i}"))
            .find_map(|f| {
                let (b, s) = feature_bucket(&f, dim);
                let hit = seen.iter().find(|(b2, s2, _)| *b2 == b && *s2 == -s).map(|x| x.2.clone());
                seen.push((b, s, f.clone()));
                hit.map(|g| (f, g))
            })
            .unwrap();
        let e = hash_features(&[pair.0, pair.1], dim);
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalized_has_unit_norm() {
        let e = hash_features(&["tok:a", "tok:b", "tok:b", "dep:c"], 16);
        assert!((e.dot(&e) - 1.0).abs() < 1e-12);
    }
}

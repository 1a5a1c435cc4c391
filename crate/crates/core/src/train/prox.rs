//! Proximal operators used by the retriever trainer.

use nalgebra::DMatrix;

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().sum()
}

/// Singular-value soft thresholding: `U max(Σ - τ, 0) Vᵀ`, the proximal
/// operator of `τ‖·‖_*`.
///
/// # Panics
/// If `tau` is negative or `m` contains non-finite entries.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert!(tau >= 0.0, "threshold must be non-negative");
    assert!(m.iter().all(|v| v.is_finite()), "svt input must be finite");
    if m.is_empty() {
        return m.clone();
    }
    let mut svd = m.clone().svd(true, true);
    svd.singular_values.iter_mut().for_each(|s| *s = (*s - tau).max(0.0));
    svd.recompose().expect("u and v were requested")
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // absorb rounding so the entries sum to one
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|x| *x /= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_example() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.5]));
        let out = svt(&m, 1.0);
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0, 0.0]));
        assert!((out - expect).abs().max() < 1e-12);
    }

    #[test]
    fn zero_threshold_is_identity() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0, 4.0, 0.2, -1.0]);
        assert!((svt(&m, 0.0) - &m).abs().max() < 1e-10);
    }

    #[test]
    fn large_threshold_gives_zero() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(svt(&m, 100.0).abs().max(), 0.0);
    }

    #[test]
    #[should_panic]
    fn non_finite_input_panics() {
        svt(&DMatrix::from_element(2, 2, f64::INFINITY), 1.0);
    }

    #[test]
    fn simplex_projection_cases() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5, 0.5]);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let p = project_simplex(&[-3.0, 1.2, 0.4]);
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.9).abs() < 1e-12 && (p[2] - 0.1).abs() < 1e-12);
    }
}

//! Synthetic retrieval problems with a known ranking matrix.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ProblemExample, RetrievalProblem};
use crate::retrieval::FusionWeights;

/// A problem whose labels are `argmax_z e_zᵀ H* q` for a random `H*`.
#[derive(Debug, Clone)]
pub struct PlantedProblem {
    pub problem: RetrievalProblem,
    pub h_star: DMatrix<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit-norm documents and queries; every document is a candidate.
pub fn planted_problem(seed: u64, d: usize, n_docs: usize, n_examples: usize) -> PlantedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_star = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut docs = DMatrix::zeros(n_docs, d);
    for i in 0..n_docs {
        docs.set_row(i, &nalgebra::RowDVector::from_vec(unit_vector(&mut rng, d)));
    }
    let examples = (0..n_examples)
        .map(|_| {
            let q = unit_vector(&mut rng, d);
            let hq = &h_star * nalgebra::DVector::from_column_slice(&q);
            let scores = &docs * hq;
            let positive = scores.argmax().0;
            ProblemExample {
                input: Some(q),
                user_query: None,
                signals: Vec::new(),
                candidates: (0..n_docs).collect(),
                positive,
            }
        })
        .collect();
    PlantedProblem {
        problem: RetrievalProblem {
            d,
            docs,
            examples,
            fusion: FusionWeights::default(),
            tau_c: crate::context::DEFAULT_TAU_C,
        },
        h_star,
    }
}

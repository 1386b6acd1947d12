//! Random valid models for property tests and benchmarks.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dph::DiscretePhaseType;
use crate::emission::EmissionLaw;
use crate::phmodel::PhTypeHmm;
use crate::rng::stream_rng;

/// Signal family of the generated regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomEmission {
    /// Categorical over `{0, 1, 2}`.
    Categorical,
    /// Poisson with means spread over `[0.5, 12]`.
    Poisson,
    /// Exponential with means spread over `[0.5, 20]`.
    Exponential,
}

fn simplex<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// A random sojourn law with `f` phases; every row keeps exit mass.
pub fn random_dph<R: Rng>(rng: &mut R, f: usize) -> DiscretePhaseType {
    let alpha = simplex(rng, f, 0.05);
    let mut t = DMatrix::zeros(f, f);
    for r in 0..f {
        let row = simplex(rng, f + 1, 0.05);
        for c in 0..f {
            t[(r, c)] = row[c];
        }
    }
    DiscretePhaseType::new(alpha, t).expect("random sojourn is valid")
}

/// Random model with categorical emissions; one regime per layout entry.
pub fn random_model(seed: u64, layout: &[usize]) -> PhTypeHmm {
    random_model_with(seed, layout, RandomEmission::Categorical)
}

pub fn random_model_with(seed: u64, layout: &[usize], family: RandomEmission) -> PhTypeHmm {
    let d = layout.len();
    let mut rng = stream_rng(seed, 0xd0d0);
    let beta = simplex(&mut rng, d, 0.05);
    let jump = if d == 1 {
        DMatrix::zeros(1, 1)
    } else {
        let mut j = DMatrix::zeros(d, d);
        for r in 0..d {
            let row = simplex(&mut rng, d - 1, 0.05);
            let mut k = 0;
            for c in 0..d {
                if c != r {
                    j[(r, c)] = row[k];
                    k += 1;
                }
            }
        }
        j
    };
    let sojourn = layout.iter().map(|&f| random_dph(&mut rng, f)).collect();
    let emission = (0..d)
        .map(|i| {
            let spread = (i as f64 + rng.random::<f64>()) / d as f64;
            match family {
                RandomEmission::Categorical => EmissionLaw::Categorical {
                    alphabet: vec![0.0, 1.0, 2.0],
                    probs: simplex(&mut rng, 3, 0.05),
                },
                RandomEmission::Poisson => EmissionLaw::Poisson {
                    lambda: 0.5 + 11.5 * spread,
                },
                RandomEmission::Exponential => EmissionLaw::Exponential {
                    rate: 1.0 / (0.5 + 19.5 * spread),
                },
            }
        })
        .collect();
    PhTypeHmm::new(PhTypeHmm::default_labels(d), beta, jump, sojourn, emission)
        .expect("random model is valid")
}

//! Per-regime signal laws `g(i, y)`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use statrs::distribution::{Discrete, DiscreteCDF, Poisson as PoissonLaw};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::pick_index;

#[derive(Debug, Clone, PartialEq)]
pub enum EmissionLaw {
    /// All mass on one signal value.
    Degenerate { value: f64 },
    /// Finite alphabet with explicit probabilities.
    Categorical { alphabet: Vec<f64>, probs: Vec<f64> },
    /// Counts with mean `lambda`.
    Poisson { lambda: f64 },
    /// Exponential density with the given rate, evaluated w.r.t. Lebesgue
    /// measure.
    Exponential { rate: f64 },
}

/// Which dominating measure a law lives on. Laws in one model must agree.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalDomain {
    /// Point mass only; compatible with any discrete domain containing it.
    Point(f64),
    Count,
    Alphabet(Vec<f64>),
    Continuous,
}

impl EmissionLaw {
    pub fn validate(self) -> Result<Self> {
        match self {
            EmissionLaw::Degenerate { value } if !value.is_finite() => {
                Err(Error::NonFinite(format!("degenerate value {value}")))
            }
            EmissionLaw::Categorical { alphabet, probs } => {
                if alphabet.len() != probs.len() {
                    return Err(Error::Dimension {
                        what: "categorical probabilities".into(),
                        expected: alphabet.len(),
                        found: probs.len(),
                    });
                }
                for (k, a) in alphabet.iter().enumerate() {
                    if alphabet[..k].contains(a) {
                        return Err(Error::invalid(format!("repeated categorical symbol {a}")));
                    }
                }
                let probs = linalg::probability_vector(&probs, "categorical probabilities")?;
                Ok(EmissionLaw::Categorical { alphabet, probs })
            }
            EmissionLaw::Poisson { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::invalid(format!("Poisson mean {lambda} must be positive")))
            }
            EmissionLaw::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(Error::invalid(format!("exponential rate {rate} must be positive")))
            }
            law => Ok(law),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            EmissionLaw::Degenerate { .. } => "degenerate",
            EmissionLaw::Categorical { .. } => "categorical",
            EmissionLaw::Poisson { .. } => "poisson",
            EmissionLaw::Exponential { .. } => "exponential",
        }
    }

    pub fn domain(&self) -> SignalDomain {
        match self {
            EmissionLaw::Degenerate { value } => SignalDomain::Point(*value),
            EmissionLaw::Categorical { alphabet, .. } => SignalDomain::Alphabet(alphabet.clone()),
            EmissionLaw::Poisson { .. } => SignalDomain::Count,
            EmissionLaw::Exponential { .. } => SignalDomain::Continuous,
        }
    }

    pub fn is_density(&self) -> bool {
        matches!(self, EmissionLaw::Exponential { .. })
    }

    /// Mass (discrete laws) or density (exponential) at `y`.
    pub fn eval(&self, y: f64) -> Result<f64> {
        Ok(match self {
            EmissionLaw::Degenerate { value } => {
                if y == *value {
                    1.0
                } else {
                    0.0
                }
            }
            EmissionLaw::Categorical { alphabet, probs } => {
                let k = alphabet.iter().position(|a| *a == y).ok_or_else(|| {
                    Error::OutOfDomain {
                        value: y,
                        law: "categorical alphabet".into(),
                    }
                })?;
                probs[k]
            }
            EmissionLaw::Poisson { lambda } => match as_count(y) {
                Some(k) => PoissonLaw::new(*lambda)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .pmf(k),
                None => 0.0,
            },
            EmissionLaw::Exponential { rate } => {
                if y < 0.0 {
                    0.0
                } else {
                    rate * (-rate * y).exp()
                }
            }
        })
    }

    /// `P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            EmissionLaw::Degenerate { value } => {
                if *value <= y {
                    1.0
                } else {
                    0.0
                }
            }
            EmissionLaw::Categorical { alphabet, probs } => alphabet
                .iter()
                .zip(probs)
                .filter(|(a, _)| **a <= y)
                .map(|(_, p)| p)
                .sum::<f64>()
                .min(1.0),
            EmissionLaw::Poisson { lambda } => {
                if y < 0.0 {
                    0.0
                } else {
                    PoissonLaw::new(*lambda)
                        .map(|p| p.cdf(y.floor() as u64))
                        .unwrap_or(0.0)
                }
            }
            EmissionLaw::Exponential { rate } => {
                if y <= 0.0 {
                    0.0
                } else {
                    -(-rate * y).exp_m1()
                }
            }
        }
    }

    /// `P(Y = 0)`; zero for densities.
    pub fn mass_at_zero(&self) -> f64 {
        match self {
            EmissionLaw::Exponential { .. } => 0.0,
            law => law.eval(0.0).unwrap_or(0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            EmissionLaw::Degenerate { value } => *value,
            EmissionLaw::Categorical { alphabet, probs } => linalg::dot(alphabet, probs),
            EmissionLaw::Poisson { lambda } => *lambda,
            EmissionLaw::Exponential { rate } => 1.0 / rate,
        }
    }

    /// Number of free parameters when this family is estimated.
    pub fn free_parameters(&self) -> usize {
        match self {
            EmissionLaw::Degenerate { .. } => 0,
            EmissionLaw::Categorical { alphabet, .. } => alphabet.len() - 1,
            EmissionLaw::Poisson { .. } | EmissionLaw::Exponential { .. } => 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EmissionLaw::Degenerate { value } => *value,
            EmissionLaw::Categorical { alphabet, probs } => alphabet[pick_index(rng, probs)],
            EmissionLaw::Poisson { lambda } => Poisson::new(*lambda)
                .expect("validated Poisson mean")
                .sample(rng),
            EmissionLaw::Exponential { rate } => {
                Exp::new(*rate).expect("validated exponential rate").sample(rng)
            }
        }
    }
}

fn as_count(y: f64) -> Option<u64> {
    (y >= 0.0 && y.fract() == 0.0 && y < u64::MAX as f64).then_some(y as u64)
}

/// Check that every law lives on one signal domain.
pub fn check_domains(laws: &[EmissionLaw]) -> Result<()> {
    let mut count = false;
    let mut continuous = false;
    let mut alphabet: Option<&Vec<f64>> = None;
    let mut points = Vec::new();
    for (i, law) in laws.iter().enumerate() {
        match law {
            EmissionLaw::Degenerate { value } => points.push((i, *value)),
            EmissionLaw::Poisson { .. } => count = true,
            EmissionLaw::Exponential { .. } => continuous = true,
            EmissionLaw::Categorical { alphabet: a, .. } => match alphabet {
                None => alphabet = Some(a),
                Some(prev) if prev == a => {}
                Some(_) => {
                    return Err(Error::invalid(format!(
                        "regime {i}: categorical alphabet differs from an earlier regime"
                    )))
                }
            },
        }
    }
    let kinds = count as u8 + continuous as u8 + alphabet.is_some() as u8;
    if kinds > 1 {
        return Err(Error::invalid(
            "emission laws mix signal domains (count, categorical, continuous)",
        ));
    }
    if continuous && !points.is_empty() {
        return Err(Error::invalid(format!(
            "regime {}: point-mass emission cannot be combined with densities",
            points[0].0
        )));
    }
    if let Some(a) = alphabet {
        if let Some((i, v)) = points.iter().find(|(_, v)| !a.contains(v)) {
            return Err(Error::invalid(format!(
                "regime {i}: degenerate value {v} is not in the categorical alphabet"
            )));
        }
    }
    if count {
        if let Some((i, v)) = points.iter().find(|(_, v)| as_count(*v).is_none()) {
            return Err(Error::invalid(format!(
                "regime {i}: degenerate value {v} is not a count"
            )));
        }
    }
    Ok(())
}

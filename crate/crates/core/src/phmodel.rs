//! The hidden phase-type Markov model: a semi-Markov regime chain whose
//! sojourns are discrete phase-type, observed through per-regime signal laws.

use nalgebra::DMatrix;

use crate::dph::DiscretePhaseType;
use crate::emission::{check_domains, EmissionLaw};
use crate::error::{Error, Result};
use crate::linalg::{self, STOCHASTIC_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct PhTypeHmm {
    labels: Vec<String>,
    beta: Vec<f64>,
    jump: DMatrix<f64>,
    sojourn: Vec<DiscretePhaseType>,
    emission: Vec<EmissionLaw>,
}

impl PhTypeHmm {
    /// Validate a candidate model.
    ///
    /// A single-regime model may pass an empty or `1x1` zero jump matrix;
    /// it is stored as `[[0]]` and its sojourns renew in place.
    pub fn new(
        labels: Vec<String>,
        beta: Vec<f64>,
        jump: DMatrix<f64>,
        sojourn: Vec<DiscretePhaseType>,
        emission: Vec<EmissionLaw>,
    ) -> Result<Self> {
        let d = beta.len();
        if d == 0 {
            return Err(Error::invalid("model needs at least one regime"));
        }
        for (what, found) in [
            ("regime labels", labels.len()),
            ("sojourn laws", sojourn.len()),
            ("emission laws", emission.len()),
        ] {
            if found != d {
                return Err(Error::Dimension {
                    what: what.into(),
                    expected: d,
                    found,
                });
            }
        }
        let beta = linalg::probability_vector(&beta, "beta")?;
        let jump = validate_jump(jump, d)?;
        let emission = emission
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.validate()
                    .map_err(|e| Error::invalid(format!("emission of regime {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        check_domains(&emission)?;
        Ok(Self {
            labels,
            beta,
            jump,
            sojourn,
            emission,
        })
    }

    /// Default labels `regime1..regimeD`.
    pub fn default_labels(d: usize) -> Vec<String> {
        (1..=d).map(|i| format!("regime{i}")).collect()
    }

    pub fn regimes(&self) -> usize {
        self.beta.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn jump(&self) -> &DMatrix<f64> {
        &self.jump
    }

    pub fn sojourn(&self, i: usize) -> &DiscretePhaseType {
        &self.sojourn[i]
    }

    pub fn sojourns(&self) -> &[DiscretePhaseType] {
        &self.sojourn
    }

    pub fn emission(&self, i: usize) -> &EmissionLaw {
        &self.emission[i]
    }

    pub fn emissions(&self) -> &[EmissionLaw] {
        &self.emission
    }

    /// Phase counts `F_i`, in regime order.
    pub fn layout(&self) -> Vec<usize> {
        self.sojourn.iter().map(|s| s.phases()).collect()
    }

    /// `Q_ij(n) = p_ij * P(tau_i = n)`.
    pub fn semi_markov_kernel(&self, i: usize, j: usize, n: u64) -> Result<f64> {
        let d = self.regimes();
        if i >= d {
            return Err(Error::UnknownRegime(i));
        }
        if j >= d {
            return Err(Error::UnknownRegime(j));
        }
        if i == j {
            return Ok(0.0);
        }
        Ok(self.jump[(i, j)] * self.sojourn[i].pmf(n)?)
    }

    /// Long-run fraction of time spent in each regime: the embedded-chain
    /// stationary law weighted by mean sojourns.
    pub fn regime_occupancy(&self) -> Result<Vec<f64>> {
        let d = self.regimes();
        let embedded = if d == 1 {
            vec![1.0]
        } else {
            linalg::stationary_distribution(&self.jump)?
        };
        let weighted: Vec<f64> = embedded
            .iter()
            .zip(&self.sojourn)
            .map(|(nu, s)| s.mean().map(|m| nu * m))
            .collect::<Result<_>>()?;
        let total: f64 = weighted.iter().sum();
        Ok(weighted.into_iter().map(|w| w / total).collect())
    }

    /// The same model with regimes relabelled so that new regime `k` is old
    /// regime `order[k]`.
    pub fn permute_regimes(&self, order: &[usize]) -> Self {
        let d = self.regimes();
        assert_eq!(order.len(), d);
        Self {
            labels: order.iter().map(|&k| self.labels[k].clone()).collect(),
            beta: order.iter().map(|&k| self.beta[k]).collect(),
            jump: DMatrix::from_fn(d, d, |r, c| self.jump[(order[r], order[c])]),
            sojourn: order.iter().map(|&k| self.sojourn[k].clone()).collect(),
            emission: order.iter().map(|&k| self.emission[k].clone()).collect(),
        }
    }

    /// Regime order by ascending emission mean (stable).
    pub fn emission_mean_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.regimes()).collect();
        order.sort_by(|&a, &b| self.emission[a].mean().total_cmp(&self.emission[b].mean()));
        order
    }

    /// Canonical phase order inside every regime.
    pub fn canonical_phases(&self) -> Self {
        let mut m = self.clone();
        m.sojourn = self.sojourn.iter().map(|s| s.canonical()).collect();
        m
    }

    /// Regimes by ascending emission mean, phases canonical.
    pub fn canonical(&self) -> Self {
        self.permute_regimes(&self.emission_mean_order()).canonical_phases()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.regimes() {
            return Err(Error::Dimension {
                what: "regime labels".into(),
                expected: self.regimes(),
                found: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }
}

fn validate_jump(jump: DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if d == 1 && (jump.is_empty() || (jump.shape() == (1, 1) && jump[(0, 0)] == 0.0)) {
        return Ok(DMatrix::zeros(1, 1));
    }
    if jump.shape() != (d, d) {
        return Err(Error::Dimension {
            what: "jump matrix".into(),
            expected: d,
            found: if jump.nrows() != d { jump.nrows() } else { jump.ncols() },
        });
    }
    if d == 1 {
        return Err(Error::invalid("single-regime jump matrix must be [[0]]"));
    }
    let mut out = jump;
    for i in 0..d {
        if out[(i, i)] != 0.0 {
            return Err(Error::invalid(format!(
                "jump[{i}][{i}] = {} but the diagonal must be 0",
                out[(i, i)]
            )));
        }
        let row: Vec<f64> = out.row(i).iter().copied().collect();
        let row = linalg::probability_vector(&row, &format!("jump row {i}"))
            .map_err(|e| Error::invalid(format!("{e} (tolerance {STOCHASTIC_TOL})")))?;
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

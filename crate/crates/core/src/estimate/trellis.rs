//! Scaled forward-backward recursions on the extended chain.
//!
//! The first observation is emitted by the state drawn from the initial
//! law; every later observation follows one transition. Forward rows are
//! normalized to sum to 1 and the normalizers `c_n` are kept, so
//! `log P(y) = sum_n log c_n`. Backward rows share the same normalizers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expand::ExtendedHmm;

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `N x states`; row `n` is `P(X_n | y_0..y_n)`.
    pub forward: DMatrix<f64>,
    pub scale: Vec<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct Trellis {
    pub forward: DMatrix<f64>,
    pub backward: DMatrix<f64>,
    pub scale: Vec<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `gamma[(n, s)] = P(X_n = s | y)`.
    pub gamma: DMatrix<f64>,
    /// `xi[n - 1][(s, t)] = P(X_{n-1} = s, X_n = t | y)` for `n = 1..N`.
    pub xi: Vec<DMatrix<f64>>,
}

/// `g[(n, s)]`: emission mass or density of `obs[n]` in extended state `s`.
pub fn emission_matrix(e: &ExtendedHmm, obs: &[f64]) -> Result<DMatrix<f64>> {
    let n = obs.len();
    let mut g = DMatrix::zeros(n, e.states());
    for i in 0..e.regimes() {
        let law = &e.emissions()[i];
        for (t, &y) in obs.iter().enumerate() {
            let v = law.eval(y)?;
            for s in e.block(i) {
                g[(t, s)] = v;
            }
        }
    }
    Ok(g)
}

fn forward_with(e: &ExtendedHmm, g: &DMatrix<f64>) -> Result<ForwardPass> {
    let n_obs = g.nrows();
    if n_obs == 0 {
        return Err(Error::invalid("empty observation series"));
    }
    let n = e.states();
    let p = e.transition();
    let mut forward = DMatrix::zeros(n_obs, n);
    let mut scale = Vec::with_capacity(n_obs);
    let mut row: Vec<f64> = (0..n).map(|s| e.initial()[s] * g[(0, s)]).collect();
    for t in 0..n_obs {
        if t > 0 {
            row = (0..n)
                .map(|c| {
                    let prior: f64 = (0..n).map(|r| forward[(t - 1, r)] * p[(r, c)]).sum();
                    prior * g[(t, c)]
                })
                .collect();
        }
        let c: f64 = row.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            if c.is_nan() || c.is_infinite() {
                return Err(Error::NonFinite(format!("forward normalizer at step {t}")));
            }
            return Err(Error::ImpossibleObservation { step: t });
        }
        for s in 0..n {
            forward[(t, s)] = row[s] / c;
        }
        scale.push(c);
    }
    let loglik = scale.iter().map(|c| c.ln()).sum();
    Ok(ForwardPass {
        forward,
        scale,
        loglik,
    })
}

pub fn forward_pass(e: &ExtendedHmm, obs: &[f64]) -> Result<ForwardPass> {
    forward_with(e, &emission_matrix(e, obs)?)
}

fn backward_with(e: &ExtendedHmm, g: &DMatrix<f64>, scale: &[f64]) -> Result<DMatrix<f64>> {
    let n_obs = g.nrows();
    if scale.len() != n_obs {
        return Err(Error::Dimension {
            what: "backward scale vector".into(),
            expected: n_obs,
            found: scale.len(),
        });
    }
    let n = e.states();
    let p = e.transition();
    let mut backward = DMatrix::zeros(n_obs, n);
    for s in 0..n {
        backward[(n_obs - 1, s)] = 1.0;
    }
    for t in (0..n_obs.saturating_sub(1)).rev() {
        let next: Vec<f64> = (0..n).map(|c| g[(t + 1, c)] * backward[(t + 1, c)]).collect();
        for r in 0..n {
            let v: f64 = (0..n).map(|c| p[(r, c)] * next[c]).sum();
            backward[(t, r)] = v / scale[t + 1];
        }
    }
    Ok(backward)
}

/// Backward values scaled by the forward normalizers; the last row is 1.
pub fn backward_pass(e: &ExtendedHmm, obs: &[f64], scale: &[f64]) -> Result<DMatrix<f64>> {
    backward_with(e, &emission_matrix(e, obs)?, scale)
}

impl Trellis {
    pub fn compute(e: &ExtendedHmm, obs: &[f64]) -> Result<Self> {
        let g = emission_matrix(e, obs)?;
        let fwd = forward_with(e, &g)?;
        let backward = backward_with(e, &g, &fwd.scale)?;
        Ok(Self {
            forward: fwd.forward,
            backward,
            scale: fwd.scale,
            loglik: fwd.loglik,
        })
    }
}

pub fn posteriors(t: &Trellis, e: &ExtendedHmm, obs: &[f64]) -> Result<Posteriors> {
    let g = emission_matrix(e, obs)?;
    Ok(posteriors_with(t, e, &g))
}

pub(crate) fn posteriors_with(t: &Trellis, e: &ExtendedHmm, g: &DMatrix<f64>) -> Posteriors {
    let n_obs = t.forward.nrows();
    let n = e.states();
    let p = e.transition();
    let mut gamma = t.forward.component_mul(&t.backward);
    for r in 0..n_obs {
        let s: f64 = gamma.row(r).sum();
        if s > 0.0 {
            for c in 0..n {
                gamma[(r, c)] /= s;
            }
        }
    }
    let xi = (1..n_obs)
        .map(|step| {
            let mut m = DMatrix::from_fn(n, n, |r, c| {
                t.forward[(step - 1, r)] * p[(r, c)] * g[(step, c)] * t.backward[(step, c)]
                    / t.scale[step]
            });
            let s = m.sum();
            if s > 0.0 {
                m /= s;
            }
            m
        })
        .collect();
    Posteriors { gamma, xi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::EmissionLaw;
    use crate::expand::expand_model;
    use crate::presets;

    #[test]
    fn single_state_loglik_is_sum_of_log_emissions() {
        let e = ExtendedHmm::new(
            vec!["only".into()],
            vec![1],
            DMatrix::from_element(1, 1, 1.0),
            vec![1.0],
            vec![EmissionLaw::Poisson { lambda: 2.0 }],
        )
        .unwrap();
        let obs = [0.0, 3.0, 1.0, 2.0];
        let t = Trellis::compute(&e, &obs).unwrap();
        let law = EmissionLaw::Poisson { lambda: 2.0 };
        let direct: f64 = obs.iter().map(|&y| law.eval(y).unwrap().ln()).sum();
        assert!((t.loglik - direct).abs() < 1e-12);
        assert!(t.backward.iter().all(|&b| (b - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rows_normalized_and_boundary_ones() {
        let e = expand_model(&presets::two_regime_poisson());
        let obs = [0.0, 5.0, 0.0, 7.0, 0.0, 0.0];
        let t = Trellis::compute(&e, &obs).unwrap();
        for r in 0..obs.len() {
            assert!((t.forward.row(r).sum() - 1.0).abs() < 1e-10);
        }
        assert!(t.backward.row(obs.len() - 1).iter().all(|&b| b == 1.0));
        let total: f64 = t.scale.iter().map(|c| c.ln()).sum();
        assert_eq!(total, t.loglik);
    }

    #[test]
    fn posterior_identities() {
        let e = expand_model(&presets::two_regime_poisson());
        let obs = [0.0, 5.0, 0.0, 7.0, 3.0, 0.0];
        let t = Trellis::compute(&e, &obs).unwrap();
        let post = posteriors(&t, &e, &obs).unwrap();
        for n in 0..obs.len() {
            assert!((post.gamma.row(n).sum() - 1.0).abs() < 1e-10);
        }
        for (k, xi) in post.xi.iter().enumerate() {
            assert!((xi.sum() - 1.0).abs() < 1e-10);
            for r in 0..e.states() {
                assert!((xi.row(r).sum() - post.gamma[(k, r)]).abs() < 1e-10);
            }
            for c in 0..e.states() {
                assert!((xi.column(c).sum() - post.gamma[(k + 1, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn impossible_observation_reports_step() {
        let e = expand_model(&presets::two_regime_poisson());
        let err = forward_pass(&e, &[0.0, 1.5]).unwrap_err();
        assert!(matches!(err, Error::ImpossibleObservation { step: 1 }));
    }

    #[test]
    fn backward_length_mismatch() {
        let e = expand_model(&presets::two_regime_poisson());
        assert!(matches!(
            backward_pass(&e, &[0.0, 1.0], &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }
}

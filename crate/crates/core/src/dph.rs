//! Discrete phase-type distributions.
//!
//! A `DPH(alpha, T)` is the number of steps a discrete-time absorbing chain
//! started from `alpha` spends among its transient phases before absorption.
//! Here it is the law of a regime's sojourn time, so every draw is `>= 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, STOCHASTIC_TOL};
use crate::rng::pick_index;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePhaseType {
    alpha: Vec<f64>,
    t: DMatrix<f64>,
    exit: Vec<f64>,
}

impl DiscretePhaseType {
    /// Validate `(alpha, T)`.
    ///
    /// Rows of `T` whose sum exceeds 1 by less than `1e-12` are scaled back
    /// to 1, as is an `alpha` whose sum is that close to 1. Every phase
    /// reachable from `alpha` must lead to absorption with probability 1.
    pub fn new(alpha: Vec<f64>, t: DMatrix<f64>) -> Result<Self> {
        let f = alpha.len();
        if f == 0 {
            return Err(Error::invalid("phase-type distribution needs at least one phase"));
        }
        if t.nrows() != f || t.ncols() != f {
            return Err(Error::Dimension {
                what: "phase matrix".into(),
                expected: f,
                found: if t.nrows() != f { t.nrows() } else { t.ncols() },
            });
        }
        let alpha = linalg::probability_vector(&alpha, "alpha")?;
        let mut t = t;
        for r in 0..f {
            let mut sum = 0.0;
            for c in 0..f {
                let v = t[(r, c)];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("T[{r}][{c}] = {v}")));
                }
                if v < 0.0 {
                    return Err(Error::invalid(format!("T[{r}][{c}] = {v} is negative")));
                }
                sum += v;
            }
            if sum > 1.0 + STOCHASTIC_TOL {
                return Err(Error::invalid(format!("row {r} of T sums to {sum} > 1")));
            }
            if sum > 1.0 {
                for c in 0..f {
                    t[(r, c)] /= sum;
                }
            }
        }
        let exit: Vec<f64> = (0..f)
            .map(|r| (1.0 - t.row(r).sum()).max(0.0))
            .collect();
        let d = Self { alpha, t, exit };
        d.check_absorption()?;
        Ok(d)
    }

    /// One-phase distribution absorbing after exactly one step.
    pub fn degenerate() -> Self {
        Self {
            alpha: vec![1.0],
            t: DMatrix::zeros(1, 1),
            exit: vec![1.0],
        }
    }

    /// Geometric sojourn on `{1, 2, ...}` with exit probability `p`.
    pub fn geometric(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("geometric exit probability {p} not in (0, 1]")));
        }
        Self::new(vec![1.0], DMatrix::from_element(1, 1, 1.0 - p))
    }

    pub fn phases(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn phase_matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// `T0 = (I - T) e`, the one-step absorption probabilities.
    pub fn exit_vector(&self) -> &[f64] {
        &self.exit
    }

    /// Phases reachable from the support of `alpha`.
    fn reachable(&self) -> Vec<bool> {
        let reach = linalg::reachability(&self.t);
        (0..self.phases())
            .map(|k| (0..self.phases()).any(|s| self.alpha[s] > 0.0 && reach[s][k]))
            .collect()
    }

    fn check_absorption(&self) -> Result<()> {
        let f = self.phases();
        let reach = linalg::reachability(&self.t);
        let reachable = self.reachable();
        for p in 0..f {
            if reachable[p] && !(0..f).any(|k| reach[p][k] && self.exit[k] > 0.0) {
                return Err(Error::Singular(format!(
                    "phase {p} is reachable but never absorbs; (I - T) is singular"
                )));
            }
        }
        Ok(())
    }

    /// Phases with neither initial mass nor exit mass. They are legal (EM can
    /// leave phases unreachable) but contribute nothing to the law.
    pub fn warnings(&self) -> Vec<String> {
        (0..self.phases())
            .filter(|&p| self.alpha[p] == 0.0 && self.exit[p] == 0.0)
            .map(|p| format!("phase {p} has zero initial and zero exit probability"))
            .collect()
    }

    /// `P(tau = n) = alpha T^(n-1) T0`.
    pub fn pmf(&self, n: u64) -> Result<f64> {
        if n < 1 {
            return Err(Error::invalid("sojourn pmf is defined for n >= 1"));
        }
        let mut v = self.alpha.clone();
        for _ in 1..n {
            v = linalg::vec_mat(&v, &self.t);
        }
        Ok(linalg::dot(&v, &self.exit).clamp(0.0, 1.0))
    }

    /// `P(tau <= n) = 1 - alpha T^n e`.
    pub fn cdf(&self, n: u64) -> f64 {
        let mut v = self.alpha.clone();
        for _ in 0..n {
            v = linalg::vec_mat(&v, &self.t);
        }
        (1.0 - v.iter().sum::<f64>()).clamp(0.0, 1.0)
    }

    /// Successive values `pmf(1), pmf(2), ...` by state propagation.
    pub fn pmf_iter(&self) -> impl Iterator<Item = f64> + '_ {
        let mut v = self.alpha.clone();
        std::iter::from_fn(move || {
            let p = linalg::dot(&v, &self.exit);
            v = linalg::vec_mat(&v, &self.t);
            Some(p)
        })
    }

    /// `alpha (I - T)^-1 e`, solved on the phases reachable from `alpha`.
    pub fn mean(&self) -> Result<f64> {
        let live: Vec<usize> = self
            .reachable()
            .iter()
            .enumerate()
            .filter_map(|(k, &r)| r.then_some(k))
            .collect();
        let m = live.len();
        let a = DMatrix::from_fn(m, m, |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            id - self.t[(live[r], live[c])]
        });
        let x = linalg::solve(a, &DVector::from_element(m, 1.0))
            .ok_or_else(|| Error::Singular("(I - T) in sojourn mean".into()))?;
        let mean: f64 = live.iter().zip(x.iter()).map(|(&k, v)| self.alpha[k] * v).sum();
        if !(mean.is_finite() && mean >= 1.0 - 1e-9) {
            return Err(Error::Singular(format!("sojourn mean {mean} is not a valid mean")));
        }
        Ok(mean)
    }

    /// Draw a sojourn by running the phase chain until absorption.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let mut phase = pick_index(rng, &self.alpha);
        let mut steps = 1;
        while let Some(next) = self.step(phase, rng) {
            phase = next;
            steps += 1;
        }
        steps
    }

    /// Initial phase draw.
    pub(crate) fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        pick_index(rng, &self.alpha)
    }

    /// One step of the phase chain from `phase`: the next phase, or `None`
    /// on absorption.
    pub(crate) fn step<R: Rng + ?Sized>(&self, phase: usize, rng: &mut R) -> Option<usize> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for k in 0..self.phases() {
            acc += self.t[(phase, k)];
            if u < acc {
                return Some(k);
            }
        }
        None
    }

    /// Permutation putting phases in canonical order: descending initial
    /// probability, ties broken by descending self-transition probability.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.phases()).collect();
        order.sort_by(|&a, &b| {
            self.alpha[b]
                .total_cmp(&self.alpha[a])
                .then(self.t[(b, b)].total_cmp(&self.t[(a, a)]))
        });
        order
    }

    /// The same law with phases relabelled so that new phase `k` is old
    /// phase `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let f = self.phases();
        assert_eq!(order.len(), f);
        Self {
            alpha: order.iter().map(|&k| self.alpha[k]).collect(),
            t: DMatrix::from_fn(f, f, |r, c| self.t[(order[r], order[c])]),
            exit: order.iter().map(|&k| self.exit[k]).collect(),
        }
    }

    pub fn canonical(&self) -> Self {
        self.permuted(&self.canonical_order())
    }
}

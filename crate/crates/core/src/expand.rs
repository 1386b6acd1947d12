//! Extended regime-phase representation.
//!
//! Pairing each regime with the current phase of its sojourn turns the
//! semi-Markov regime chain into an ordinary Markov chain on
//! `(regime, phase)` states. States are ordered regime-major, phase-minor:
//! state `offset(i) + f` is phase `f` of regime `i`.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::dph::DiscretePhaseType;
use crate::emission::EmissionLaw;
use crate::error::{Error, Result};
use crate::phmodel::PhTypeHmm;

/// Row-sum tolerance of an extended transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Reconstructed entries more negative than this are rejected.
const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedHmm {
    labels: Vec<String>,
    layout: Vec<usize>,
    offsets: Vec<usize>,
    transition: DMatrix<f64>,
    initial: Vec<f64>,
    emission: Vec<EmissionLaw>,
}

impl ExtendedHmm {
    pub fn new(
        labels: Vec<String>,
        layout: Vec<usize>,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
        emission: Vec<EmissionLaw>,
    ) -> Result<Self> {
        let d = layout.len();
        if d == 0 || layout.contains(&0) {
            return Err(Error::invalid(format!("invalid phase layout {layout:?}")));
        }
        for (what, found) in [("regime labels", labels.len()), ("emission laws", emission.len())] {
            if found != d {
                return Err(Error::Dimension {
                    what: what.into(),
                    expected: d,
                    found,
                });
            }
        }
        let n: usize = layout.iter().sum();
        if transition.shape() != (n, n) {
            return Err(Error::Dimension {
                what: "extended transition matrix".into(),
                expected: n,
                found: transition.nrows(),
            });
        }
        if initial.len() != n {
            return Err(Error::Dimension {
                what: "extended initial law".into(),
                expected: n,
                found: initial.len(),
            });
        }
        for r in 0..n {
            let mut sum = 0.0;
            for c in 0..n {
                let v = transition[(r, c)];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("extended P[{r}][{c}] = {v}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("extended row {r} sums to {sum}")));
            }
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(format!("extended initial law sums to {total}")));
        }
        Ok(Self::from_parts(labels, layout, transition, initial, emission))
    }

    pub(crate) fn from_parts(
        labels: Vec<String>,
        layout: Vec<usize>,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
        emission: Vec<EmissionLaw>,
    ) -> Self {
        let offsets = layout
            .iter()
            .scan(0, |acc, &f| {
                let o = *acc;
                *acc += f;
                Some(o)
            })
            .collect();
        Self {
            labels,
            layout,
            offsets,
            transition,
            initial,
            emission,
        }
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn regimes(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn regime_labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn emissions(&self) -> &[EmissionLaw] {
        &self.emission
    }

    /// Emission law of an extended state; shared by all phases of a regime.
    pub fn state_emission(&self, state: usize) -> &EmissionLaw {
        &self.emission[self.regime_of(state)]
    }

    /// State indices of regime `i`.
    pub fn block(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.layout[i]
    }

    pub fn regime_of(&self, state: usize) -> usize {
        match self.offsets.binary_search(&state) {
            Ok(i) => {
                // skip empty blocks is impossible; layout entries are >= 1
                i
            }
            Err(i) => i - 1,
        }
    }

    /// `(regime, phase)` pair of an extended state.
    pub fn state_label(&self, state: usize) -> (usize, usize) {
        let i = self.regime_of(state);
        (i, state - self.offsets[i])
    }

    /// Sum a distribution over extended states into regime masses.
    pub fn regime_mass(&self, dist: &[f64]) -> Vec<f64> {
        (0..self.regimes())
            .map(|i| dist[self.block(i)].iter().sum())
            .collect()
    }

    pub(crate) fn set_transition(&mut self, p: DMatrix<f64>) {
        self.transition = p;
    }

    pub(crate) fn set_initial(&mut self, v: Vec<f64>) {
        self.initial = v;
    }

    pub(crate) fn set_emissions(&mut self, e: Vec<EmissionLaw>) {
        self.emission = e;
    }

    /// Relabel regimes (new regime `k` is old `regime_order[k]`) and phases
    /// within each new regime `k` (new phase `f` is old `phase_orders[k][f]`).
    pub fn permuted(&self, regime_order: &[usize], phase_orders: &[Vec<usize>]) -> Self {
        let old_states: Vec<usize> = regime_order
            .iter()
            .zip(phase_orders)
            .flat_map(|(&i, phases)| phases.iter().map(move |&f| (i, f)))
            .map(|(i, f)| self.offsets[i] + f)
            .collect();
        let n = self.states();
        Self::from_parts(
            regime_order.iter().map(|&i| self.labels[i].clone()).collect(),
            regime_order.iter().map(|&i| self.layout[i]).collect(),
            DMatrix::from_fn(n, n, |r, c| self.transition[(old_states[r], old_states[c])]),
            old_states.iter().map(|&s| self.initial[s]).collect(),
            regime_order.iter().map(|&i| self.emission[i].clone()).collect(),
        )
    }
}

/// Build the extended chain: diagonal block `i` is `T_i`, block `(i, j)` is
/// `T_i^0 (p_ij alpha_j)`, and the initial law is `(beta_i alpha_i)_i`.
/// A single regime renews in place, so its block is `T + T^0 alpha`.
pub fn expand_model(m: &PhTypeHmm) -> ExtendedHmm {
    let layout = m.layout();
    let n: usize = layout.iter().sum();
    let d = m.regimes();
    let mut ext = ExtendedHmm::from_parts(
        m.labels().to_vec(),
        layout,
        DMatrix::zeros(n, n),
        vec![0.0; n],
        m.emissions().to_vec(),
    );
    let mut p = DMatrix::zeros(n, n);
    let mut initial = vec![0.0; n];
    for i in 0..d {
        let si = m.sojourn(i);
        let bi = ext.block(i);
        for (f, r) in bi.clone().enumerate() {
            initial[r] = m.beta()[i] * si.alpha()[f];
            for (k, c) in bi.clone().enumerate() {
                p[(r, c)] = si.phase_matrix()[(f, k)];
            }
            let exit = si.exit_vector()[f];
            if d == 1 {
                for (k, c) in bi.clone().enumerate() {
                    p[(r, c)] += exit * si.alpha()[k];
                }
                continue;
            }
            for j in (0..d).filter(|&j| j != i) {
                let pij = m.jump()[(i, j)];
                for (k, c) in ext.block(j).enumerate() {
                    p[(r, c)] = exit * pij * m.sojourn(j).alpha()[k];
                }
            }
        }
    }
    ext.set_transition(p);
    ext.set_initial(initial);
    ext
}

/// Recover `(beta, p_ij, alpha_j, T_j)` from an extended chain.
///
/// `T_i` is read off the diagonal block. Each off-diagonal block should be
/// the rank-1 product `T_i^0 (p_ij alpha_j)`; `p_ij` is taken proportional
/// to the block's total mass, and `alpha_j` proportional to the column sums
/// pooled over every block entering regime `j`. Both are exact for rank-1
/// blocks and remain well defined when estimation noise breaks the rank.
///
/// A single regime cannot separate `T` from `T^0 alpha`; its sojourn is
/// reported as `alpha` = normalized initial law, `T = 0`.
pub fn collapse_parameters(e: &ExtendedHmm) -> Result<PhTypeHmm> {
    let d = e.regimes();
    let p = e.transition();
    let n = e.states();
    for r in 0..n {
        for c in 0..n {
            if p[(r, c)] < -NEGATIVE_TOL {
                return Err(Error::invalid(format!(
                    "negative extended entry P[{r}][{c}] = {}",
                    p[(r, c)]
                )));
            }
        }
    }
    let beta = e.regime_mass(e.initial());

    if d == 1 {
        let alpha = e.initial().to_vec();
        let f = alpha.len();
        let sojourn = DiscretePhaseType::new(alpha, DMatrix::zeros(f, f))?;
        return PhTypeHmm::new(
            e.regime_labels().to_vec(),
            vec![1.0],
            DMatrix::zeros(1, 1),
            vec![sojourn],
            e.emissions().to_vec(),
        );
    }

    // Column masses entering each regime, pooled over source regimes.
    let mut entry_mass: Vec<Vec<f64>> = e.layout().iter().map(|&f| vec![0.0; f]).collect();
    let mut jump = DMatrix::zeros(d, d);
    let mut phase_blocks = Vec::with_capacity(d);
    for i in 0..d {
        let bi = e.block(i);
        let fi = bi.len();
        let t = DMatrix::from_fn(fi, fi, |f, k| p[(bi.start + f, bi.start + k)].max(0.0));
        for (f, r) in bi.clone().enumerate() {
            let exit = 1.0 - t.row(f).sum();
            let off: f64 = (0..n)
                .filter(|c| !bi.contains(c))
                .map(|c| p[(r, c)].max(0.0))
                .sum();
            if (exit - off).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "extended row {r}: exit mass {exit} disagrees with off-block mass {off}"
                )));
            }
        }
        let mut total = 0.0;
        for j in (0..d).filter(|&j| j != i) {
            let bj = e.block(j);
            let mut mass = 0.0;
            for r in bi.clone() {
                for (k, c) in bj.clone().enumerate() {
                    let v = p[(r, c)].max(0.0);
                    mass += v;
                    entry_mass[j][k] += v;
                }
            }
            jump[(i, j)] = mass;
            total += mass;
        }
        if total <= 0.0 {
            return Err(Error::invalid(format!(
                "regime {i} never leaves: its exit vector is zero"
            )));
        }
        for j in 0..d {
            jump[(i, j)] /= total;
        }
        phase_blocks.push(t);
    }

    let mut sojourn = Vec::with_capacity(d);
    for (j, t) in phase_blocks.into_iter().enumerate() {
        let mass: f64 = entry_mass[j].iter().sum();
        let alpha = if mass > 0.0 {
            entry_mass[j].iter().map(|v| v / mass).collect()
        } else {
            // never entered: fall back to the initial law of the block
            let init = &e.initial()[e.block(j)];
            let s: f64 = init.iter().sum();
            if s > 0.0 {
                init.iter().map(|v| v / s).collect()
            } else {
                let f = init.len();
                vec![1.0 / f as f64; f]
            }
        };
        sojourn.push(
            DiscretePhaseType::new(alpha, t)
                .map_err(|err| Error::invalid(format!("sojourn of regime {j}: {err}")))?,
        );
    }
    PhTypeHmm::new(
        e.regime_labels().to_vec(),
        beta,
        jump,
        sojourn,
        e.emissions().to_vec(),
    )
}

//! Moran storage chain driven by the stationary inflow law, and the
//! dependability measures built on it.
//!
//! State `k` means the stored volume covers the release `omega` for at least
//! `k` more years; state 0 is empty (failure). The top state absorbs every
//! level above it. From state `r >= 1` the level can drop by at most one per
//! year, so the matrix is zero strictly below the first subdiagonal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expand::ExtendedHmm;
use crate::linalg;

/// Default upper edge of the "effectively zero" inflow band for densities.
pub const DEFAULT_ZERO_BAND: f64 = 1.0;

/// Inflow probabilities binned on the release grid.
///
/// `zero` is the zero band, `bands[k]` is `P(k w < Y <= (k+1) w)` (band 0
/// starting above the zero band) and `tail` is `P(Y > K w)` with
/// `K = bands.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowLaw {
    pub zero: f64,
    pub bands: Vec<f64>,
    pub tail: f64,
}

impl InflowLaw {
    pub fn new(zero: f64, bands: Vec<f64>, tail: f64) -> Result<Self> {
        let all = std::iter::once(zero).chain(bands.iter().copied()).chain([tail]);
        let mut total = 0.0;
        for p in all {
            if !(p >= 0.0) {
                return Err(Error::invalid(format!("negative inflow bin probability {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("inflow bins sum to {total}")));
        }
        Ok(Self { zero, bands, tail })
    }

    /// `P(Y > k w)` for `k >= 0`, excluding nothing below.
    fn above(&self, k: usize) -> f64 {
        self.bands.iter().skip(k).sum::<f64>() + self.tail
    }

    pub fn total(&self) -> f64 {
        self.zero + self.bands.iter().sum::<f64>() + self.tail
    }
}

/// Stationary law of the extended chain.
pub fn stationary_law(e: &ExtendedHmm) -> Result<Vec<f64>> {
    linalg::stationary_distribution(e.transition())
}

/// Stationary mixture of the regime emission laws, binned on `omega` with
/// `n_bands` finite bands. For density laws the zero band is
/// `Y < zero_band`; for discrete laws it is `Y = 0`.
pub fn marginal_inflow_law(
    e: &ExtendedHmm,
    omega: f64,
    n_bands: usize,
    zero_band: f64,
) -> Result<InflowLaw> {
    if !(omega > 0.0) {
        return Err(Error::invalid("release must be positive"));
    }
    if !(zero_band >= 0.0 && zero_band <= omega) {
        return Err(Error::invalid(format!(
            "zero band edge {zero_band} must lie in [0, {omega}]"
        )));
    }
    let mass = e.regime_mass(&stationary_law(e)?);
    let mut zero = 0.0;
    let mut bands = vec![0.0; n_bands];
    for (law, w) in e.emissions().iter().zip(&mass) {
        let z = if law.is_density() {
            law.cdf(zero_band)
        } else {
            law.cdf(0.0)
        };
        zero += w * z;
        let mut prev = z;
        for (k, b) in bands.iter_mut().enumerate() {
            let next = law.cdf((k + 1) as f64 * omega);
            *b += w * (next - prev).max(0.0);
            prev = next;
        }
    }
    let tail = (1.0 - zero - bands.iter().sum::<f64>()).max(0.0);
    InflowLaw::new(zero, bands, tail)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoranChain {
    omega: f64,
    capacity: f64,
    matrix: DMatrix<f64>,
}

/// Number of states before merging: `floor(C / w) + 1`.
pub fn full_state_count(omega: f64, capacity: f64) -> usize {
    (capacity / omega).floor() as usize + 1
}

/// Assemble the Moran matrix from a binned law. The law must carry exactly
/// `states - 1` bands, where `states` is `floor(C / w) + 1` capped by
/// `max_states`; the top state pools every level above it.
pub fn moran_build(
    law: &InflowLaw,
    omega: f64,
    capacity: f64,
    max_states: Option<usize>,
) -> Result<MoranChain> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::invalid("release must be positive and finite"));
    }
    if !(capacity >= omega) || !capacity.is_finite() {
        return Err(Error::invalid("capacity must be finite and at least the release"));
    }
    let mut s = full_state_count(omega, capacity);
    if let Some(k) = max_states {
        if k < 2 {
            return Err(Error::invalid("max_states must be at least 2"));
        }
        s = s.min(k);
    }
    if law.bands.len() != s - 1 {
        return Err(Error::Dimension {
            what: "inflow bands".into(),
            expected: s - 1,
            found: law.bands.len(),
        });
    }
    let mut p = DMatrix::zeros(s, s);
    p[(0, 0)] = law.zero + law.bands[0];
    for c in 1..s - 1 {
        p[(0, c)] = law.bands[c];
    }
    p[(0, s - 1)] = law.tail;
    for r in 1..s {
        p[(r, r - 1)] = law.zero;
        for c in r..s - 1 {
            p[(r, c)] = law.bands[c - r];
        }
        p[(r, s - 1)] += law.above(s - 1 - r);
    }
    MoranChain::from_matrix(omega, capacity, p)
}

/// Stationary inflow law of `e` binned for the chain and assembled.
pub fn moran_from_model(
    e: &ExtendedHmm,
    omega: f64,
    capacity: f64,
    max_states: Option<usize>,
    zero_band: f64,
) -> Result<MoranChain> {
    let mut s = full_state_count(omega, capacity);
    if let Some(k) = max_states {
        s = s.min(k.max(2));
    }
    let law = marginal_inflow_law(e, omega, s - 1, zero_band)?;
    moran_build(&law, omega, capacity, max_states)
}

impl MoranChain {
    /// Wrap an explicit matrix (for instance a reference fixture). Rows must be
    /// stochastic and the band structure must hold.
    pub fn from_matrix(omega: f64, capacity: f64, matrix: DMatrix<f64>) -> Result<Self> {
        let s = matrix.nrows();
        if s < 2 || matrix.ncols() != s {
            return Err(Error::Dimension {
                what: "Moran matrix".into(),
                expected: s.max(2),
                found: matrix.ncols(),
            });
        }
        for r in 0..s {
            let mut sum = 0.0;
            for c in 0..s {
                let v = matrix[(r, c)];
                if !(v >= 0.0) {
                    return Err(Error::invalid(format!("Moran entry ({r},{c}) = {v}")));
                }
                if c + 1 < r && v != 0.0 {
                    return Err(Error::invalid(format!(
                        "Moran entry ({r},{c}) breaks the band structure"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("Moran row {r} sums to {sum}")));
            }
        }
        Ok(Self {
            omega,
            capacity,
            matrix,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn check_state(&self, v: usize) -> Result<()> {
        if v >= self.states() {
            return Err(Error::invalid(format!(
                "state {v} outside 0..{}",
                self.states()
            )));
        }
        Ok(())
    }

    fn check_non_empty(&self, v: usize) -> Result<()> {
        self.check_state(v)?;
        if v == 0 {
            return Err(Error::invalid("state 0 is the empty state"));
        }
        Ok(())
    }

    /// `R_v(n)` for `n = 0..=horizon`: survival with empty absorbing.
    pub fn reliability_curve(&self, v: usize, horizon: usize) -> Result<Vec<f64>> {
        self.check_non_empty(v)?;
        let s = self.states();
        let mut dist = vec![0.0; s];
        dist[v] = 1.0;
        let mut out = Vec::with_capacity(horizon + 1);
        for n in 0..=horizon {
            out.push(dist[1..].iter().sum());
            if n < horizon {
                dist[0] = 0.0;
                dist = linalg::vec_mat(&dist, &self.matrix);
            }
        }
        Ok(out)
    }

    pub fn reliability(&self, v: usize, n: usize) -> Result<f64> {
        Ok(self.reliability_curve(v, n)?[n])
    }

    /// `A_v(n)` for `n = 0..=horizon`: non-empty mass under the full chain.
    pub fn availability_curve(&self, v: usize, horizon: usize) -> Result<Vec<f64>> {
        self.check_state(v)?;
        let mut dist = vec![0.0; self.states()];
        dist[v] = 1.0;
        let mut out = Vec::with_capacity(horizon + 1);
        for n in 0..=horizon {
            out.push(1.0 - dist[0]);
            if n < horizon {
                dist = linalg::vec_mat(&dist, &self.matrix);
            }
        }
        Ok(out)
    }

    pub fn availability(&self, v: usize, n: usize) -> Result<f64> {
        Ok(self.availability_curve(v, n)?[n])
    }

    /// Mean time to empty from `v`, `1_v (I - P_0)^-1 e`.
    pub fn mttf(&self, v: usize) -> Result<f64> {
        self.check_non_empty(v)?;
        let s = self.states();
        let reach = linalg::reachability(&self.matrix);
        let mut restricted = self.matrix.clone();
        for c in 0..s {
            restricted[(0, c)] = 0.0;
        }
        let from_v = linalg::reachability(&restricted);
        let live: Vec<usize> = (1..s).filter(|&t| t == v || from_v[v][t]).collect();
        if let Some(&trap) = live.iter().find(|&&t| !reach[t][0]) {
            return Err(Error::Singular(format!(
                "empty state unreachable from state {trap}; MTTF from {v} is infinite"
            )));
        }
        let m = live.len();
        let a = DMatrix::from_fn(m, m, |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            id - self.matrix[(live[r], live[c])]
        });
        let x = linalg::solve(a, &DVector::from_element(m, 1.0))
            .ok_or_else(|| Error::Singular("fundamental matrix".into()))?;
        let k = live.iter().position(|&t| t == v).expect("v is live");
        Ok(x[k])
    }

    /// Mean time to empty as `sum_n n (R(n-1) - R(n))`, truncated once the
    /// survival mass falls below `tol`.
    pub fn mttf_series(&self, v: usize, tol: f64, max_terms: usize) -> Result<f64> {
        self.check_non_empty(v)?;
        let s = self.states();
        // Row-major copy of the live block; the empty state is absorbing.
        let live: Vec<f64> = (1..s)
            .flat_map(|r| (1..s).map(move |c| (r, c)))
            .map(|(r, c)| self.matrix[(r, c)])
            .collect();
        let m = s - 1;
        let mut dist = vec![0.0; m];
        let mut next = vec![0.0; m];
        dist[v - 1] = 1.0;
        let mut prev = 1.0;
        let mut total = 0.0;
        for n in 1..=max_terms {
            next.fill(0.0);
            for (r, &mass) in dist.iter().enumerate() {
                if mass != 0.0 {
                    for (acc, p) in next.iter_mut().zip(&live[r * m..(r + 1) * m]) {
                        *acc += mass * p;
                    }
                }
            }
            std::mem::swap(&mut dist, &mut next);
            let r: f64 = dist.iter().sum();
            total += n as f64 * (prev - r);
            prev = r;
            if r < tol {
                return Ok(total);
            }
        }
        Err(Error::NonFinite(format!(
            "MTTF series from state {v} did not converge in {max_terms} terms"
        )))
    }

    /// Dependability table for every state: `(v, n, R_v(n), A_v(n))` for
    /// `n = 0..=horizon`. Reliability is `None` for the empty state.
    pub fn dependability(&self, horizon: usize) -> Result<Vec<DependabilityRow>> {
        let mut rows = Vec::new();
        for v in 0..self.states() {
            let a = self.availability_curve(v, horizon)?;
            let r = if v == 0 {
                None
            } else {
                Some(self.reliability_curve(v, horizon)?)
            };
            for n in 0..=horizon {
                rows.push(DependabilityRow {
                    state: v,
                    step: n,
                    reliability: r.as_ref().map(|r| r[n]),
                    availability: a[n],
                });
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependabilityRow {
    pub state: usize,
    pub step: usize,
    pub reliability: Option<f64>,
    pub availability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditEntry {
    /// Index `n >= 1` into the series.
    pub index: usize,
    pub computed: f64,
    /// Recorded volume at `n`; absent past the end of the record.
    pub recorded: Option<f64>,
    pub discrepancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceAudit {
    pub capacity: f64,
    pub entries: Vec<AuditEntry>,
}

impl BalanceAudit {
    /// Entries sorted by descending absolute discrepancy.
    pub fn largest(&self, k: usize) -> Vec<AuditEntry> {
        let mut e: Vec<AuditEntry> = self
            .entries
            .iter()
            .filter(|a| a.discrepancy.is_some())
            .copied()
            .collect();
        e.sort_by(|a, b| {
            let da = a.discrepancy.unwrap_or(0.0).abs();
            let db = b.discrepancy.unwrap_or(0.0).abs();
            db.total_cmp(&da).then(a.index.cmp(&b.index))
        });
        e.truncate(k);
        e
    }
}

/// Recompute `V_n = min(max(0, V_{n-1} + Y_{n-1} - O_{n-1}), C)` from the
/// recorded previous volume and compare with the record.
///
/// `recorded[n]` is the stored volume at the start of year `n`; it has the
/// same length as the flow series or one more. Entry `n` runs over
/// `1..=N`, the last one lacking a record when `recorded` has length `N`.
pub fn balance_audit(
    recorded: &[f64],
    inflows: &[f64],
    outflows: &[f64],
    capacity: f64,
) -> Result<BalanceAudit> {
    let n = inflows.len();
    if outflows.len() != n {
        return Err(Error::Dimension {
            what: "outflow series".into(),
            expected: n,
            found: outflows.len(),
        });
    }
    if recorded.len() != n && recorded.len() != n + 1 {
        return Err(Error::Dimension {
            what: "recorded volume series".into(),
            expected: n,
            found: recorded.len(),
        });
    }
    if !(capacity > 0.0) {
        return Err(Error::invalid("capacity must be positive"));
    }
    for (what, series) in [("inflow", inflows), ("outflow", outflows)] {
        if let Some(k) = series.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::invalid(format!(
                "{what} at index {k} is {}",
                series[k]
            )));
        }
    }
    if let Some(k) = recorded.iter().position(|v| !(*v >= 0.0 && *v <= capacity)) {
        return Err(Error::invalid(format!(
            "recorded volume at index {k} is {} outside [0, {capacity}]",
            recorded[k]
        )));
    }
    let entries = (1..=n)
        .filter(|&k| k - 1 < recorded.len())
        .map(|k| {
            let computed = (recorded[k - 1] + inflows[k - 1] - outflows[k - 1]).clamp(0.0, capacity);
            let rec = recorded.get(k).copied();
            AuditEntry {
                index: k,
                computed,
                recorded: rec,
                discrepancy: rec.map(|r| computed - r),
            }
        })
        .collect();
    Ok(BalanceAudit { capacity, entries })
}

#![allow(dead_code)]

use nalgebra::DMatrix;
use phreservoir::ExtendedHmm;

/// Joint probability of every hidden path, summed by enumeration.
/// Returns the likelihood and the smoothed state marginals.
pub fn enumerate(e: &ExtendedHmm, obs: &[f64]) -> (f64, DMatrix<f64>) {
    let s = e.states();
    let n = obs.len();
    let p = e.transition();
    let g: Vec<Vec<f64>> = obs
        .iter()
        .map(|&y| (0..s).map(|k| e.state_emission(k).eval(y).unwrap()).collect())
        .collect();
    let mut total = 0.0;
    let mut marg = DMatrix::zeros(n, s);
    let mut path = vec![0usize; n];
    let count = s.pow(n as u32);
    for code in 0..count {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % s;
            c /= s;
        }
        let mut w = e.initial()[path[0]] * g[0][path[0]];
        for t in 1..n {
            if w == 0.0 {
                break;
            }
            w *= p[(path[t - 1], path[t])] * g[t][path[t]];
        }
        if w == 0.0 {
            continue;
        }
        total += w;
        for (t, &k) in path.iter().enumerate() {
            marg[(t, k)] += w;
        }
    }
    (total, marg / total)
}

/// Random banded Moran-shaped chain: row 0 spreads over the first columns,
/// row r moves down at most one level and up arbitrarily.
/// The down step is weighted so emptying stays reachable in practice.
pub fn random_banded(rng: &mut impl rand::Rng, s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    for r in 0..s {
        let lo = r.saturating_sub(1);
        let mut total = 0.0;
        for c in lo..s {
            let mut w: f64 = rng.random::<f64>() + 0.01;
            if c + 1 == r {
                // balance the down step against the upward spread
                w *= (s - r) as f64;
            }
            m[(r, c)] = w;
            total += w;
        }
        for c in lo..s {
            m[(r, c)] /= total;
        }
    }
    m
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn max_abs_slice(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Upper chi-square tail probability via statrs.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> (f64, usize) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let df = observed.len() - 1;
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (p, df)
}

/// Merge the tail of a pmf so every cell expects at least `min` counts.
/// Returns `(observed, expected)` cell totals; the last cell is the tail.
pub fn pooled_cells(counts: &[f64], pmf: &[f64], total: f64, min: f64) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut k = 0;
    let mut mass_left = 1.0;
    while k < pmf.len() && pmf[k] * total >= min && (mass_left - pmf[k]) * total >= min {
        obs.push(counts.get(k).copied().unwrap_or(0.0));
        exp.push(pmf[k] * total);
        mass_left -= pmf[k];
        k += 1;
    }
    let rest: f64 = counts.iter().skip(k).sum();
    obs.push(rest);
    exp.push(mass_left * total);
    (obs, exp)
}

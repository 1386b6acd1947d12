//! Small dense helpers shared by the chain computations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on stochasticity constraints of user-supplied parameters.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Deviations below this are left alone, so renormalization is idempotent.
const RENORMALIZE_FLOOR: f64 = 1e-14;

/// Validate a probability vector, renormalizing it when its sum is off by
/// less than [`STOCHASTIC_TOL`].
pub fn probability_vector(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    for (k, &p) in values.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("{what}[{k}] = {p}")));
        }
        if p < 0.0 {
            return Err(Error::invalid(format!("{what}[{k}] = {p} is negative")));
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    if (sum - 1.0).abs() > RENORMALIZE_FLOOR {
        Ok(values.iter().map(|p| p / sum).collect())
    } else {
        Ok(values.to_vec())
    }
}

/// Row vector times matrix.
pub fn vec_mat(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    debug_assert_eq!(v.len(), m.nrows());
    (0..m.ncols())
        .map(|c| v.iter().enumerate().map(|(r, x)| x * m[(r, c)]).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `a x = b` by LU, `None` when `a` is numerically singular.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.lu();
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Transitive closure of the positive-entry graph of `m` (reflexive).
pub fn reachability(m: &DMatrix<f64>) -> Vec<Vec<bool>> {
    let n = m.nrows();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || m[(i, j)] > 0.0).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            if i != k && reach[i][k] {
                let via = reach[k].clone();
                for (dst, &r) in reach[i].iter_mut().zip(&via) {
                    *dst |= r;
                }
            }
        }
    }
    reach
}

/// Recurrent communicating classes of a stochastic matrix, each sorted.
pub fn recurrent_classes(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let reach = reachability(m);
    let recurrent: Vec<bool> = (0..n)
        .map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    let mut seen = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n {
        if recurrent[i] && !seen[i] {
            let class: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
            for &j in &class {
                seen[j] = true;
            }
            classes.push(class);
        }
    }
    classes
}

/// Stationary law of a row-stochastic matrix with a single recurrent class,
/// by a direct solve of `pi (P - I) = 0, sum(pi) = 1` on that class.
/// Transient states get zero mass.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    if n != p.ncols() {
        return Err(Error::Dimension {
            what: "transition matrix columns".into(),
            expected: n,
            found: p.ncols(),
        });
    }
    let classes = recurrent_classes(p);
    if classes.len() != 1 {
        return Err(Error::Reducible(format!(
            "{} recurrent classes {:?}; the stationary law is not unique",
            classes.len(),
            classes
        )));
    }
    let class = &classes[0];
    let m = class.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (r, &i) in class.iter().enumerate() {
        for (c, &j) in class.iter().enumerate() {
            // transpose of (P - I)
            a[(c, r)] = p[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for c in 0..m {
        a[(m - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let x = solve(a, &b).ok_or_else(|| Error::Singular("stationary system".into()))?;
    let mut pi = vec![0.0; n];
    for (r, &i) in class.iter().enumerate() {
        pi[i] = x[r].max(0.0);
    }
    let s: f64 = pi.iter().sum();
    Ok(pi.into_iter().map(|v| v / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_state_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let pi = stationary_distribution(&p).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-14 && (pi[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn absorbing_state_takes_all_mass() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.0, 0.0, 1.0]);
        let pi = stationary_distribution(&p).unwrap();
        assert_eq!(pi, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn periodic_chain_has_unique_law() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let pi = stationary_distribution(&p).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_closed_classes_rejected() {
        let p = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(stationary_distribution(&p), Err(Error::Reducible(_))));
    }

    #[test]
    fn renormalization_is_idempotent() {
        let v = probability_vector(&[0.3, 0.7 + 5e-13], "v").unwrap();
        let w = probability_vector(&v, "v").unwrap();
        assert_eq!(v, w);
        assert!(probability_vector(&[0.3, 0.8], "v").is_err());
        assert!(probability_vector(&[-0.1, 1.1], "v").is_err());
    }
}

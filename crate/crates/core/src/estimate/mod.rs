//! Maximum-likelihood estimation of the extended HMM.

pub mod em;
pub mod trellis;

pub use em::{fit, m_step, EmissionFamily, FitConfig, FitReport, MStep};
pub use trellis::{
    backward_pass, emission_matrix, forward_pass, posteriors, ForwardPass, Posteriors, Trellis,
};

/// Akaike information criterion, `-2 loglik + 2k`.
pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

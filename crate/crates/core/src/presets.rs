//! Built-in models.

use nalgebra::DMatrix;

use crate::dph::DiscretePhaseType;
use crate::emission::EmissionLaw;
use crate::error::{Error, Result};
use crate::phmodel::PhTypeHmm;

pub const PRESET_NAMES: [&str; 2] = ["two-regime-poisson", "three-regime-exponential"];

pub fn by_name(name: &str) -> Result<PhTypeHmm> {
    match name {
        "two-regime-poisson" => Ok(two_regime_poisson()),
        "three-regime-exponential" => Ok(three_regime_exponential()),
        other => Err(Error::Usage(format!(
            "unknown preset {other:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Two alternating regimes with two-phase sojourns: regime 1 emits only 0,
/// regime 2 emits Poisson(5) counts.
pub fn two_regime_poisson() -> PhTypeHmm {
    let tau1 = DiscretePhaseType::new(
        vec![0.5, 0.5],
        DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.3, 0.5]),
    )
    .expect("preset sojourn");
    let tau2 = DiscretePhaseType::new(
        vec![0.5, 0.5],
        DMatrix::from_row_slice(2, 2, &[0.3, 0.3, 0.2, 0.5]),
    )
    .expect("preset sojourn");
    PhTypeHmm::new(
        vec!["dry".into(), "wet".into()],
        vec![0.6, 0.4],
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        vec![tau1, tau2],
        vec![
            EmissionLaw::Degenerate { value: 0.0 },
            EmissionLaw::Poisson { lambda: 5.0 },
        ],
    )
    .expect("preset model")
}

/// Drought -> dry -> wet cycle with exponential annual inflows (hm3):
/// a one-year drought, a two-phase dry spell and a geometric wet spell.
pub fn three_regime_exponential() -> PhTypeHmm {
    let dry = DiscretePhaseType::new(
        vec![1.0, 0.0],
        DMatrix::from_row_slice(2, 2, &[0.2651, 0.7349, 0.0, 0.2254]),
    )
    .expect("preset sojourn");
    PhTypeHmm::new(
        vec!["drought".into(), "dry".into(), "wet".into()],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
        vec![
            DiscretePhaseType::degenerate(),
            dry,
            DiscretePhaseType::geometric(0.0457).expect("preset sojourn"),
        ],
        vec![
            EmissionLaw::Exponential { rate: 6.006 },
            EmissionLaw::Exponential { rate: 0.626 },
            EmissionLaw::Exponential { rate: 0.071 },
        ],
    )
    .expect("preset model")
}

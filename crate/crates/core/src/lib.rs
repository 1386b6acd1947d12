//! Hidden phase-type Markov models for reservoir inflows.
//!
//! Regimes (drought, dry, wet, ...) follow a semi-Markov chain whose
//! sojourns are discrete phase-type; each year's inflow is drawn from the
//! current regime's law. The model is estimated by EM on the equivalent
//! regime-phase HMM, and its stationary inflow law drives a Moran storage
//! chain for reliability, availability and mean time to failure.

// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dph;
pub mod emission;
pub mod error;
pub mod estimate;
pub mod expand;
pub mod io;
pub mod linalg;
pub mod phmodel;
pub mod presets;
pub mod reservoir;
pub mod rng;
pub mod simulate;
#[doc(hidden)]
pub mod testing;

pub use dph::DiscretePhaseType;
pub use emission::EmissionLaw;
pub use error::{Error, Result};
pub use expand::{collapse_parameters, expand_model, ExtendedHmm};
pub use phmodel::PhTypeHmm;

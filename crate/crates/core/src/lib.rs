//! Phase estimation with one-axis-twisted coherent spin states under
//! collisional dephasing.
//!
//! The crate evaluates the closed-form moments of the dephased twisted state
//! ([`moments`]), checks them against a dense Dicke-basis reference
//! ([`oracle`]), turns them into error-propagation phase sensitivities
//! ([`sensitivity`]) and locates optimal operating points and scaling
//! exponents ([`optimizer`]). [`cli`] and [`dataset`] drive the command-line
//! front end.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod moments;
pub mod optimizer;
pub mod oracle;
pub mod params;
pub mod sensitivity;

pub use error::{Error, Result};
pub use moments::{MomentSet, SlopeMode, TransverseStats};
pub use optimizer::{Branch, OptimizerOptions, OptimumReport, SearchWindow};
pub use params::{Axis, ProtocolParams, SpinEnsemble};
pub use sensitivity::{Eq9Mode, Estimate, SensitivityKind, SensitivityOptions, SensitivityPoint};

//! Choquet integral as an explicit, trainable network.
//!
//! * [`measure`]: fuzzy measures, validation, Möbius/zeta transforms.
//! * [`integral`]: sorted, Möbius, k-additive, max/min and selection-network evaluators.
//! * [`ichimp`]: raw weights that materialize a monotone measure, the integrand network, forward pass.
//! * [`training`]: squared-error gradients, SGD, finite-difference checks.
//! * [`xai`]: Shapley and interaction indices, operator distances, data-support statistics.
//! * [`harness`]: synthetic data, the recovery experiment, decision-level fusion.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod error;
pub mod harness;
pub mod ichimp;
pub mod integral;
pub mod measure;
pub mod scalar;
pub mod training;
pub mod xai;

pub use error::{ChimpError, Result};
pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type FuzzyMeasure64 = measure::FuzzyMeasure<f64>;
pub type FuzzyMeasure32 = measure::FuzzyMeasure<f32>;
pub type MobiusMeasure64 = measure::MobiusMeasure<f64>;
pub type MobiusMeasure32 = measure::MobiusMeasure<f32>;
pub type ChimpParams64 = ichimp::ChimpParams<f64>;
pub type ChimpParams32 = ichimp::ChimpParams<f32>;
pub type MaterializedMeasure64 = ichimp::MaterializedMeasure<f64>;
pub type GradientBundle64 = training::GradientBundle<f64>;
pub type XaiReport64 = xai::XaiReport<f64>;

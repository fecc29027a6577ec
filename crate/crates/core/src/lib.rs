//! Functional-targeted central subspaces: MAVE initializers, proxy
//! responses and the semiparametrically efficient one-step estimator.

pub mod efficient;
pub mod error;
pub mod functionals;
pub mod mave;
pub mod numerics;
pub mod simgen;
pub mod smoothing;
pub mod tuning;

pub use efficient::{see_estimate, BandwidthChoice, BandwidthConstants, EstimateResult, SeeConfig};
pub use error::{Error, Result, Stage};
pub use functionals::{FunctionalSpec, ResponseMap};
pub use mave::{MaveOptions, MaveVariant};
pub use numerics::{subspace_distance, Basis, KernelSpec};
pub use simgen::{Covariance, ModelId};

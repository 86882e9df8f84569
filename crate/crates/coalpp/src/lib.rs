//! Simulator and analytics toolkit for coalescent point processes with
//! infinite-sites mutations: scale-function models, exact carrier/spectrum
//! algorithms, closed-form and quadrature predictions, and a deterministic
//! Monte Carlo experiment harness.

pub mod analytics;
pub mod experiments;
pub mod genealogy;
pub mod mutation;
pub mod numerics;
pub mod scale;

pub use genealogy::{CarrierInterval, CoalescentSample, GenealogyError};
pub use numerics::{QuadratureError, QuadratureResult};
pub use scale::{BranchLength, Family, ModelError, Moments, ScaleModel};

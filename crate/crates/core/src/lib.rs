//! Numerical core of the swarmfield attacker-defender simulator.
//!
//! The crate couples three population densities on a 2-D grid - defenders
//! `m(t)`, attackers `mu(t)` and a static high-value unit `nu_H` - through
//! attrition rates driven by the entropic Wasserstein-2 distance, and solves
//! the resulting backward HJB / forward Fokker-Planck system by damped
//! forward-backward (Picard) iteration. A finite-population micro-simulator
//! provides an independent consistency oracle.
//!
//! Modules:
//! - [`grid`]: cell-centered grid, fields, difference operators.
//! - [`attrition`]: attrition rates and survival functionals Q(t), P(t).
//! - [`ot`]: log-domain Sinkhorn, debiased divergence, Kantorovich potentials.
//! - [`mfg`]: the coupled HJB/FP solver and the density-bound verifier.
//! - [`oracle`]: agent-wise micro-model and Dirac consistency checks.
//! - [`io`]: CSV emission and parsing for all run artifacts.
//!
//! Everything numerical is generic over the scalar type (see [`scalar::Scalar`]);
//! the aliases below fix `f64`, which is what the CLI uses.

pub mod attrition;
pub mod error;
pub mod grid;
pub mod io;
pub mod mfg;
pub mod oracle;
pub mod ot;
mod pde;
pub mod scalar;

pub use error::{Error, Result};
pub use grid::Boundary;
pub use scalar::Scalar;

/// `f64` grid.
pub type Grid = grid::Grid<f64>;
/// `f64` scalar field.
pub type ScalarField = grid::ScalarField<f64>;
/// `f64` vector field.
pub type VectorField = grid::VectorField<f64>;
/// `f64` probability density field.
pub type DensityField = grid::DensityField<f64>;
/// `f64` Gaussian component spec.
pub type GaussianSpec = grid::GaussianSpec<f64>;
/// `f64` attrition parameters.
pub type AttritionParams = attrition::AttritionParams<f64>;
/// `f64` survival trace.
pub type SurvivalTrace = attrition::SurvivalTrace<f64>;
/// `f64` Sinkhorn parameters.
pub type SinkhornParams = ot::SinkhornParams<f64>;
/// `f64` Sinkhorn result.
pub type SinkhornResult = ot::SinkhornResult<f64>;
/// `f64` debiased W2 estimate.
pub type W2Estimate = ot::W2Estimate<f64>;
/// `f64` MFG configuration.
pub type MfgConfig = mfg::MfgConfig<f64>;
/// `f64` MFG solution.
pub type MfgSolution = mfg::MfgSolution<f64>;
/// `f64` density-bounds report.
pub type BoundsReport = mfg::BoundsReport<f64>;
/// `f64` agent scenario.
pub type AgentScenario = oracle::AgentScenario<f64>;
/// `f64` agent trace.
pub type AgentTrace = oracle::AgentTrace<f64>;

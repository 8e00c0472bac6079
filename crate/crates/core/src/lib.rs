//! A 2D convection-diffusion solver laboratory on periodic B-spline
//! discretizations.
//!
//! The crate implements the plain Galerkin method, three classical
//! stabilized forms with algebraic (static) small-scales, four dynamic
//! small-scale variants including the orthogonal multiplier formulation,
//! and a complete discrete energy ledger that verifies or falsifies the
//! correct-energy behavior of each form on the skew-convection model
//! problem.

pub mod assembly;
pub mod config;
pub mod energy;
pub mod error;
pub mod formulation;
pub mod initial_condition;
pub mod linsolve;
pub mod output;
pub mod problem;
pub mod quadrature;
pub mod runner;
pub mod small_scales;
pub mod spline;
pub mod stabilization;
pub mod time_integration;
pub mod verify;

pub use config::{AlphaSpec, RunConfig};
pub use error::{Error, Result};
pub use formulation::FormulationKind;
pub use problem::{BoundaryCondition, ProblemContext};
pub use runner::{run, RunResult};
pub use time_integration::AlphaParams;

//! Finite-volume reaction-diffusion machinery on rectangular grids.
//!
//! The pieces layer as: [`DiffusionOperator`] discretises `div(d grad u)`
//! with zero-flux boundaries, [`linear_solve`] inverts shifted copies of it,
//! the steppers advance one implicit-explicit step, and [`run_simulation`]
//! drives a whole scenario and collects diagnostics.

pub mod operator;
pub mod simulation;
pub mod solve;
pub mod stepper;

pub use operator::DiffusionOperator;
pub use simulation::{
    run_simulation, ConvergenceReport, HostSetup, ReservoirSetup, SimConfig, SimOutput, SimStats,
    SnapshotRecord, SpatialModel,
};
pub use solve::{linear_solve, CgReport};
pub use stepper::{
    host_rate_bound, reservoir_rate_bound, step_host, step_logistic, step_reservoir, HostFieldParams,
    HostState, ReservoirFieldParams, ReservoirFieldState, StepperConfig,
};

use crate::grid::GridError;
use crate::kinetics::KineticsError;

/// Errors from operator assembly, linear solves, stepping, eigenvalue and
/// steady-state computations.
#[derive(Debug, thiserror::Error)]
pub enum PdeError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error("{what}: {detail}")]
    BadConfig { what: &'static str, detail: String },
    #[error("{what} did not converge within {iterations} iterations (residual {residual:.3e}, tolerance {tol:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("state became invalid at t = {t}: {detail}; reduce dt (current dt = {dt})")]
    Unstable { t: f64, dt: f64, detail: String },
    #[error("principal eigenfunction lost positivity (min entry {min:.3e}); the iteration is outside its guaranteed regime")]
    NonpositiveEigenfunction { min: f64 },
    #[error("principal eigenvalue {lambda:.3e} lies inside the dead band +/-{band:.1e}; the regime cannot be classified at this resolution")]
    DegenerateThreshold { lambda: f64, band: f64 },
}

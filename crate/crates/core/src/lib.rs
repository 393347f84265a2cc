//! Epidemic models for a host population coupled to an environmental
//! pathogen reservoir.
//!
//! The same kinetics appear in two settings: well-mixed ODE systems
//! ([`kinetics`]) and reaction-diffusion systems on a rectangular grid
//! ([`pde`]), where the reservoir may occupy only a subregion of the
//! domain. Long-time behaviour is decided by the sign of a principal
//! Neumann eigenvalue ([`spectral`]); the corresponding steady states
//! are computed in [`steady`].

pub mod grid;
pub mod kinetics;
pub mod pde;
pub mod spectral;
pub mod steady;

pub use grid::{CellMask, CoefficientRole, CoefficientSpec, Grid2D, GridError, MaskShape, ScalarField};

/// Dead band around zero inside which a principal eigenvalue is treated
/// as "at threshold" rather than as a sign.
pub const LAMBDA_DEAD_BAND: f64 = 1e-8;

/// Emitted state components may undershoot zero by at most this much
/// before the run is declared unstable; smaller undershoots are clipped.
pub const NEGATIVE_CLIP_TOL: f64 = 1e-12;

//! Simulation and asymptotic analysis of planar asymptotically Hamiltonian
//! Ito systems with damped oscillatory stochastic perturbations: averaging to
//! normal form, phase-locking/drifting classification, and Monte Carlo
//! verification of the stochastic stability predictions.

pub mod action_angle;
pub mod averaging;
pub mod error;
pub mod fourier;
pub mod ode;
pub mod sde;
pub mod scalar;
pub mod system;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete `f64` aliases for the common case.
pub type State64 = system::PlanarState<f64>;
pub type Schedule64 = system::PhaseSchedule<f64>;
pub type Spec64 = system::SystemSpec<f64>;
pub type Chart64 = action_angle::OrbitChart<f64>;

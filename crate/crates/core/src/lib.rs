//! Simulation of the stochastic heat equation with a piecewise-constant diffusivity
//! from local kernel measurements, and estimators for the jump location and the
//! diffusivities on both sides.

pub mod error;
pub mod estimators;
pub mod fem;
pub mod io;
pub mod functionals;
pub mod harness;
pub mod kernels;
pub mod limit_law;
pub mod profile;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod spectrum;
pub mod stats;
pub mod toy;

pub use error::{Error, Result};
pub use kernels::{KernelFamily, MeasurementGrid, MeasurementKernel};
pub use profile::DiffusivityProfile;
pub use spectrum::{decompose, SpectralDecomposition};

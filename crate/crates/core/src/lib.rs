//! Open quantum system dynamics with locally harmonic Gaussian operators.
//!
//! Operators are complex Gaussians in the Weyl representation, propagated by
//! second-order expansion of the Hamiltonian around the complex centre. Bath
//! particles are injected when they enter a vicinity sphere around the system
//! and traced out when they leave it.

pub mod config;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod observables;
pub mod phase_space;
pub mod propagator;

pub use environment::{BathMode, BathParams, ParticleId, Registry, TraceLedger};
pub use error::{Error, Result};
pub use phase_space::{Covariance, GaussianOperator, PhaseVector};

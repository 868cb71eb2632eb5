//! Two-scale reduced random Kalman filters.
//!
//! The crate provides the optimal Kalman filter together with two reduced filters for
//! systems whose state splits into large and small scales:
//!
//! * DRKF, for dynamically decoupled systems, filters the large scales and keeps the
//!   small scales at their unfiltered statistics, folding their effect into the
//!   observation noise.
//! * RKF freezes the small-scale prior at a constant `D_S` and projects the posterior
//!   onto the large scales with multiplicative inflation.
//!
//! Around them sit inflated reference systems, Riccati solvers, the fidelity and
//! robustness diagnostics ([`criteria`]), the Fourier-domain stochastic turbulence
//! benchmark ([`turbulence`]) and a complexity harness ([`scaling`]).

pub mod criteria;
pub mod error;
pub mod filters;
pub mod matcore;
pub mod parallel;
pub mod reference;
pub mod rng;
pub mod scaling;
pub mod ssmodel;
pub mod turbulence;

pub use error::{Error, Result};
pub use matcore::SymMatrix;
pub use parallel::Execution;

//! Bayesian tomography of single-mode continuous-variable optical states.
//!
//! Quadrature data from homodyne or heterodyne detection is turned into a
//! posterior ensemble of density matrices by preconditioned Crank-Nicolson
//! MCMC over a Bures prior. Around that core live a data simulator, a raw
//! trace calibration pipeline and the usual analysis tools (fidelities,
//! Wigner functions, cat-state fits).

pub mod analysis;
pub mod bures;
pub mod calibrate;
pub mod error;
pub mod fock;
pub mod measurement;
pub mod par;
pub mod sampler;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};

//! Open-quantum-system dynamics with correlated initial states.
//!
//! Short-time samplers (a hierarchical propagator and a small-bath exact
//! diagonalization oracle) feed a transfer-tensor propagator, which extends
//! reduced dynamics and dipole correlation functions to long times. The
//! `spectra` module turns the latter into absorption and emission spectra and
//! estimates temperature from their detailed-balance ratio.

// Links the BLAS backend used by ndarray's matrix products.
extern crate blas_src;

pub mod bath;
pub mod error;
pub mod heom;
pub mod io;
pub mod linalg;
pub mod models;
pub mod operators;
pub mod oracle;
pub mod spectra;
pub mod ttm;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

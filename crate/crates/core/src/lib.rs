//! Numerical lab for displacement-monotone mean field games of controls.
//!
//! Modules follow the pipeline: [`model`] defines costs and the Hamiltonian,
//! [`measures`] the empirical measures and exact Wasserstein distances,
//! [`fixedpoint`] the control fixed points Phi and a^N, [`fbsde`] the
//! particle solvers, [`lq`] Riccati references, [`monotonicity`] the
//! structural constants and [`harness`] the experiments and CLI plumbing.

pub mod error;
pub mod fbsde;
pub mod fixedpoint;
pub mod harness;
pub mod lq;
pub mod measures;
pub mod model;
pub mod monotonicity;

pub use error::{Error, Result};

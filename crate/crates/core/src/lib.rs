//! Numerical stochastic homogenization for symmetric diffusions in degenerate
//! stationary media.
//!
//! The pipeline runs on a periodized box:
//!
//! 1. [`environment`] generates coefficient fields and checks the moment condition
//!    `1/p + 1/q < 2/d`.
//! 2. [`energy`] assembles the discrete Dirichlet form and the Moser exponent schedule.
//! 3. [`corrector`] solves the cell problem for the correctors and harmonic coordinates.
//! 4. [`homogenize`] forms the effective matrix, checks its variational bounds and
//!    audits the maximal inequality.
//! 5. [`montecarlo`] runs the conductance random walk and checks the invariance principle.
//! 6. [`cli`] drives all of it from one config file.

pub mod cli;
pub mod corrector;
pub mod energy;
pub mod environment;
pub mod error;
pub mod grid;
pub mod homogenize;
pub mod montecarlo;
pub mod serde_ext;
pub mod solver;

pub use error::{Error, Result};

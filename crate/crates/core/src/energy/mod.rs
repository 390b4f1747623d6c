//! Discrete Dirichlet form and the exponent machinery of the Moser iteration.

mod form;
mod moser;
mod sobolev;

pub(crate) use form::for_each_edge;
pub use form::{assemble, harmonic_mean, CellFunction, DiscreteDirichletForm};
pub use moser::{
    holder_conjugate, moser_exponents, sobolev_exponent, MoserSchedule, DEFAULT_TRUNCATION,
    MIN_TRUNCATION,
};
pub use sobolev::{cutoff_sobolev_ratio, radial_cutoff, sobolev_ratio, weighted_sobolev_ratio};

//! Stationary random coefficient fields on a periodized box.

mod field;
pub mod io;
mod moments;
mod spec;

pub use field::{
    generate_field, generate_window, shifted_index, translate, translate_values, tri_index,
    tri_len, CoefficientField,
};
pub(crate) use moments::check_exponent;
pub use moments::{
    doubling_diagnostic, moment_condition, moment_refinement, validate_moments, DoublingRow,
    MomentReport, RefinementReport, RefinementRow, DIVERGENCE_SLOPE,
};
pub use spec::{EnvironmentSpec, Model};

//! Effective diffusivity, its variational bounds, and the maximal-inequality audit.

mod audit;
mod effective;

pub use audit::{
    maximal_inequality_direct, moment_product, moser_audit, moser_audit_fields, AuditRow,
    DirectInequality, MoserAuditReport,
};
pub use effective::{
    check_bounds, effective_matrix, random_directions, unit_directions, BoundsReport, BoundsRow,
    EffectiveMatrix, BOUND_SLACK,
};

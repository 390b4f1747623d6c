//! Cell problem: correctors, harmonic coordinates and the sublinearity sweep.

mod field;
pub mod io;
mod scan;

pub use field::{
    harmonic_coordinates, mean_zero_and_energy_checks, solve_correctors, CorrectorDiagnostics,
    CorrectorField, HarmonicCoordinates,
};
pub use scan::{scan_field, solve_scan, sublinearity_scan, SublinearityCurve, SublinearityRow};

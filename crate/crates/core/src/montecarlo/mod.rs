//! Conductance random walk: simulation, martingale decomposition, invariance-principle
//! statistics, time changes and ergodic averages.
//!
//! Paths are never stored in full. Each path owns a counter-based stream
//! `(master seed, path index)`, so any functional of the trajectory is computed by
//! replaying the path through a [`SegmentVisitor`].

mod clt;
mod ergodic;
pub mod io;
mod martingale;
mod timechange;
mod walk;

pub use clt::{
    clt_statistics, kolmogorov_p_value, ks_standard_normal, relative_matrix_error, CltReport,
    CltThresholds, CovarianceRow, KsResult, KsRow,
};
pub use ergodic::{
    environment_average, environment_averages, occupation_frequencies, EnvironmentAverage,
    OccupationReport, DEFAULT_MIXING_FACTOR,
};
pub use martingale::{bracket_density, martingale_decomposition, AugmentedPath, QvReport};
pub use timechange::{time_change, Conservativeness, TimeChangeSpec, TimeChanged};
pub use walk::{
    simulate_walk, simulate_with_rates, JumpRates, PathSample, SegmentVisitor, Start, WalkConfig,
    WalkEnsemble,
};

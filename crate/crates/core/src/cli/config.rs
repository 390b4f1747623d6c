use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::{holder_conjugate, moser_exponents, MoserSchedule, DEFAULT_TRUNCATION};
use crate::environment::{moment_condition, EnvironmentSpec};
use crate::error::{config, Error, Result};
use crate::montecarlo::{CltThresholds, Start};
use crate::solver::SolverConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. It replaces `environment.seed`; the walk and the random
    /// directions use streams derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub environment: EnvironmentSpec,
    pub moments: MomentsConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    pub sublinearity: Option<SublinearityConfig>,
    pub audit: Option<AuditConfig>,
    pub montecarlo: Option<MonteCarloConfig>,
    pub check: Option<CheckConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub p: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub q: f64,
    /// Sizes of the fixed-box refinement; empty skips it.
    #[serde(default)]
    pub refinement_sizes: Vec<usize>,
    /// Seeds whose median is taken per refinement size; defaults to the master seed.
    #[serde(default)]
    pub refinement_seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells_per_side: usize,
    /// Side of the periodic box; the lattice spacing is `box_side / cells_per_side`.
    #[serde(default = "one")]
    pub box_side: f64,
}

fn one() -> f64 {
    1.0
}

impl GridConfig {
    pub fn spacing(&self) -> f64 {
        self.box_side / self.cells_per_side as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub directions: usize,
    pub tight_tolerance: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            directions: 20,
            tight_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SublinearityConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "quarter")]
    pub radius: f64,
    /// Environment seeds to average over; defaults to the master seed alone.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn quarter() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "quarter")]
    pub radius: f64,
    #[serde(default = "half")]
    pub sigma_prime: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    /// Norm index on the right-hand side; defaults to `2 p*`.
    pub alpha: Option<f64>,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
}

fn half() -> f64 {
    0.5
}

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaChoice {
    None,
    LambdaMax,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub t_max: f64,
    pub record_stride: f64,
    /// Times at which the endpoint cloud is tested; defaults to `t_max`.
    #[serde(default)]
    pub eval_times: Vec<f64>,
    #[serde(default = "default_start")]
    pub start: Start,
    /// Unit axes first, then seeded random unit vectors.
    #[serde(default = "three")]
    pub ks_directions: usize,
    #[serde(default)]
    pub thresholds: CltThresholds,
    #[serde(default = "yes")]
    pub martingale: bool,
    #[serde(default = "no_theta")]
    pub theta: ThetaChoice,
    /// Number of leading paths written as `WLK1` traces.
    #[serde(default = "four")]
    pub trace_paths: usize,
}

fn default_start() -> Start {
    Start::Uniform
}

fn three() -> usize {
    3
}

fn four() -> usize {
    4
}

fn yes() -> bool {
    true
}

fn no_theta() -> ThetaChoice {
    ThetaChoice::None
}

impl MonteCarloConfig {
    pub fn eval_times(&self) -> Vec<f64> {
        if self.eval_times.is_empty() {
            vec![self.t_max]
        } else {
            self.eval_times.clone()
        }
    }
}

/// Oracle values checked under `--check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Expected effective matrix, row-major.
    pub effective: Option<Vec<f64>>,
    /// On `max_ij |D_ij - E_ij| / max_i E_ii`.
    #[serde(default = "default_effective_tolerance")]
    pub effective_tolerance: f64,
    #[serde(default = "yes")]
    pub bounds: bool,
    #[serde(default)]
    pub clt: bool,
    pub sublinearity_slope_max: Option<f64>,
    pub audit_stability_max: Option<f64>,
}

fn default_effective_tolerance() -> f64 {
    1e-6
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            effective: None,
            effective_tolerance: default_effective_tolerance(),
            bounds: true,
            clt: false,
            sublinearity_slope_max: None,
            audit_stability_max: None,
        }
    }
}

fn param(name: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn environment_spec(&self) -> EnvironmentSpec {
        let mut spec = self.environment.clone();
        spec.seed = self.seed;
        spec
    }

    pub fn walk_seed(&self) -> u64 {
        self.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
    }

    pub fn direction_seed(&self) -> u64 {
        self.seed.wrapping_add(0x6a09_e667_f3bc_c909)
    }

    pub fn alpha(&self) -> f64 {
        self.audit
            .as_ref()
            .and_then(|a| a.alpha)
            .unwrap_or_else(|| 2.0 * holder_conjugate(self.moments.p))
    }

    /// Moser schedule for `(p, q, d)`; `None` in one dimension.
    pub fn schedule(&self) -> Result<Option<MoserSchedule>> {
        if self.environment.dimension < 2 {
            return Ok(None);
        }
        let truncation = self
            .audit
            .as_ref()
            .map_or(DEFAULT_TRUNCATION, |a| a.truncation);
        moser_exponents(
            self.moments.p,
            self.moments.q,
            self.environment.dimension,
            self.alpha(),
            truncation,
        )
        .map(Some)
        .map_err(|e| param("moments", e))
    }

    /// Checks every parameter before anything is computed.
    pub fn validate(&self) -> Result<()> {
        let spec = self.environment_spec();
        spec.validate().map_err(|e| param("environment", e))?;
        let d = spec.dimension;
        let (p, q) = (self.moments.p, self.moments.q);
        if !(p >= 1.0 && q >= 1.0) {
            return config(format!(
                "moments: p and q must be >= 1, got p = {p}, q = {q}"
            ));
        }
        let (value, threshold, ok) = moment_condition(p, q, d);
        if !ok {
            return config(format!(
                "moments: (p, q, d) = ({p}, {q}, {d}) violates 1/p + 1/q < 2/d ({value} >= {threshold})"
            ));
        }
        if !self.moments.refinement_sizes.is_empty() {
            check_sizes(
                "moments.refinement_sizes",
                &self.moments.refinement_sizes,
                &spec,
            )?;
        }
        let g = self.grid;
        if g.cells_per_side < 2 {
            return config(format!(
                "grid.cells_per_side must be at least 2, got {}",
                g.cells_per_side
            ));
        }
        if !(g.box_side > 0.0 && g.box_side.is_finite()) {
            return config(format!(
                "grid.box_side must be positive, got {}",
                g.box_side
            ));
        }
        spec.validate_size(g.cells_per_side)
            .map_err(|e| param("grid", e))?;
        self.solver.validate().map_err(|e| param("solver", e))?;
        if self.bounds.directions == 0 {
            return config("bounds.directions must be at least 1");
        }
        if !(self.bounds.tight_tolerance > 0.0) {
            return config("bounds.tight_tolerance must be positive");
        }
        if let Some(s) = &self.sublinearity {
            check_sizes("sublinearity.sizes", &s.sizes, &spec)?;
            if !(s.radius > 0.0 && s.radius <= 0.25) {
                return config(format!(
                    "sublinearity.radius must be in (0, 1/4], got {}",
                    s.radius
                ));
            }
        }
        if let Some(a) = &self.audit {
            check_sizes("audit.sizes", &a.sizes, &spec)?;
            if !(a.radius > 0.0 && a.radius <= 0.25) {
                return config(format!(
                    "audit.radius must be in (0, 1/4], got {}",
                    a.radius
                ));
            }
            if !(0.5 <= a.sigma_prime && a.sigma_prime < a.sigma && a.sigma <= 1.0) {
                return config(format!(
                    "audit: need 1/2 <= sigma_prime < sigma <= 1, got {} and {}",
                    a.sigma_prime, a.sigma
                ));
            }
            if d < 2 {
                return config("audit: the Moser schedule needs dimension >= 2");
            }
            self.schedule()?;
        }
        if let Some(m) = &self.montecarlo {
            self.validate_montecarlo(m)?;
        }
        if let Some(c) = &self.check {
            if let Some(e) = &c.effective {
                if e.len() != d * d {
                    return config(format!(
                        "check.effective needs {} entries, got {}",
                        d * d,
                        e.len()
                    ));
                }
            }
            if !(c.effective_tolerance > 0.0) {
                return config("check.effective_tolerance must be positive");
            }
        }
        Ok(())
    }

    fn validate_montecarlo(&self, m: &MonteCarloConfig) -> Result<()> {
        if self.environment.is_trap() {
            return Err(Error::Degenerate(
                "montecarlo: the walk is not defined on the trap medium".into(),
            ));
        }
        if m.paths < m.thresholds.min_paths.max(2) {
            return config(format!(
                "montecarlo.paths must be at least thresholds.min_paths = {}, got {}",
                m.thresholds.min_paths, m.paths
            ));
        }
        if !(m.t_max > 0.0 && m.t_max.is_finite()) {
            return config(format!(
                "montecarlo.t_max must be positive, got {}",
                m.t_max
            ));
        }
        if !(m.record_stride > 0.0 && m.record_stride <= m.t_max) {
            return config(format!(
                "montecarlo.record_stride must be in (0, t_max], got {}",
                m.record_stride
            ));
        }
        if let Some(t) = m.eval_times().iter().find(|&&t| !(t > 0.0 && t <= m.t_max)) {
            return config(format!(
                "montecarlo.eval_times must lie in (0, t_max], got {t}"
            ));
        }
        if m.ks_directions == 0 {
            return config("montecarlo.ks_directions must be at least 1");
        }
        if let Start::Cell(c) = m.start {
            let cells = self
                .grid
                .cells_per_side
                .pow(self.environment.dimension as u32);
            if c >= cells {
                return config(format!(
                    "montecarlo.start cell {c} outside the grid of {cells} cells"
                ));
            }
        }
        if let ThetaChoice::Constant(c) = m.theta {
            if !(c > 0.0 && c.is_finite()) {
                return config(format!(
                    "montecarlo.theta constant must be positive, got {c}"
                ));
            }
        }
        Ok(())
    }
}

fn check_sizes(name: &str, sizes: &[usize], spec: &EnvironmentSpec) -> Result<()> {
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return config(format!(
            "{name} must hold at least two strictly increasing sizes"
        ));
    }
    for &n in sizes {
        spec.validate_size(n).map_err(|e| param(name, e))?;
    }
    Ok(())
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{assemble, DiscreteDirichletForm};
use crate::environment::CoefficientField;
use crate::error::{config, Error, Result};
use crate::grid::{Grid, MAX_DIM};

/// Largest expected number of jumps per path before unwrapped coordinates are
/// considered at risk.
const MAX_EXPECTED_JUMPS: f64 = 1e15;

/// Jump rates `a_e / h^2` of the conductance walk, per cell and direction.
/// Direction `2 i` is `+e_i`, `2 i + 1` is `-e_i`.
#[derive(Clone, Debug)]
pub struct JumpRates {
    grid: Grid,
    spacing: f64,
    rates: Vec<f64>,
    total: Vec<f64>,
    neighbors: Vec<u32>,
    field_hash: String,
}

impl JumpRates {
    /// Refuses the trap preset before looking at any rate.
    pub fn from_field(field: &CoefficientField) -> Result<Self> {
        if let Some(m) = field.model() {
            if m.is_trap() {
                return Err(Error::Degenerate(
                    "the trap medium has a non-integrable singularity; the walk is not defined on it".into(),
                ));
            }
        }
        Self::from_form(&assemble(field))
    }

    pub fn from_form(form: &DiscreteDirichletForm) -> Result<Self> {
        let grid = *form.grid();
        let d = grid.dim();
        let k = 2 * d;
        if grid.len() > u32::MAX as usize {
            return config("grid too large for the walk");
        }
        let inv_h2 = 1.0 / (form.spacing() * form.spacing());
        let mut rates = vec![0.0; grid.len() * k];
        let mut neighbors = vec![0u32; grid.len() * k];
        for axis in 0..d {
            let a = form.conductance(axis);
            for x in 0..grid.len() {
                let fwd = grid.step(x, axis, true);
                let back = grid.step(x, axis, false);
                rates[x * k + 2 * axis] = a[x] * inv_h2;
                rates[x * k + 2 * axis + 1] = a[back] * inv_h2;
                neighbors[x * k + 2 * axis] = fwd as u32;
                neighbors[x * k + 2 * axis + 1] = back as u32;
            }
        }
        let total: Vec<f64> = rates.chunks_exact(k).map(|r| r.iter().sum()).collect();
        if let Some(cell) = total.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::ZeroRate { cell });
        }
        Ok(JumpRates {
            grid,
            spacing: form.spacing(),
            rates,
            total,
            neighbors,
            field_hash: form.field_hash().to_string(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn field_hash(&self) -> &str {
        &self.field_hash
    }

    pub fn total(&self, cell: usize) -> f64 {
        self.total[cell]
    }

    /// Rate of the jump from `cell` in direction `dir`.
    pub fn rate(&self, cell: usize, dir: usize) -> f64 {
        self.rates[cell * 2 * self.grid.dim() + dir]
    }

    pub fn max_total(&self) -> f64 {
        self.total.iter().copied().fold(0.0, f64::max)
    }

    /// Mean holding time over cells.
    pub fn mean_holding_time(&self) -> f64 {
        self.total.iter().map(|t| 1.0 / t).sum::<f64>() / self.total.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Cell(usize),
    /// A uniformly drawn cell per path (the invariant law of the walk).
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub start: Start,
    /// Horizon in macroscopic time.
    pub t_max: f64,
    pub paths: usize,
    pub seed: u64,
    /// Time between recorded samples; `t_max` is always recorded.
    pub record_stride: f64,
}

impl WalkConfig {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return config(format!(
                "t_max must be positive and finite, got {}",
                self.t_max
            ));
        }
        if self.paths == 0 {
            return config("paths must be at least 1");
        }
        if !(self.record_stride > 0.0 && self.record_stride <= self.t_max) {
            return config(format!(
                "record_stride must be in (0, t_max], got {}",
                self.record_stride
            ));
        }
        if let Start::Cell(c) = self.start {
            if c >= grid.len() {
                return config(format!(
                    "start cell {c} outside a grid of {} cells",
                    grid.len()
                ));
            }
        }
        Ok(())
    }

    /// `0, s, 2s, ...` up to `t_max`, with `t_max` appended when it is not on the stride.
    pub fn record_times(&self) -> Vec<f64> {
        let steps = (self.t_max / self.record_stride * (1.0 + 1e-12)).floor() as usize;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * self.record_stride).collect();
        if let Some(last) = times.last_mut() {
            if (*last - self.t_max).abs() <= 1e-9 * self.t_max {
                *last = self.t_max;
            } else {
                times.push(self.t_max);
            }
        }
        times
    }
}

/// Per-path output: positions at the record times, in unwrapped lattice coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub index: usize,
    pub start_cell: usize,
    /// `positions[k]` is the unwrapped cell at `times[k]` (first `d` entries used).
    pub positions: Vec<[i64; MAX_DIM]>,
    pub jumps: u64,
}

/// Receives the piecewise-constant path one holding segment at a time; segments are
/// split at the record times so cumulative functionals are exact there.
pub trait SegmentVisitor {
    fn segment(&mut self, cell: usize, pos: &[i64; MAX_DIM], t0: f64, t1: f64);

    fn record(&mut self, _k: usize, _cell: usize, _pos: &[i64; MAX_DIM]) {}

    /// Called after every jump with its time and the new position.
    fn jump(&mut self, _t: f64, _to: &[i64; MAX_DIM]) {}
}

impl SegmentVisitor for () {
    fn segment(&mut self, _: usize, _: &[i64; MAX_DIM], _: f64, _: f64) {}
}

/// Simulated walk. The ensemble keeps the rates and the configuration, so any path
/// can be regenerated exactly from `(seed, index)` for further functionals.
#[derive(Clone, Debug)]
pub struct WalkEnsemble {
    rates: Arc<JumpRates>,
    clock: Option<Arc<Vec<f64>>>,
    pub config: WalkConfig,
    pub times: Vec<f64>,
    pub paths: Vec<PathSample>,
}

fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn run_path<V: SegmentVisitor>(
    rates: &JumpRates,
    clock: Option<&[f64]>,
    config: &WalkConfig,
    times: &[f64],
    index: usize,
    visitor: &mut V,
) -> PathSample {
    let grid = rates.grid;
    let d = grid.dim();
    let k = 2 * d;
    let mut rng = path_rng(config.seed, index);
    let start_cell = match config.start {
        Start::Cell(c) => c,
        Start::Uniform => rng.random_range(0..grid.len()),
    };
    let coords = grid.coords(start_cell);
    let mut pos = [0i64; MAX_DIM];
    for axis in 0..d {
        pos[axis] = coords[axis] as i64;
    }
    let mut cell = start_cell;
    let mut positions = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut t = 0.0;
    let mut jumps = 0u64;
    let t_max = config.t_max;
    loop {
        let e: f64 = rng.sample(Exp1);
        let mut hold = e / rates.total[cell];
        if let Some(theta) = clock {
            hold *= theta[cell];
        }
        let t_next = t + hold;
        let mut t0 = t;
        while next < times.len() && times[next] < t_next {
            visitor.segment(cell, &pos, t0, times[next]);
            t0 = times[next];
            visitor.record(next, cell, &pos);
            positions.push(pos);
            next += 1;
        }
        if t_next >= t_max {
            visitor.segment(cell, &pos, t0, t_max);
            while next < times.len() {
                visitor.record(next, cell, &pos);
                positions.push(pos);
                next += 1;
            }
            break;
        }
        visitor.segment(cell, &pos, t0, t_next);

        let row = &rates.rates[cell * k..(cell + 1) * k];
        let mut u = rng.random::<f64>() * rates.total[cell];
        let mut dir = k - 1;
        for (j, r) in row.iter().enumerate() {
            if u < *r {
                dir = j;
                break;
            }
            u -= r;
        }
        // guard against rounding landing past the last positive rate
        while row[dir] == 0.0 {
            dir -= 1;
        }
        let axis = dir / 2;
        pos[axis] += if dir.is_multiple_of(2) { 1 } else { -1 };
        cell = rates.neighbors[cell * k + dir] as usize;
        jumps += 1;
        t = t_next;
        visitor.jump(t, &pos);
    }
    PathSample {
        index,
        start_cell,
        positions,
        jumps,
    }
}

fn check_horizon(rates: &JumpRates, clock: Option<&[f64]>, config: &WalkConfig) -> Result<()> {
    let speed = match clock {
        // the clock stretches holding times by theta, so the fastest cell slows by min theta
        Some(theta) => rates
            .total
            .iter()
            .zip(theta)
            .map(|(t, th)| t / th)
            .fold(0.0, f64::max),
        None => rates.max_total(),
    };
    let expected = speed * config.t_max;
    if !(expected.is_finite() && expected <= MAX_EXPECTED_JUMPS) {
        return Err(Error::Range(format!(
            "horizon {} allows up to {expected:e} jumps per path; unwrapped coordinates could overflow",
            config.t_max
        )));
    }
    Ok(())
}

fn simulate(
    rates: Arc<JumpRates>,
    clock: Option<Arc<Vec<f64>>>,
    config: WalkConfig,
) -> Result<WalkEnsemble> {
    config.validate(&rates.grid)?;
    check_horizon(&rates, clock.as_deref().map(|c| c.as_slice()), &config)?;
    let times = config.record_times();
    let paths: Vec<PathSample> = (0..config.paths)
        .into_par_iter()
        .map(|i| {
            run_path(
                &rates,
                clock.as_deref().map(|c| c.as_slice()),
                &config,
                &times,
                i,
                &mut (),
            )
        })
        .collect();
    Ok(WalkEnsemble {
        rates,
        clock,
        config,
        times,
        paths,
    })
}

/// Simulates `config.paths` independent walks on `field`.
pub fn simulate_walk(field: &CoefficientField, config: &WalkConfig) -> Result<WalkEnsemble> {
    let rates = JumpRates::from_field(field)?;
    simulate(Arc::new(rates), None, *config)
}

/// Same as [`simulate_walk`] with precomputed rates.
pub fn simulate_with_rates(rates: Arc<JumpRates>, config: &WalkConfig) -> Result<WalkEnsemble> {
    simulate(rates, None, *config)
}

impl WalkEnsemble {
    pub(crate) fn with_clock(&self, clock: Arc<Vec<f64>>) -> Result<WalkEnsemble> {
        simulate(self.rates.clone(), Some(clock), self.config)
    }

    pub fn rates(&self) -> &JumpRates {
        &self.rates
    }

    pub fn dim(&self) -> usize {
        self.rates.grid.dim()
    }

    pub fn spacing(&self) -> f64 {
        self.rates.spacing
    }

    pub fn field_hash(&self) -> &str {
        &self.rates.field_hash
    }

    pub fn clock(&self) -> Option<&[f64]> {
        self.clock.as_deref().map(|c| c.as_slice())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Regenerates path `index` and feeds it to `visitor`.
    pub fn replay<V: SegmentVisitor>(&self, index: usize, visitor: &mut V) -> PathSample {
        run_path(
            &self.rates,
            self.clock(),
            &self.config,
            &self.times,
            index,
            visitor,
        )
    }

    /// Index of the record time matching `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::Range(format!("time {t} is not a record time {:?}", self.times)))
    }

    /// Displacements `(X_t - X_0) h` at record `k`, one `d`-vector per path.
    pub fn displacements(&self, k: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let h = self.spacing();
        self.paths
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| (p.positions[k][i] - p.positions[0][i]) as f64 * h)
                    .collect()
            })
            .collect()
    }

    /// Unwrapped physical positions `X_t` at record `k` (cell centers).
    pub fn positions(&self, k: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let h = self.spacing();
        self.paths
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| (p.positions[k][i] as f64 + 0.5) * h)
                    .collect()
            })
            .collect()
    }

    /// Sample covariance (row-major `d x d`) of the displacements at record `k`.
    pub fn covariance(&self, k: usize) -> Vec<f64> {
        covariance(&self.displacements(k), self.dim())
    }
}

pub(crate) fn covariance(samples: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            mean[i] += s[i] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    cov.iter_mut().for_each(|c| *c /= denom);
    cov
}

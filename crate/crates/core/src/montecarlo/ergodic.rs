use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::timechange::mean_and_error;
use super::walk::{SegmentVisitor, WalkEnsemble};
use crate::error::{Error, Result};
use crate::grid::MAX_DIM;

/// Default ratio between the horizon and the mixing proxy.
pub const DEFAULT_MIXING_FACTOR: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentAverage {
    /// Mean over paths of `(1/t) int_0^t g(X_s) ds`.
    pub mean: f64,
    pub std_error: f64,
    /// Cell average of `g`, the target of the time average.
    pub spatial_mean: f64,
    pub relative_error: f64,
    /// Mean holding time of the walk.
    pub mixing_proxy: f64,
    /// `t >= mixing_factor * mixing_proxy`.
    pub horizon_ok: bool,
}

struct Integrals<'a> {
    g: &'a [&'a [f64]],
    total: Vec<f64>,
}

impl SegmentVisitor for Integrals<'_> {
    fn segment(&mut self, cell: usize, _: &[i64; MAX_DIM], t0: f64, t1: f64) {
        for (acc, g) in self.total.iter_mut().zip(self.g) {
            *acc += g[cell] * (t1 - t0);
        }
    }
}

pub fn environment_average(
    ensemble: &WalkEnsemble,
    g: &[f64],
    mixing_factor: f64,
) -> Result<EnvironmentAverage> {
    let mut v = environment_averages(ensemble, &[g], mixing_factor)?;
    Ok(v.remove(0))
}

/// Several time averages from a single replay of every path.
pub fn environment_averages(
    ensemble: &WalkEnsemble,
    functions: &[&[f64]],
    mixing_factor: f64,
) -> Result<Vec<EnvironmentAverage>> {
    let cells = ensemble.rates().grid().len();
    if let Some(g) = functions.iter().find(|g| g.len() != cells) {
        return Err(Error::Shape {
            expected: cells,
            got: g.len(),
        });
    }
    let t = ensemble.config.t_max;
    let per_path: Vec<Vec<f64>> = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut v = Integrals {
                g: functions,
                total: vec![0.0; functions.len()],
            };
            ensemble.replay(p.index, &mut v);
            v.total.iter().map(|s| s / t).collect()
        })
        .collect();
    let mixing_proxy = ensemble.rates().mean_holding_time();
    Ok(functions
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let column: Vec<f64> = per_path.iter().map(|p| p[j]).collect();
            let (mean, std_error) = mean_and_error(&column);
            let spatial_mean = g.iter().sum::<f64>() / cells as f64;
            EnvironmentAverage {
                mean,
                std_error,
                spatial_mean,
                relative_error: (mean - spatial_mean).abs() / spatial_mean.abs(),
                mixing_proxy,
                horizon_ok: t >= mixing_factor * mixing_proxy,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    /// Mean over paths of the fraction of time spent in each cell.
    pub frequencies: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Fraction of cells whose frequency is within three standard errors of uniform.
    pub within_three_se: f64,
}

struct Occupation {
    time: Vec<f64>,
}

impl SegmentVisitor for Occupation {
    fn segment(&mut self, cell: usize, _: &[i64; MAX_DIM], t0: f64, t1: f64) {
        self.time[cell] += t1 - t0;
    }
}

pub fn occupation_frequencies(ensemble: &WalkEnsemble) -> OccupationReport {
    let cells = ensemble.rates().grid().len();
    let t = ensemble.config.t_max;
    let per_path: Vec<Vec<f64>> = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut v = Occupation {
                time: vec![0.0; cells],
            };
            ensemble.replay(p.index, &mut v);
            v.time.iter().map(|s| s / t).collect()
        })
        .collect();
    let mut frequencies = Vec::with_capacity(cells);
    let mut std_errors = Vec::with_capacity(cells);
    for c in 0..cells {
        let column: Vec<f64> = per_path.iter().map(|p| p[c]).collect();
        let (m, se) = mean_and_error(&column);
        frequencies.push(m);
        std_errors.push(se);
    }
    let uniform = 1.0 / cells as f64;
    let within = frequencies
        .iter()
        .zip(&std_errors)
        .filter(|(f, se)| (*f - uniform).abs() <= 3.0 * *se)
        .count();
    OccupationReport {
        frequencies,
        std_errors,
        within_three_se: within as f64 / cells as f64,
    }
}

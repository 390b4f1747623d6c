use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::walk::{SegmentVisitor, WalkEnsemble};
use crate::environment::CoefficientField;
use crate::error::{config, Error, Result};
use crate::grid::MAX_DIM;

/// Per-cell clock weight `theta`; the changed process runs on `tau_t`, the inverse
/// of `A_s = int_0^s theta(X_u) du`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChangeSpec {
    pub label: String,
    pub theta: Vec<f64>,
}

impl TimeChangeSpec {
    pub fn constant(cells: usize, c: f64) -> Self {
        TimeChangeSpec {
            label: format!("constant {c}"),
            theta: vec![c; cells],
        }
    }

    /// `theta = Lambda`, the largest eigenvalue per cell.
    pub fn lambda_max(field: &CoefficientField) -> Self {
        TimeChangeSpec {
            label: "lambda_max".into(),
            theta: field.lambda_max().to_vec(),
        }
    }

    pub fn validate(&self, cells: usize) -> Result<()> {
        if self.theta.len() != cells {
            return Err(Error::Shape {
                expected: cells,
                got: self.theta.len(),
            });
        }
        if let Some(i) = self.theta.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
            return config(format!(
                "theta must be positive and finite, cell {i} has {}",
                self.theta[i]
            ));
        }
        if !(self.mean().is_finite() && self.mean_inverse().is_finite()) {
            return config("theta and 1/theta must have finite averages");
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.theta.iter().sum::<f64>() / self.theta.len() as f64
    }

    pub fn mean_inverse(&self) -> f64 {
        self.theta.iter().map(|t| 1.0 / t).sum::<f64>() / self.theta.len() as f64
    }
}

/// `(1/t) int_0^t theta^-1(Y_s) ds = tau_t / t`, which tends to `1 / avg theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conservativeness {
    pub mean: f64,
    pub std_error: f64,
    pub target: f64,
}

#[derive(Clone, Debug)]
pub struct TimeChanged {
    pub ensemble: WalkEnsemble,
    /// Factor `1 / avg theta` by which the limiting covariance is rescaled.
    pub covariance_scale: f64,
    pub conservativeness: Conservativeness,
}

struct InverseClock<'a> {
    theta: &'a [f64],
    total: f64,
}

impl SegmentVisitor for InverseClock<'_> {
    fn segment(&mut self, cell: usize, _: &[i64; MAX_DIM], t0: f64, t1: f64) {
        self.total += (t1 - t0) / self.theta[cell];
    }
}

/// Re-runs every path on the clock `theta`: the jump chain is the same, and each
/// holding time at `x` is stretched by `theta(x)`.
pub fn time_change(ensemble: &WalkEnsemble, spec: &TimeChangeSpec) -> Result<TimeChanged> {
    if ensemble.clock().is_some() {
        return config("the walk is already time-changed");
    }
    spec.validate(ensemble.rates().grid().len())?;
    let changed = ensemble.with_clock(Arc::new(spec.theta.clone()))?;
    let t = changed.config.t_max;
    let per_path: Vec<f64> = changed
        .paths
        .par_iter()
        .map(|p| {
            let mut v = InverseClock {
                theta: &spec.theta,
                total: 0.0,
            };
            changed.replay(p.index, &mut v);
            v.total / t
        })
        .collect();
    let (mean, std_error) = mean_and_error(&per_path);
    if !mean.is_finite() {
        return Err(Error::Range("clock overflow".into()));
    }
    let covariance_scale = 1.0 / spec.mean();
    Ok(TimeChanged {
        ensemble: changed,
        covariance_scale,
        conservativeness: Conservativeness {
            mean,
            std_error,
            target: covariance_scale,
        },
    })
}

pub(crate) fn mean_and_error(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

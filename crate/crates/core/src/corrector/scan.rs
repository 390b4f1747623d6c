use std::io::Write;

use serde::{Deserialize, Serialize};

use super::field::{solve_correctors, CorrectorField};
use crate::energy::assemble;
use crate::environment::{generate_window, CoefficientField, EnvironmentSpec};
use crate::error::{config, Result};
use crate::grid::{fit_slope, Ball, MAX_DIM};
use crate::solver::SolverConfig;

/// The medium at resolution `n` on the unit box, `h = eps = 1/n`, with the lattice
/// origin at the middle of the box. Every size reads the same realization.
pub fn scan_field(spec: &EnvironmentSpec, n: usize) -> Result<CoefficientField> {
    let half = (n / 2) as i64;
    generate_window(spec, n, 1.0 / n as f64, &[-half; MAX_DIM])
}

pub(crate) fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return config("a size sweep needs at least two sizes");
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return config(format!("sizes must be strictly increasing, got {sizes:?}"));
    }
    Ok(())
}

/// Field and correctors for every size of a sweep.
pub fn solve_scan(
    spec: &EnvironmentSpec,
    sizes: &[usize],
    cfg: &SolverConfig,
) -> Result<Vec<(CoefficientField, CorrectorField)>> {
    check_sizes(sizes)?;
    sizes
        .iter()
        .map(|&n| {
            let field = scan_field(spec, n)?;
            let chi = solve_correctors(&assemble(&field), cfg)?;
            Ok((field, chi))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublinearityRow {
    pub epsilon: f64,
    pub sup_norm: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublinearityCurve {
    pub radius: f64,
    pub rows: Vec<SublinearityRow>,
    /// Least-squares slope of `log sup_norm` against `log N`; `None` when some
    /// `sup_norm` vanishes.
    pub slope: Option<f64>,
}

impl SublinearityCurve {
    pub fn from_rows(radius: f64, rows: Vec<SublinearityRow>) -> Self {
        let slope = if rows.iter().all(|r| r.sup_norm > 0.0) {
            let x: Vec<f64> = rows.iter().map(|r| -r.epsilon.ln()).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.sup_norm.ln()).collect();
            fit_slope(&x, &y)
        } else {
            None
        };
        SublinearityCurve {
            radius,
            rows,
            slope,
        }
    }

    /// Number of consecutive size pairs over which `sup_norm` decreases.
    pub fn decreasing_pairs(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].sup_norm < w[0].sup_norm)
            .count()
    }

    /// Row-wise mean of several curves over the same sizes.
    pub fn average(curves: &[SublinearityCurve]) -> Result<Self> {
        let Some(first) = curves.first() else {
            return config("no curves to average");
        };
        if curves.iter().any(|c| c.rows.len() != first.rows.len()) {
            return config("curves cover different sizes");
        }
        let m = curves.len() as f64;
        let rows = (0..first.rows.len())
            .map(|i| SublinearityRow {
                epsilon: first.rows[i].epsilon,
                sup_norm: curves.iter().map(|c| c.rows[i].sup_norm).sum::<f64>() / m,
                seed: first.rows[i].seed,
            })
            .collect();
        Ok(Self::from_rows(first.radius, rows))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epsilon,sup_norm,seed")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.epsilon, r.sup_norm, r.seed)?;
        }
        Ok(())
    }
}

/// `sup |chi|` over the centered ball of radius `R` of the unit box, one row per size.
pub fn sublinearity_scan(
    spec: &EnvironmentSpec,
    radius: f64,
    sizes: &[usize],
    cfg: &SolverConfig,
) -> Result<SublinearityCurve> {
    if !(radius > 0.0 && radius <= 0.25) {
        return config(format!(
            "sublinearity radius must be in (0, 1/4], got {radius}"
        ));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for (field, chi) in solve_scan(spec, sizes, cfg)? {
        let ball = Ball::box_centered(field.grid(), field.spacing(), radius);
        let cells = ball.cells(field.grid(), field.spacing());
        rows.push(SublinearityRow {
            epsilon: field.spacing(),
            sup_norm: chi.sup_over(&cells),
            seed: spec.seed,
        });
    }
    Ok(SublinearityCurve::from_rows(radius, rows))
}

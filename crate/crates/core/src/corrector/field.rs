use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{CellFunction, DiscreteDirichletForm};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::{pcg, FourierPreconditioner, SolverConfig};

/// The `d` correctors `chi^k` of one field, in physical units (a unit slope across
/// the box of side `N h` gives correctors of size `O(N h)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorField {
    grid: Grid,
    spacing: f64,
    chi: Vec<Vec<f64>>,
    means: Vec<f64>,
    residuals: Vec<f64>,
    iterations: Vec<usize>,
    histories: Vec<Vec<f64>>,
    field_hash: String,
}

impl CorrectorField {
    /// Wraps externally computed correctors; residual bookkeeping is left empty.
    pub fn from_values(
        grid: Grid,
        spacing: f64,
        chi: Vec<Vec<f64>>,
        field_hash: String,
    ) -> Result<Self> {
        if chi.len() != grid.dim() {
            return Err(Error::Shape {
                expected: grid.dim(),
                got: chi.len(),
            });
        }
        if let Some(c) = chi.iter().find(|c| c.len() != grid.len()) {
            return Err(Error::Shape {
                expected: grid.len(),
                got: c.len(),
            });
        }
        let means = chi.iter().map(|c| mean(c)).collect();
        let d = grid.dim();
        Ok(CorrectorField {
            grid,
            spacing,
            chi,
            means,
            residuals: vec![0.0; d],
            iterations: vec![0; d],
            histories: vec![Vec::new(); d],
            field_hash,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn chi(&self, k: usize) -> &[f64] {
        &self.chi[k]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.chi
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    pub fn histories(&self) -> &[Vec<f64>] {
        &self.histories
    }

    pub fn field_hash(&self) -> &str {
        &self.field_hash
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `chi^k` as a periodic cell function.
    pub fn function(&self, k: usize) -> CellFunction {
        CellFunction::periodic(self.dim(), self.chi[k].clone())
    }

    /// `U_i^k(x) = (chi^k(x + e_i) - chi^k(x)) / h`, indexed by `x`.
    pub fn gradient(&self, k: usize, axis: usize) -> Vec<f64> {
        let h = self.spacing;
        let c = &self.chi[k];
        (0..self.grid.len())
            .map(|x| (c[self.grid.step(x, axis, true)] - c[x]) / h)
            .collect()
    }

    /// Sup of `|chi^k|` over `cells`, maximized over `k`.
    pub fn sup_over(&self, cells: &[usize]) -> f64 {
        self.chi
            .iter()
            .flat_map(|c| cells.iter().map(move |&i| c[i].abs()))
            .fold(0.0, f64::max)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Solves `L chi^k = b^k` for every `k`, where `b^k` is the load of the coordinate
/// `x_k`, with mean-zero gauge.
pub fn solve_correctors(
    form: &DiscreteDirichletForm,
    cfg: &SolverConfig,
) -> Result<CorrectorField> {
    cfg.validate()?;
    if let Some((axis, x)) = form.degenerate_edge() {
        return Err(Error::Singular(format!(
            "edge from cell {x} along axis {axis} has conductance {}",
            form.conductance(axis)[x]
        )));
    }
    let d = form.dim();
    let pre = FourierPreconditioner::new(form);
    let cfg = SolverConfig {
        project_mean: true,
        ..*cfg
    };
    let outcomes: Vec<_> = (0..d)
        .into_par_iter()
        .map(|k| {
            let mut slope = vec![0.0; d];
            slope[k] = 1.0;
            let b = form.affine_load(&slope);
            pcg(form, &pre, &b, None, &cfg)
        })
        .collect::<Result<_>>()?;

    let mut field = CorrectorField {
        grid: *form.grid(),
        spacing: form.spacing(),
        chi: Vec::with_capacity(d),
        means: Vec::with_capacity(d),
        residuals: Vec::with_capacity(d),
        iterations: Vec::with_capacity(d),
        histories: Vec::with_capacity(d),
        field_hash: form.field_hash().to_string(),
    };
    for out in outcomes {
        field.means.push(mean(&out.solution));
        field.residuals.push(out.residual);
        field.iterations.push(out.iterations);
        field.histories.push(out.history);
        field.chi.push(out.solution);
    }
    Ok(field)
}

/// `y^k = x_k - chi^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoordinates {
    pub coordinates: Vec<CellFunction>,
}

pub fn harmonic_coordinates(correctors: &CorrectorField) -> HarmonicCoordinates {
    let d = correctors.dim();
    let coordinates = (0..d)
        .map(|k| {
            let mut slope = vec![0.0; d];
            slope[k] = 1.0;
            CellFunction {
                slope,
                values: correctors.chi(k).iter().map(|v| -v).collect(),
            }
        })
        .collect();
    HarmonicCoordinates { coordinates }
}

impl HarmonicCoordinates {
    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    /// `max_x |E(y^k, 1_x)|` relative to `h^(d-2) ||b^k||_2`, maximized over `k`.
    /// Zero when every load vanishes.
    pub fn harmonicity_residual(&self, form: &DiscreteDirichletForm) -> Result<f64> {
        let grid = form.grid();
        let h = form.spacing();
        let mut worst: f64 = 0.0;
        for y in &self.coordinates {
            if y.values.len() != grid.len() {
                return Err(Error::Shape {
                    expected: grid.len(),
                    got: y.values.len(),
                });
            }
            let mut tested = vec![0.0; grid.len()];
            for axis in 0..form.dim() {
                let a = form.conductance(axis);
                let s = y.slope[axis] * h;
                crate::energy::for_each_edge(grid, axis, |x, z| {
                    let flux = a[x] * (y.values[z] - y.values[x] + s);
                    tested[z] += flux;
                    tested[x] -= flux;
                });
            }
            let load = form.affine_load(&y.slope);
            let b_norm = load.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sup = tested.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if b_norm > 0.0 {
                worst = worst.max(sup / b_norm);
            } else if sup > 0.0 {
                worst = f64::INFINITY;
            }
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorDiagnostics {
    /// `|mean chi^k|`.
    pub mean_chi: Vec<f64>,
    /// `|mean_x U_i^k(x)|`, indexed `[k][i]`.
    pub mean_gradient: Vec<Vec<f64>>,
    /// `E(y^k, y^k) / volume`.
    pub energy_per_volume: Vec<f64>,
}

pub fn mean_zero_and_energy_checks(
    correctors: &CorrectorField,
    form: &DiscreteDirichletForm,
) -> Result<CorrectorDiagnostics> {
    if correctors.grid() != form.grid() {
        return Err(Error::Consistency(
            "corrector and form live on different grids".into(),
        ));
    }
    let d = correctors.dim();
    let coords = harmonic_coordinates(correctors);
    let mut out = CorrectorDiagnostics {
        mean_chi: Vec::with_capacity(d),
        mean_gradient: Vec::with_capacity(d),
        energy_per_volume: Vec::with_capacity(d),
    };
    for k in 0..d {
        out.mean_chi.push(mean(correctors.chi(k)).abs());
        out.mean_gradient.push(
            (0..d)
                .map(|i| mean(&correctors.gradient(k, i)).abs())
                .collect(),
        );
        let y = &coords.coordinates[k];
        out.energy_per_volume
            .push(form.energy(y, y)? / form.volume());
    }
    Ok(out)
}

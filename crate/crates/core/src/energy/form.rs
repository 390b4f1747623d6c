use serde::{Deserialize, Serialize};

use crate::environment::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Function on the cells of a periodic box plus an affine part `x -> slope . x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    pub slope: Vec<f64>,
    pub values: Vec<f64>,
}

impl CellFunction {
    pub fn periodic(d: usize, values: Vec<f64>) -> Self {
        CellFunction {
            slope: vec![0.0; d],
            values,
        }
    }

    pub fn affine(slope: Vec<f64>, cells: usize) -> Self {
        CellFunction {
            slope,
            values: vec![0.0; cells],
        }
    }

    /// The coordinate function `x_k`.
    pub fn coordinate(k: usize, d: usize, cells: usize) -> Self {
        let mut slope = vec![0.0; d];
        slope[k] = 1.0;
        Self::affine(slope, cells)
    }
}

/// Visits every edge `(x, x + e_axis)` of the periodic grid once.
#[inline]
pub(crate) fn for_each_edge(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize)) {
    let n = grid.n();
    let s = grid.stride(axis);
    let block = n * s;
    for base in (0..grid.len()).step_by(block) {
        for c in 0..n {
            let cn = if c + 1 == n { 0 } else { c + 1 };
            let row = base + c * s;
            let next = base + cn * s;
            for inner in 0..s {
                f(row + inner, next + inner);
            }
        }
    }
}

/// Edge-conductance energy on the periodic grid.
///
/// `conductance[axis][x]` belongs to the edge between `x` and `x + e_axis`; it is the
/// harmonic mean of the two incident cells' `a_ii`. Off-diagonal cell entries do not
/// enter the nearest-neighbor stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDirichletForm {
    grid: Grid,
    spacing: f64,
    conductance: Vec<Vec<f64>>,
    field_hash: String,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn assemble(field: &CoefficientField) -> DiscreteDirichletForm {
    let grid = *field.grid();
    let mut conductance = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let mut c = vec![0.0; grid.len()];
        for_each_edge(&grid, axis, |x, y| {
            c[x] = harmonic_mean(field.diagonal(x, axis), field.diagonal(y, axis));
        });
        conductance.push(c);
    }
    DiscreteDirichletForm {
        grid,
        spacing: field.spacing(),
        conductance,
        field_hash: field.descriptor_hash(),
    }
}

impl DiscreteDirichletForm {
    /// Builds a form directly from edge conductances.
    pub fn from_conductances(grid: Grid, spacing: f64, conductance: Vec<Vec<f64>>) -> Result<Self> {
        if conductance.len() != grid.dim() {
            return Err(Error::Shape {
                expected: grid.dim(),
                got: conductance.len(),
            });
        }
        for c in &conductance {
            if c.len() != grid.len() {
                return Err(Error::Shape {
                    expected: grid.len(),
                    got: c.len(),
                });
            }
        }
        Ok(DiscreteDirichletForm {
            grid,
            spacing,
            conductance,
            field_hash: String::new(),
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

    pub fn cells(&self) -> usize {
        self.grid.len()
    }

    pub fn volume(&self) -> f64 {
        (self.grid.n() as f64 * self.spacing).powi(self.dim() as i32)
    }

    pub fn field_hash(&self) -> &str {
        &self.field_hash
    }

    pub fn conductance(&self, axis: usize) -> &[f64] {
        &self.conductance[axis]
    }

    /// `h^(d-2)`, the factor between lattice sums and the continuum energy.
    pub fn scale(&self) -> f64 {
        self.spacing.powi(self.dim() as i32 - 2)
    }

    /// First edge with a non-positive or non-finite conductance.
    pub fn degenerate_edge(&self) -> Option<(usize, usize)> {
        for (axis, c) in self.conductance.iter().enumerate() {
            if let Some(x) = c.iter().position(|&a| !(a > 0.0 && a.is_finite())) {
                return Some((axis, x));
            }
        }
        None
    }

    fn check(&self, u: &CellFunction) -> Result<()> {
        if u.values.len() != self.cells() {
            return Err(Error::Shape {
                expected: self.cells(),
                got: u.values.len(),
            });
        }
        if u.slope.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: u.slope.len(),
            });
        }
        Ok(())
    }

    /// `E(u, v) = h^(d-2) sum_e a_e (du)_e (dv)_e`, with `(du)_e = u(x+e) - u(x) + slope_i h`.
    pub fn energy(&self, u: &CellFunction, v: &CellFunction) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        let h = self.spacing;
        let mut total = 0.0;
        for axis in 0..self.dim() {
            let a = &self.conductance[axis];
            let su = u.slope[axis] * h;
            let sv = v.slope[axis] * h;
            let mut s = 0.0;
            for_each_edge(&self.grid, axis, |x, y| {
                s += a[x] * (u.values[y] - u.values[x] + su) * (v.values[y] - v.values[x] + sv);
            });
            total += s;
        }
        Ok(self.scale() * total)
    }

    /// Energy with squared edge weights `w_e`, `E_w(u,u) = h^(d-2) sum_e w_e a_e (du)_e^2`.
    pub fn weighted_energy(
        &self,
        u: &CellFunction,
        edge_weight: impl Fn(usize, usize) -> f64,
    ) -> Result<f64> {
        self.check(u)?;
        let h = self.spacing;
        let mut total = 0.0;
        for axis in 0..self.dim() {
            let a = &self.conductance[axis];
            let su = u.slope[axis] * h;
            for_each_edge(&self.grid, axis, |x, y| {
                let du = u.values[y] - u.values[x] + su;
                total += edge_weight(x, y) * a[x] * du * du;
            });
        }
        Ok(self.scale() * total)
    }

    /// Lattice operator `(L u)(x) = sum_{e ~ x} a_e (u(x) - u(y))`, so `E(u, v) = h^(d-2) <L u, v>`
    /// for periodic `u, v`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for axis in 0..self.dim() {
            let a = &self.conductance[axis];
            for_each_edge(&self.grid, axis, |x, y| {
                let flux = a[x] * (u[x] - u[y]);
                out[x] += flux;
                out[y] -= flux;
            });
        }
    }

    /// Diagonal of `L`.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.cells()];
        for axis in 0..self.dim() {
            let a = &self.conductance[axis];
            for_each_edge(&self.grid, axis, |x, y| {
                diag[x] += a[x];
                diag[y] += a[x];
            });
        }
        diag
    }

    /// Load `b` with `E(slope . x, phi) = h^(d-2) <b, phi>`; the cell problem for the
    /// corrector of `slope . x` reads `L chi = b`.
    pub fn affine_load(&self, slope: &[f64]) -> Vec<f64> {
        let h = self.spacing;
        let mut b = vec![0.0; self.cells()];
        for axis in 0..self.dim() {
            let s = slope[axis];
            if s == 0.0 {
                continue;
            }
            let a = &self.conductance[axis];
            for_each_edge(&self.grid, axis, |x, y| {
                let flux = a[x] * s * h;
                b[y] += flux;
                b[x] -= flux;
            });
        }
        b
    }

    /// Edge gradients `((u(x+e) - u(x)) / h + slope_axis)` for one axis, indexed by `x`.
    pub fn edge_gradient(&self, u: &CellFunction, axis: usize) -> Vec<f64> {
        let h = self.spacing;
        let mut g = vec![0.0; self.cells()];
        for_each_edge(&self.grid, axis, |x, y| {
            g[x] = (u.values[y] - u.values[x]) / h + u.slope[axis];
        });
        g
    }
}

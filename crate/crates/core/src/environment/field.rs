use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::spec::{EnvironmentSpec, Model};
use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};

/// Number of stored entries per cell: the upper triangle of a `d x d` matrix.
#[inline]
pub fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry `(i, j)`, `i <= j`, in the row-major upper triangle.
#[inline]
pub fn tri_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * d - i * (i + 1) / 2 + j
}

/// Periodized, piecewise-constant field of symmetric cell matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    grid: Grid,
    spacing: f64,
    entries: Vec<f64>,
    lambda: Vec<f64>,
    lambda_max: Vec<f64>,
    model: Option<Model>,
}

impl CoefficientField {
    /// Builds a field from per-cell upper-triangular entries and computes the eigen-bounds.
    pub fn from_entries(grid: Grid, spacing: f64, entries: Vec<f64>) -> Result<Self> {
        let d = grid.dim();
        let m = tri_len(d);
        if entries.len() != grid.len() * m {
            return Err(Error::Shape {
                expected: grid.len() * m,
                got: entries.len(),
            });
        }
        check_spacing(spacing)?;
        let mut lambda = Vec::with_capacity(grid.len());
        let mut lambda_max = Vec::with_capacity(grid.len());
        for cell in entries.chunks_exact(m) {
            let (lo, hi) = eigen_bounds(cell, d)?;
            lambda.push(lo);
            lambda_max.push(hi);
        }
        Ok(CoefficientField {
            grid,
            spacing,
            entries,
            lambda,
            lambda_max,
            model: None,
        })
    }

    /// Reassembles a field from stored parts without recomputing the eigen-bounds.
    pub fn from_parts(
        grid: Grid,
        spacing: f64,
        entries: Vec<f64>,
        lambda: Vec<f64>,
        lambda_max: Vec<f64>,
    ) -> Result<Self> {
        check_spacing(spacing)?;
        let cells = grid.len();
        for (len, expected) in [
            (entries.len(), cells * tri_len(grid.dim())),
            (lambda.len(), cells),
            (lambda_max.len(), cells),
        ] {
            if len != expected {
                return Err(Error::Shape { expected, got: len });
            }
        }
        Ok(CoefficientField {
            grid,
            spacing,
            entries,
            lambda,
            lambda_max,
            model: None,
        })
    }

    /// Field with cell matrices `diag(values[cell])`.
    pub fn from_diagonals(grid: Grid, spacing: f64, diagonals: &[[f64; MAX_DIM]]) -> Result<Self> {
        let d = grid.dim();
        let m = tri_len(d);
        if diagonals.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: diagonals.len(),
            });
        }
        check_spacing(spacing)?;
        let mut entries = vec![0.0; grid.len() * m];
        let mut lambda = Vec::with_capacity(grid.len());
        let mut lambda_max = Vec::with_capacity(grid.len());
        for (cell, diag) in diagonals.iter().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for axis in 0..d {
                let v = diag[axis];
                if !v.is_finite() {
                    return Err(Error::Degenerate(format!(
                        "non-finite coefficient in cell {cell}"
                    )));
                }
                entries[cell * m + tri_index(d, axis, axis)] = v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            lambda.push(lo);
            lambda_max.push(hi);
        }
        Ok(CoefficientField {
            grid,
            spacing,
            entries,
            lambda,
            lambda_max,
            model: None,
        })
    }

    pub fn isotropic(grid: Grid, spacing: f64, values: &[f64]) -> Result<Self> {
        let diags: Vec<[f64; MAX_DIM]> = values.iter().map(|&v| [v; MAX_DIM]).collect();
        Self::from_diagonals(grid, spacing, &diags)
    }

    pub(crate) fn with_model(mut self, model: Model) -> Self {
        self.model = Some(model);
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn cells_per_side(&self) -> usize {
        self.grid.n()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn box_side(&self) -> f64 {
        self.grid.n() as f64 * self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_side().powi(self.dim() as i32)
    }

    /// Generating model, when the field came from a preset.
    pub fn model(&self) -> Option<&Model> {
        self.model.as_ref()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn cell_entries(&self, cell: usize) -> &[f64] {
        let m = tri_len(self.dim());
        &self.entries[cell * m..(cell + 1) * m]
    }

    pub fn entry(&self, cell: usize, i: usize, j: usize) -> f64 {
        self.cell_entries(cell)[tri_index(self.dim(), i, j)]
    }

    pub fn diagonal(&self, cell: usize, axis: usize) -> f64 {
        self.entry(cell, axis, axis)
    }

    pub fn cell_matrix(&self, cell: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.entry(cell, i, j))
    }

    /// `<a(x) xi, xi>` for one cell.
    pub fn quadratic_form(&self, cell: usize, xi: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += self.entry(cell, i, j) * xi[i] * xi[j];
            }
        }
        s
    }

    /// Smallest eigenvalue per cell.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Largest eigenvalue per cell.
    pub fn lambda_max(&self) -> &[f64] {
        &self.lambda_max
    }

    pub fn mean_lambda_inv(&self) -> f64 {
        self.lambda.iter().map(|l| 1.0 / l).sum::<f64>() / self.lambda.len() as f64
    }

    pub fn mean_lambda_max(&self) -> f64 {
        self.lambda_max.iter().sum::<f64>() / self.lambda_max.len() as f64
    }

    /// Spatial average of `<a xi, xi>`.
    pub fn mean_quadratic_form(&self, xi: &[f64]) -> f64 {
        (0..self.grid.len())
            .map(|c| self.quadratic_form(c, xi))
            .sum::<f64>()
            / self.grid.len() as f64
    }

    /// Field scaled by a constant factor.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Config(format!(
                "scale factor must be positive, got {c}"
            )));
        }
        let mut out = self.clone();
        out.entries.iter_mut().for_each(|v| *v *= c);
        out.lambda.iter_mut().for_each(|v| *v *= c);
        out.lambda_max.iter_mut().for_each(|v| *v *= c);
        out.model = None;
        Ok(out)
    }

    /// Hex digest of the geometry and cell entries.
    pub fn descriptor_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u32).to_le_bytes());
        h.update((self.grid.n() as u32).to_le_bytes());
        h.update(self.spacing.to_le_bytes());
        for v in &self.entries {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

fn check_spacing(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("spacing must be positive, got {h}")))
    }
}

fn eigen_bounds(cell: &[f64], d: usize) -> Result<(f64, f64)> {
    if cell.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite cell matrix entry".into()));
    }
    let diagonal_only = (0..d).all(|i| (i + 1..d).all(|j| cell[tri_index(d, i, j)] == 0.0));
    if diagonal_only {
        let diag = (0..d).map(|i| cell[tri_index(d, i, i)]);
        let lo = diag.clone().fold(f64::INFINITY, f64::min);
        let hi = diag.fold(f64::NEG_INFINITY, f64::max);
        return Ok((lo, hi));
    }
    let m = DMatrix::from_fn(d, d, |i, j| cell[tri_index(d, i, j)]);
    let eig = m.symmetric_eigenvalues();
    Ok((eig.min(), eig.max()))
}

/// Realizes a preset on an `n^d` periodic box with spacing `h`.
pub fn generate_field(
    spec: &EnvironmentSpec,
    cells_per_side: usize,
    spacing: f64,
) -> Result<CoefficientField> {
    generate_window(spec, cells_per_side, spacing, &[0; MAX_DIM])
}

/// Like [`generate_field`], but cell `x` of the box reads the medium at lattice point
/// `x + origin`. Windows of different sizes cut from one seed see the same medium.
pub fn generate_window(
    spec: &EnvironmentSpec,
    cells_per_side: usize,
    spacing: f64,
    origin: &[i64],
) -> Result<CoefficientField> {
    spec.validate()?;
    let grid = Grid::new(spec.dimension, cells_per_side)?;
    check_spacing(spacing)?;
    spec.validate_size(cells_per_side)?;
    let d = spec.dimension;
    let n = grid.len();
    let global = |cell: usize| -> [i64; MAX_DIM] {
        let c = grid.coords(cell);
        let mut g = [0i64; MAX_DIM];
        for axis in 0..d {
            g[axis] = c[axis] as i64 + origin.get(axis).copied().unwrap_or(0);
        }
        g
    };

    let field = match spec.model {
        Model::Identity => CoefficientField::isotropic(grid, spacing, &vec![1.0; n])?,
        Model::ScaledIdentity { c } => CoefficientField::isotropic(grid, spacing, &vec![c; n])?,
        Model::LaminateTwoPhase {
            a_low,
            a_high,
            volume_fraction,
        } => {
            let split = ((volume_fraction * cells_per_side as f64).round() as usize)
                .clamp(1, cells_per_side - 1);
            let values: Vec<f64> = (0..n)
                .map(|cell| {
                    if grid.coord(cell, 0) < split {
                        a_low
                    } else {
                        a_high
                    }
                })
                .collect();
            CoefficientField::isotropic(grid, spacing, &values)?
        }
        Model::Checkerboard {
            a_low,
            a_high,
            tile_cells,
        } => {
            let t = tile_cells as i64;
            let values: Vec<f64> = (0..n)
                .map(|cell| {
                    let g = global(cell);
                    let parity: i64 = g[..d].iter().map(|c| c.div_euclid(t)).sum();
                    if parity.rem_euclid(2) == 0 {
                        a_low
                    } else {
                        a_high
                    }
                })
                .collect();
            CoefficientField::isotropic(grid, spacing, &values)?
        }
        Model::HeavyTail {
            tail_index_lo,
            tail_index_hi,
            correlation_cells,
        } => {
            let base = ChaCha8Rng::seed_from_u64(spec.seed);
            let corr = correlation_cells as i64;
            let mut diags = Vec::with_capacity(n);
            for cell in 0..n {
                let g = global(cell);
                let mut block = [0i64; MAX_DIM];
                for axis in 0..d {
                    block[axis] = g[axis].div_euclid(corr);
                }
                let mut rng = base.clone();
                rng.set_stream(block_stream(&block)?);
                diags.push(heavy_tail_cell(&mut rng, d, tail_index_lo, tail_index_hi));
            }
            CoefficientField::from_diagonals(grid, spacing, &diags)?
        }
        Model::BesselTrap { exponent } => {
            let mid = vec![0.5 * grid.n() as f64 * spacing; d];
            let values: Vec<f64> = (0..n)
                .map(|cell| {
                    let r = grid.torus_distance(cell, &mid, spacing);
                    if r < 1.0 {
                        r.max(spacing).powf(-exponent)
                    } else {
                        1.0
                    }
                })
                .collect();
            CoefficientField::isotropic(grid, spacing, &values)?
        }
    };
    Ok(field.with_model(spec.model.clone()))
}

const BLOCK_BITS: u32 = 21;

/// Packs block coordinates into a ChaCha stream id.
fn block_stream(block: &[i64; MAX_DIM]) -> Result<u64> {
    let half = 1i64 << (BLOCK_BITS - 1);
    let mut id = 0u64;
    for &b in block {
        if b < -half || b >= half {
            return Err(Error::Range(format!(
                "block coordinate {b} outside the addressable window"
            )));
        }
        id = (id << BLOCK_BITS) | (b + half) as u64;
    }
    Ok(id)
}

/// One block of the heavy-tail law: `lambda = u^(1/lo)`, `Lambda = lambda v v^(-1/hi)`,
/// laid on a random pair of axes.
fn heavy_tail_cell(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> [f64; MAX_DIM] {
    let u = 1.0 - rng.random::<f64>();
    let v = 1.0 - rng.random::<f64>();
    let w1: f64 = rng.random();
    let w2: f64 = rng.random();
    let small = u.powf(1.0 / lo);
    let large = small.max(v.powf(-1.0 / hi));
    if d == 1 {
        return [small; MAX_DIM];
    }
    let lo_axis = ((w1 * d as f64) as usize).min(d - 1);
    let shift = ((w2 * (d - 1) as f64) as usize).min(d - 2);
    let hi_axis = (lo_axis + 1 + shift) % d;
    let mid = (small * large).sqrt();
    let mut diag = [mid; MAX_DIM];
    diag[lo_axis] = small;
    diag[hi_axis] = large;
    diag
}

/// Shifted copy: cell `x` of the result is cell `x + z` of the input.
pub fn translate(field: &CoefficientField, z: &[i64]) -> CoefficientField {
    let grid = *field.grid();
    let d = grid.dim();
    let m = tri_len(d);
    let n = grid.len();
    let mut entries = Vec::with_capacity(field.entries.len());
    let mut lambda = Vec::with_capacity(n);
    let mut lambda_max = Vec::with_capacity(n);
    for cell in 0..n {
        let src = shifted_index(&grid, cell, z);
        entries.extend_from_slice(&field.entries[src * m..(src + 1) * m]);
        lambda.push(field.lambda[src]);
        lambda_max.push(field.lambda_max[src]);
    }
    CoefficientField {
        grid,
        spacing: field.spacing,
        entries,
        lambda,
        lambda_max,
        model: field.model.clone(),
    }
}

/// Index of cell `x + z` (periodic).
pub fn shifted_index(grid: &Grid, cell: usize, z: &[i64]) -> usize {
    let c = grid.coords(cell);
    let mut p = [0i64; MAX_DIM];
    for axis in 0..grid.dim() {
        p[axis] = c[axis] as i64 + z.get(axis).copied().unwrap_or(0);
    }
    grid.wrap(&p)
}

/// Cell function shifted the same way as [`translate`].
pub fn translate_values(grid: &Grid, values: &[f64], z: &[i64]) -> Vec<f64> {
    (0..grid.len())
        .map(|cell| values[shifted_index(grid, cell, z)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn spec(model: Model, d: usize, seed: u64) -> EnvironmentSpec {
        EnvironmentSpec::new(model, d, seed)
    }

    #[test]
    fn tri_index_layout() {
        assert_eq!(tri_index(3, 0, 0), 0);
        assert_eq!(tri_index(3, 0, 2), 2);
        assert_eq!(tri_index(3, 1, 1), 3);
        assert_eq!(tri_index(3, 2, 1), 4);
        assert_eq!(tri_index(3, 2, 2), 5);
        assert_eq!(tri_index(2, 1, 1), 2);
        assert_eq!(tri_index(1, 0, 0), 0);
    }

    #[test]
    fn identity_cells_are_unit_matrices() {
        let f = generate_field(&spec(Model::Identity, 2, 0), 8, 1.0).unwrap();
        for c in 0..f.grid().len() {
            assert_eq!(f.entry(c, 0, 0), 1.0);
            assert_eq!(f.entry(c, 0, 1), 0.0);
            assert_eq!(f.entry(c, 1, 1), 1.0);
            assert_eq!(f.lambda()[c], 1.0);
            assert_eq!(f.lambda_max()[c], 1.0);
        }
    }

    #[test]
    fn checkerboard_alternates_parity() {
        let model = Model::Checkerboard {
            a_low: 1.0,
            a_high: 4.0,
            tile_cells: 1,
        };
        let f = generate_field(&spec(model, 2, 0), 4, 1.0).unwrap();
        let g = f.grid();
        assert_eq!(f.diagonal(g.index(&[0, 0]), 0), 1.0);
        assert_eq!(f.diagonal(g.index(&[1, 0]), 0), 4.0);
        assert_eq!(f.diagonal(g.index(&[1, 1]), 1), 1.0);
        assert_eq!(f.diagonal(g.index(&[3, 2]), 1), 4.0);
    }

    #[test]
    fn checkerboard_rejects_seamed_torus() {
        let model = Model::Checkerboard {
            a_low: 1.0,
            a_high: 4.0,
            tile_cells: 3,
        };
        assert!(generate_field(&spec(model, 2, 0), 8, 1.0).is_err());
    }

    #[test]
    fn laminate_layers_follow_axis_zero() {
        let model = Model::LaminateTwoPhase {
            a_low: 1.0,
            a_high: 4.0,
            volume_fraction: 0.5,
        };
        let f = generate_field(&spec(model, 2, 0), 8, 0.125).unwrap();
        let g = f.grid();
        for c in 0..g.len() {
            let expected = if g.coord(c, 0) < 4 { 1.0 } else { 4.0 };
            assert_eq!(f.diagonal(c, 0), expected);
            assert_eq!(f.diagonal(c, 1), expected);
        }
    }

    #[test]
    fn heavy_tail_is_deterministic_and_ordered() {
        let model = Model::HeavyTail {
            tail_index_lo: 3.0,
            tail_index_hi: 3.0,
            correlation_cells: 2,
        };
        let a = generate_field(&spec(model.clone(), 2, 11), 16, 1.0).unwrap();
        let b = generate_field(&spec(model.clone(), 2, 11), 16, 1.0).unwrap();
        let c = generate_field(&spec(model, 2, 12), 16, 1.0).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert_ne!(a.entries(), c.entries());
        for cell in 0..a.grid().len() {
            assert!(a.lambda()[cell] > 0.0);
            assert!(a.lambda()[cell] <= 1.0);
            assert!(a.lambda_max()[cell] >= 1.0);
        }
        // cells of one correlation block share their matrix
        let g = a.grid();
        assert_eq!(
            a.cell_entries(g.index(&[0, 0])),
            a.cell_entries(g.index(&[1, 1]))
        );
    }

    #[test]
    fn windows_share_the_medium() {
        let model = Model::HeavyTail {
            tail_index_lo: 3.0,
            tail_index_hi: 3.0,
            correlation_cells: 1,
        };
        let s = spec(model, 2, 5);
        let small = generate_window(&s, 8, 1.0, &[-4, -4]).unwrap();
        let large = generate_window(&s, 16, 1.0, &[-8, -8]).unwrap();
        // lattice point (0,0) sits at local (4,4) and (8,8)
        let gs = small.grid();
        let gl = large.grid();
        for dx in 0..4 {
            for dy in 0..4 {
                assert_eq!(
                    small.cell_entries(gs.index(&[2 + dx, 2 + dy])),
                    large.cell_entries(gl.index(&[6 + dx, 6 + dy]))
                );
            }
        }
    }

    #[test]
    fn bessel_trap_peaks_at_center() {
        let f =
            generate_field(&spec(Model::BesselTrap { exponent: 2.0 }, 2, 0), 16, 0.125).unwrap();
        let g = f.grid();
        let center = f.diagonal(g.index(&[8, 8]), 0);
        assert_eq!(center, 0.125f64.powf(-2.0));
        assert_eq!(f.diagonal(g.index(&[0, 0]), 0), 1.0);
    }

    #[test]
    fn eigen_bounds_enclose_quadratic_form() {
        let model = Model::HeavyTail {
            tail_index_lo: 2.0,
            tail_index_hi: 2.0,
            correlation_cells: 1,
        };
        let mut rng = StdRng::seed_from_u64(3);
        for d in 1..=3 {
            let f = generate_field(&spec(model.clone(), d, 1), 6, 1.0).unwrap();
            for _ in 0..1000 {
                let cell = rng.random_range(0..f.grid().len());
                let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm2: f64 = xi.iter().map(|x| x * x).sum();
                let q = f.quadratic_form(cell, &xi);
                let slack = 1e-12 * q.abs().max(1.0);
                assert!(f.lambda()[cell] * norm2 <= q + slack);
                assert!(q <= f.lambda_max()[cell] * norm2 + slack);
            }
        }
    }

    #[test]
    fn full_matrix_bounds_use_eigenvalues() {
        let grid = Grid::new(2, 2).unwrap();
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let entries = [2.0, 1.0, 2.0].repeat(4);
        let f = CoefficientField::from_entries(grid, 1.0, entries).unwrap();
        assert!((f.lambda()[0] - 1.0).abs() < 1e-12);
        assert!((f.lambda_max()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn translate_group_law() {
        let model = Model::HeavyTail {
            tail_index_lo: 3.0,
            tail_index_hi: 3.0,
            correlation_cells: 1,
        };
        let f = generate_field(&spec(model, 2, 2), 8, 1.0).unwrap();
        assert_eq!(translate(&f, &[0, 0]), f);
        let back = translate(&translate(&f, &[3, -5]), &[-3, 5]);
        assert_eq!(back, f);
        let composed = translate(&translate(&f, &[1, 2]), &[2, 1]);
        assert_eq!(composed, translate(&f, &[3, 3]));
        let t = translate(&f, &[1, 0]);
        let g = f.grid();
        assert_eq!(
            t.cell_entries(g.index(&[0, 0])),
            f.cell_entries(g.index(&[1, 0]))
        );
    }
}

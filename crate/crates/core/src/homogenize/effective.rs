use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::{harmonic_coordinates, CorrectorField};
use crate::energy::{CellFunction, DiscreteDirichletForm};
use crate::environment::CoefficientField;
use crate::error::{Error, Result};

/// Effective diffusivity `d_ij = 2 E(y^i, y^j) / volume`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    pub d: usize,
    /// Row-major `d x d`, symmetrized.
    pub entries: Vec<f64>,
    /// Per-entry bound `2 |E(y^i, chi^j)| / volume`, the first-order effect of the
    /// solver residual.
    pub error_bars: Vec<f64>,
    /// `max |d_ij - d_ji|` before symmetrization.
    pub asymmetry: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub field_hash: String,
}

impl EffectiveMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.entries)
    }

    /// `xi^T D xi`.
    pub fn quadratic(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += xi[i] * self.get(i, j) * xi[j];
            }
        }
        s
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    /// Largest `|d_ij - other_ij|`.
    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn effective_matrix(
    form: &DiscreteDirichletForm,
    correctors: &CorrectorField,
) -> Result<EffectiveMatrix> {
    if form.grid() != correctors.grid() {
        return Err(Error::Consistency(
            "correctors were solved on a different grid".into(),
        ));
    }
    if !form.field_hash().is_empty()
        && !correctors.field_hash().is_empty()
        && form.field_hash() != correctors.field_hash()
    {
        return Err(Error::Consistency(format!(
            "correctors belong to field {}, form to field {}",
            correctors.field_hash(),
            form.field_hash()
        )));
    }
    let d = form.dim();
    let vol = form.volume();
    let y = harmonic_coordinates(correctors);
    let chi: Vec<CellFunction> = (0..d).map(|k| correctors.function(k)).collect();
    let mut raw = vec![0.0; d * d];
    let mut error_bars = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            raw[i * d + j] = 2.0 * form.energy(&y.coordinates[i], &y.coordinates[j])? / vol;
            error_bars[i * d + j] = 2.0 * form.energy(&y.coordinates[i], &chi[j])?.abs() / vol;
        }
    }
    let mut entries = vec![0.0; d * d];
    let mut asymmetry: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            asymmetry = asymmetry.max((raw[i * d + j] - raw[j * d + i]).abs());
            entries[i * d + j] = 0.5 * (raw[i * d + j] + raw[j * d + i]);
        }
    }
    let mut eigenvalues: Vec<f64> = DMatrix::from_row_slice(d, d, &entries)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(f64::total_cmp);
    if !(eigenvalues[0] > 0.0) {
        return Err(Error::NotPositiveDefinite { eigenvalues });
    }
    Ok(EffectiveMatrix {
        d,
        entries,
        error_bars,
        asymmetry,
        eigenvalues,
        field_hash: correctors.field_hash().to_string(),
    })
}

/// Relative slack allowed on either variational bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub xi: Vec<f64>,
    /// `2 (avg lambda^-1)^-1 |xi|^2`.
    pub lower: f64,
    pub value: f64,
    /// `2 avg <a xi, xi>`.
    pub upper: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub lower_tight: bool,
    pub upper_tight: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub rows: Vec<BoundsRow>,
    pub tight_tolerance: f64,
    pub all_ok: bool,
}

/// Evaluates both variational bounds along every direction; a bound counts as tight
/// when it matches `xi^T D xi` to `tight_tolerance` relative.
pub fn check_bounds(
    matrix: &EffectiveMatrix,
    field: &CoefficientField,
    directions: &[Vec<f64>],
    tight_tolerance: f64,
) -> Result<BoundsReport> {
    let d = matrix.d;
    if field.dim() != d {
        return Err(Error::Shape {
            expected: d,
            got: field.dim(),
        });
    }
    let harmonic = 1.0 / field.mean_lambda_inv();
    let mut rows = Vec::with_capacity(directions.len());
    for xi in directions {
        if xi.len() != d {
            return Err(Error::Shape {
                expected: d,
                got: xi.len(),
            });
        }
        let norm2: f64 = xi.iter().map(|v| v * v).sum();
        let lower = 2.0 * harmonic * norm2;
        let upper = 2.0 * field.mean_quadratic_form(xi);
        let value = matrix.quadratic(xi);
        let scale = value.abs().max(f64::MIN_POSITIVE);
        rows.push(BoundsRow {
            xi: xi.clone(),
            lower,
            value,
            upper,
            lower_ok: value - lower >= -BOUND_SLACK * scale,
            upper_ok: upper - value >= -BOUND_SLACK * scale,
            lower_tight: (value - lower).abs() <= tight_tolerance * scale,
            upper_tight: (value - upper).abs() <= tight_tolerance * scale,
        });
    }
    let all_ok = rows.iter().all(|r| r.lower_ok && r.upper_ok);
    Ok(BoundsReport {
        rows,
        tight_tolerance,
        all_ok,
    })
}

/// `count` directions uniform on the unit sphere.
pub fn random_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 && n <= 1.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// The coordinate directions.
pub fn unit_directions(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|k| (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_correctors;
    use crate::energy::assemble;
    use crate::environment::{generate_field, EnvironmentSpec, Model};
    use crate::solver::SolverConfig;

    fn solve(field: &CoefficientField) -> EffectiveMatrix {
        let form = assemble(field);
        let cfg = SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        };
        effective_matrix(&form, &solve_correctors(&form, &cfg).unwrap()).unwrap()
    }

    fn checkerboard(a_low: f64, a_high: f64, n: usize) -> CoefficientField {
        let spec = EnvironmentSpec::new(
            Model::Checkerboard {
                a_low,
                a_high,
                tile_cells: n / 2,
            },
            2,
            0,
        );
        generate_field(&spec, n, 1.0 / n as f64).unwrap()
    }

    #[test]
    fn identity_gives_twice_identity() {
        for d in 1..=3 {
            let f = generate_field(&EnvironmentSpec::new(Model::Identity, d, 0), 8, 0.125).unwrap();
            let m = solve(&f);
            for i in 0..d {
                for j in 0..d {
                    let want = if i == j { 2.0 } else { 0.0 };
                    assert!((m.get(i, j) - want).abs() < 1e-12);
                }
            }
            let b = check_bounds(&m, &f, &unit_directions(d), 1e-9).unwrap();
            assert!(b.rows.iter().all(|r| r.lower_tight && r.upper_tight));
        }
    }

    #[test]
    fn laminate_is_series_and_parallel() {
        let spec = EnvironmentSpec::new(
            Model::LaminateTwoPhase {
                a_low: 1.0,
                a_high: 4.0,
                volume_fraction: 0.5,
            },
            2,
            0,
        );
        let f = generate_field(&spec, 64, 1.0 / 64.0).unwrap();
        let m = solve(&f);
        assert!((m.get(0, 0) - 3.2).abs() < 1e-9);
        assert!((m.get(1, 1) - 5.0).abs() < 1e-9);
        assert!(m.get(0, 1).abs() < 1e-9);
        let b = check_bounds(&m, &f, &unit_directions(2), 1e-8).unwrap();
        assert!(b.rows[0].lower_tight && b.rows[1].upper_tight && b.all_ok);
    }

    #[test]
    fn scaling_is_covariant() {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: 3.0,
                correlation_cells: 1,
            },
            2,
            12,
        );
        let f = generate_field(&spec, 16, 1.0 / 16.0).unwrap();
        let a = solve(&f);
        let b = solve(&f.scaled(3.5).unwrap());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert!((3.5 * x - y).abs() < 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn bounds_hold_on_random_directions() {
        for seed in 0..4 {
            let spec = EnvironmentSpec::new(
                Model::HeavyTail {
                    tail_index_lo: 3.0,
                    tail_index_hi: 3.0,
                    correlation_cells: 2,
                },
                2,
                seed,
            );
            let f = generate_field(&spec, 16, 1.0 / 16.0).unwrap();
            let m = solve(&f);
            assert!(m.asymmetry < 1e-10);
            let b = check_bounds(&m, &f, &random_directions(2, 20, seed), 1e-6).unwrap();
            assert!(b.all_ok, "{b:?}");
        }
    }

    #[test]
    fn checkerboard_self_duality() {
        let n = 32;
        let m = solve(&checkerboard(1.0, 4.0, n));
        // det(D)/4 is the product of the phases
        assert!((m.determinant() / 4.0 - 4.0).abs() < 0.03 * 4.0);
        // sigma(a) sigma(1/a) = 1 with sigma = D/2
        let dual = solve(&checkerboard(0.25, 1.0, n));
        let prod = m.get(0, 0) * dual.get(0, 0) / 4.0;
        assert!((prod - 1.0).abs() < 0.03, "{prod}");
    }

    #[test]
    fn mismatched_hash_is_rejected() {
        let f = checkerboard(1.0, 4.0, 8);
        let g = checkerboard(1.0, 2.0, 8);
        let chi = solve_correctors(&assemble(&g), &SolverConfig::default()).unwrap();
        assert!(matches!(
            effective_matrix(&assemble(&f), &chi),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn directions_are_unit() {
        for v in random_directions(3, 20, 1) {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

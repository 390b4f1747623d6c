use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::walk::{SegmentVisitor, WalkEnsemble};
use crate::corrector::CorrectorField;
use crate::error::{Error, Result};
use crate::grid::MAX_DIM;
use crate::homogenize::EffectiveMatrix;

/// `y(X_t)`, `chi(X_t)` and the bracket `<M^h, M^k>_t` at every record time of a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPath {
    pub index: usize,
    pub y: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
    /// Row-major `d x d` per record.
    pub qv: Vec<Vec<f64>>,
    /// `max |X_t - y(X_t) - chi(X_t)|` over the record times.
    pub decomposition_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub times: Vec<f64>,
    /// Mean over paths of `<M>_t / t` per record time with `t > 0`.
    pub mean_qv_over_t: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// `|mean <M^k,M^k>_t / t - d_kk| / d_kk` at the horizon.
    pub diagonal_relative_errors: Vec<f64>,
    /// Every path's bracket diagonal is nondecreasing in `t`.
    pub monotone: bool,
    pub max_decomposition_error: f64,
    /// Largest correlation between increments of `y^k` over adjacent record intervals.
    pub max_increment_correlation: f64,
}

/// The density `f_hk(x) = sum_e a_e g^h_e g^k_e` over the `2d` edges at `x`, with
/// `g_e` the increment of `y` across `e` divided by `h`. It is the jump rate times the
/// product of increments, so `int f(X_s) ds` is the predictable bracket of `y(X)`.
pub fn bracket_density(ensemble: &WalkEnsemble, correctors: &CorrectorField) -> Vec<Vec<f64>> {
    let rates = ensemble.rates();
    let grid = *rates.grid();
    let d = grid.dim();
    let h = rates.spacing();
    (0..grid.len())
        .map(|x| {
            let mut f = vec![0.0; d * d];
            for axis in 0..d {
                for (dir, forward) in [(2 * axis, true), (2 * axis + 1, false)] {
                    let z = grid.step(x, axis, forward);
                    let sign = if forward { 1.0 } else { -1.0 };
                    let inc: Vec<f64> = (0..d)
                        .map(|k| {
                            let affine = if k == axis { sign * h } else { 0.0 };
                            affine - (correctors.chi(k)[z] - correctors.chi(k)[x])
                        })
                        .collect();
                    let rate = rates.rate(x, dir);
                    for i in 0..d {
                        for j in 0..d {
                            f[i * d + j] += rate * inc[i] * inc[j];
                        }
                    }
                }
            }
            f
        })
        .collect()
}

struct Decomposer<'a> {
    d: usize,
    h: f64,
    density: &'a [Vec<f64>],
    correctors: &'a CorrectorField,
    running: Vec<f64>,
    out: AugmentedPath,
}

impl SegmentVisitor for Decomposer<'_> {
    fn segment(&mut self, cell: usize, _: &[i64; MAX_DIM], t0: f64, t1: f64) {
        let dt = t1 - t0;
        for (r, f) in self.running.iter_mut().zip(&self.density[cell]) {
            *r += f * dt;
        }
    }

    fn record(&mut self, _: usize, cell: usize, pos: &[i64; MAX_DIM]) {
        let mut y = Vec::with_capacity(self.d);
        let mut chi = Vec::with_capacity(self.d);
        for k in 0..self.d {
            let x = (pos[k] as f64 + 0.5) * self.h;
            let c = self.correctors.chi(k)[cell];
            let yk = x - c;
            self.out.decomposition_error = self.out.decomposition_error.max((x - (yk + c)).abs());
            y.push(yk);
            chi.push(c);
        }
        self.out.y.push(y);
        self.out.chi.push(chi);
        self.out.qv.push(self.running.clone());
    }
}

/// Records `y(X_t)`, `chi(X_t)` and the bracket along every path by replaying it.
pub fn martingale_decomposition(
    ensemble: &WalkEnsemble,
    correctors: &CorrectorField,
    target: &EffectiveMatrix,
) -> Result<(Vec<AugmentedPath>, QvReport)> {
    if ensemble.field_hash() != correctors.field_hash()
        || correctors.grid() != ensemble.rates().grid()
    {
        return Err(Error::Consistency(format!(
            "walk ran on field {}, correctors belong to field {}",
            ensemble.field_hash(),
            correctors.field_hash()
        )));
    }
    if ensemble.clock().is_some() {
        return Err(Error::Consistency(
            "the decomposition needs the walk in its own clock, not a time-changed one".into(),
        ));
    }
    let d = ensemble.dim();
    let h = ensemble.spacing();
    let density = bracket_density(ensemble, correctors);
    let paths: Vec<AugmentedPath> = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut v = Decomposer {
                d,
                h,
                density: &density,
                correctors,
                running: vec![0.0; d * d],
                out: AugmentedPath {
                    index: p.index,
                    y: Vec::new(),
                    chi: Vec::new(),
                    qv: Vec::new(),
                    decomposition_error: 0.0,
                },
            };
            ensemble.replay(p.index, &mut v);
            v.out
        })
        .collect();

    let n = paths.len() as f64;
    let times = ensemble.times.clone();
    let mut mean_qv_over_t = Vec::new();
    for (k, &t) in times.iter().enumerate().filter(|(_, &t)| t > 0.0) {
        let mut m = vec![0.0; d * d];
        for p in &paths {
            for (a, b) in m.iter_mut().zip(&p.qv[k]) {
                *a += b / (n * t);
            }
        }
        mean_qv_over_t.push(m);
    }
    let last = mean_qv_over_t
        .last()
        .cloned()
        .unwrap_or_else(|| vec![0.0; d * d]);
    let diagonal_relative_errors = (0..d)
        .map(|k| (last[k * d + k] - target.get(k, k)).abs() / target.get(k, k))
        .collect();
    let monotone = paths.iter().all(|p| {
        p.qv.windows(2)
            .all(|w| (0..d).all(|k| w[1][k * d + k] >= w[0][k * d + k]))
    });
    let max_decomposition_error = paths
        .iter()
        .map(|p| p.decomposition_error)
        .fold(0.0, f64::max);
    Ok((
        paths.clone(),
        QvReport {
            times,
            mean_qv_over_t,
            target: target.entries.clone(),
            diagonal_relative_errors,
            monotone,
            max_decomposition_error,
            max_increment_correlation: increment_correlation(&paths, d),
        },
    ))
}

fn increment_correlation(paths: &[AugmentedPath], d: usize) -> f64 {
    let records = paths.first().map_or(0, |p| p.y.len());
    let mut worst: f64 = 0.0;
    for k in 1..records.saturating_sub(1) {
        for c in 0..d {
            let pairs: Vec<(f64, f64)> = paths
                .iter()
                .map(|p| (p.y[k][c] - p.y[k - 1][c], p.y[k + 1][c] - p.y[k][c]))
                .collect();
            worst = worst.max(correlation(&pairs).abs());
        }
    }
    worst
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_correctors;
    use crate::energy::assemble;
    use crate::environment::{generate_field, EnvironmentSpec, Model};
    use crate::homogenize::effective_matrix;
    use crate::montecarlo::{simulate_walk, Start, WalkConfig};
    use crate::solver::SolverConfig;

    fn setup(
        model: Model,
        n: usize,
        paths: usize,
    ) -> (WalkEnsemble, CorrectorField, EffectiveMatrix) {
        let f = generate_field(&EnvironmentSpec::new(model, 2, 0), n, 1.0 / n as f64).unwrap();
        let form = assemble(&f);
        let chi = solve_correctors(&form, &SolverConfig::default()).unwrap();
        let dm = effective_matrix(&form, &chi).unwrap();
        let cfg = WalkConfig {
            start: Start::Uniform,
            t_max: 0.5,
            paths,
            seed: 9,
            record_stride: 0.125,
        };
        (simulate_walk(&f, &cfg).unwrap(), chi, dm)
    }

    #[test]
    fn identity_bracket_is_deterministic() {
        let (e, chi, dm) = setup(Model::Identity, 8, 20);
        let (paths, report) = martingale_decomposition(&e, &chi, &dm).unwrap();
        for p in &paths {
            for (k, t) in e.times.iter().enumerate() {
                assert!((p.qv[k][0] - 2.0 * t).abs() < 1e-12);
                assert!((p.qv[k][3] - 2.0 * t).abs() < 1e-12);
                assert!(p.qv[k][1].abs() < 1e-12);
                assert_eq!(p.chi[k], vec![0.0, 0.0]);
            }
        }
        assert_eq!(report.max_decomposition_error, 0.0);
        assert!(report.monotone);
    }

    #[test]
    fn density_averages_to_effective_matrix() {
        let (e, chi, dm) = setup(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 2,
            },
            8,
            1,
        );
        let f = bracket_density(&e, &chi);
        for i in 0..4 {
            let avg = f.iter().map(|v| v[i]).sum::<f64>() / f.len() as f64;
            assert!(
                (avg - dm.entries[i]).abs() < 1e-8,
                "{avg} vs {}",
                dm.entries[i]
            );
        }
    }

    #[test]
    fn checkerboard_bracket_tracks_d() {
        let (e, chi, dm) = setup(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 2,
            },
            16,
            2000,
        );
        let (_, report) = martingale_decomposition(&e, &chi, &dm).unwrap();
        assert!(report.monotone);
        assert!(report.max_decomposition_error < 1e-12);
        for err in report.diagonal_relative_errors {
            assert!(err < 0.03, "{err}");
        }
        assert!(report.max_increment_correlation < 0.1);
    }

    #[test]
    fn foreign_correctors_are_rejected() {
        let (e, _, dm) = setup(Model::Identity, 8, 2);
        let g = generate_field(
            &EnvironmentSpec::new(Model::ScaledIdentity { c: 2.0 }, 2, 0),
            8,
            0.125,
        )
        .unwrap();
        let other = solve_correctors(&assemble(&g), &SolverConfig::default()).unwrap();
        assert!(matches!(
            martingale_decomposition(&e, &other, &dm),
            Err(Error::Consistency(_))
        ));
    }
}

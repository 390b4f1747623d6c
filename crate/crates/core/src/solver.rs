//! Matrix-free preconditioned conjugate gradients.
//!
//! The periodic cell problem is singular with the constants as kernel; with
//! `project_mean` set, the right-hand side and every preconditioned residual are
//! projected onto mean-zero vectors so the iteration stays in the range of the operator.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::energy::DiscreteDirichletForm;
use crate::error::{config, Error, Result};
use crate::grid::Grid;

pub trait LinearOperator {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

impl LinearOperator for DiscreteDirichletForm {
    fn len(&self) -> usize {
        self.cells()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        DiscreteDirichletForm::apply(self, x, y)
    }
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling.
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(diag: &[f64]) -> Result<Self> {
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Singular(format!(
                "non-positive diagonal entry at row {i}"
            )));
        }
        Ok(Jacobi {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
        })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

/// Exact inverse of the constant-coefficient periodic Laplacian
/// `sum_k c_k (2 u(x) - u(x + e_k) - u(x - e_k))`, diagonalized by the FFT.
/// `c_k` is the mean edge conductance along axis `k`; the zero mode is dropped.
pub struct FourierPreconditioner {
    grid: Grid,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    inv_symbol: Vec<f64>,
}

impl FourierPreconditioner {
    pub fn new(form: &DiscreteDirichletForm) -> Self {
        let grid = *form.grid();
        let means: Vec<f64> = (0..grid.dim())
            .map(|k| form.conductance(k).iter().sum::<f64>() / grid.len() as f64)
            .collect();
        Self::with_conductances(grid, &means)
    }

    pub fn with_conductances(grid: Grid, means: &[f64]) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let mode: Vec<f64> = (0..n)
            .map(|m| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos())
            .collect();
        let inv_symbol = (0..grid.len())
            .map(|c| {
                let coords = grid.coords(c);
                let s: f64 = (0..grid.dim()).map(|k| means[k] * mode[coords[k]]).sum();
                if c == 0 || s <= 0.0 {
                    0.0
                } else {
                    1.0 / s
                }
            })
            .collect();
        FourierPreconditioner {
            grid,
            fft,
            ifft,
            inv_symbol,
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n();
        let mut line = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.grid.dim() {
            let s = self.grid.stride(axis);
            let block = n * s;
            for base in (0..data.len()).step_by(block) {
                for inner in 0..s {
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[base + inner + j * s];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[base + inner + j * s] = *v;
                    }
                }
            }
        }
    }
}

impl Preconditioner for FourierPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut data: Vec<Complex<f64>> = r.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.fft);
        for (v, s) in data.iter_mut().zip(&self.inv_symbol) {
            *v *= *s;
        }
        self.transform(&mut data, &self.ifft);
        let norm = 1.0 / self.grid.len() as f64;
        for (z, v) in z.iter_mut().zip(&data) {
            *z = v.re * norm;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative residual target `||b - A x|| / ||b||`.
    pub tol: f64,
    pub max_iter: usize,
    pub project_mean: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 5000,
            project_mean: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return config(format!("solver tol must be in (0, 1), got {}", self.tol));
        }
        if self.max_iter == 0 {
            return config("solver max_iter must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// True relative residual of the returned solution.
    pub residual: f64,
    /// Recurrence residual after each iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`.
pub fn pcg(
    op: &dyn LinearOperator,
    pre: &dyn Preconditioner,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let n = op.len();
    if b.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: b.len(),
        });
    }
    let mut rhs = b.to_vec();
    if cfg.project_mean {
        remove_mean(&mut rhs);
    }
    let b_norm = dot(&rhs, &rhs).sqrt();
    if b_norm == 0.0 {
        return Ok(SolveOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            history: Vec::new(),
        });
    }

    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => {
            return Err(Error::Shape {
                expected: n,
                got: x0.len(),
            })
        }
        None => vec![0.0; n],
    };
    if cfg.project_mean {
        remove_mean(&mut x);
    }
    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    if cfg.project_mean {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    let mut iterations = 0;

    while rel > cfg.tol {
        if iterations == cfg.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: rel,
            });
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Singular(format!(
                "search direction with non-positive curvature {pap:e} at iteration {iterations}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        pre.apply(&r, &mut z);
        if cfg.project_mean {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
        rel = dot(&r, &r).sqrt() / b_norm;
        history.push(rel);
    }

    if cfg.project_mean {
        remove_mean(&mut x);
    }
    op.apply(&x, &mut ax);
    let true_res = rhs
        .iter()
        .zip(&ax)
        .map(|(b, a)| (b - a).powi(2))
        .sum::<f64>()
        .sqrt()
        / b_norm;
    Ok(SolveOutcome {
        solution: x,
        iterations,
        residual: true_res,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::assemble;
    use crate::environment::{generate_field, EnvironmentSpec, Model};
    use nalgebra::{DMatrix, DVector};

    fn dense(op: &dyn LinearOperator) -> DMatrix<f64> {
        let n = op.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    // (A + 11^T / n) x = b has the mean-zero solution of A x = b when sum b = 0.
    fn dense_solve(op: &dyn LinearOperator, b: &[f64]) -> Vec<f64> {
        let n = op.len();
        let a = dense(op).add_scalar(1.0 / n as f64);
        let x = a.lu().solve(&DVector::from_column_slice(b)).unwrap();
        x.iter().copied().collect()
    }

    fn heavy(d: usize, n: usize, seed: u64) -> DiscreteDirichletForm {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: 3.0,
                correlation_cells: 1,
            },
            d,
            seed,
        );
        assemble(&generate_field(&spec, n, 1.0 / n as f64).unwrap())
    }

    #[test]
    fn fourier_preconditioner_inverts_constant_laplacian() {
        let grid = Grid::new(2, 8).unwrap();
        let form = DiscreteDirichletForm::from_conductances(
            grid,
            0.125,
            vec![vec![2.0; 64], vec![0.5; 64]],
        )
        .unwrap();
        let pre = FourierPreconditioner::new(&form);
        let mut u: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        remove_mean(&mut u);
        let mut lu = vec![0.0; 64];
        form.apply(&u, &mut lu);
        let mut back = vec![0.0; 64];
        pre.apply(&lu, &mut back);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let out = pcg(&form, &pre, &lu, None, &SolverConfig::default()).unwrap();
        assert!(out.iterations <= 1);
    }

    #[test]
    fn matches_dense_solve_on_small_grids() {
        for (d, n) in [(1, 4), (2, 4), (3, 4), (2, 3)] {
            for seed in 0..3 {
                let form = heavy(d, n, seed);
                let b = form.affine_load(&vec![1.0; d]);
                let cfg = SolverConfig {
                    tol: 1e-13,
                    ..SolverConfig::default()
                };
                let fast = pcg(&form, &FourierPreconditioner::new(&form), &b, None, &cfg).unwrap();
                let slow = dense_solve(&form, &b);
                for (a, b) in fast.solution.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-8, "d={d} n={n}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn preconditioners_agree() {
        let form = heavy(2, 16, 4);
        let b = form.affine_load(&[0.0, 1.0]);
        let cfg = SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        };
        let f = pcg(&form, &FourierPreconditioner::new(&form), &b, None, &cfg).unwrap();
        let j = pcg(
            &form,
            &Jacobi::new(&form.diagonal()).unwrap(),
            &b,
            None,
            &cfg,
        )
        .unwrap();
        let i = pcg(&form, &IdentityPreconditioner, &b, None, &cfg).unwrap();
        for k in 0..b.len() {
            assert!((f.solution[k] - j.solution[k]).abs() < 1e-9);
            assert!((f.solution[k] - i.solution[k]).abs() < 1e-9);
        }
        assert!(f.residual <= 1e-11);
        assert_eq!(f.history.len(), f.iterations);
    }

    #[test]
    fn reports_non_convergence() {
        let form = heavy(2, 16, 1);
        let b = form.affine_load(&[1.0, 0.0]);
        let cfg = SolverConfig {
            tol: 1e-12,
            max_iter: 2,
            project_mean: true,
        };
        match pcg(&form, &IdentityPreconditioner, &b, None, &cfg) {
            Err(Error::NonConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let form = heavy(2, 8, 0);
        let out = pcg(
            &form,
            &IdentityPreconditioner,
            &[0.0; 64],
            None,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.solution.iter().all(|&v| v == 0.0));
    }
}

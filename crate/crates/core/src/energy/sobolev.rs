//! Empirical ratios for the local Sobolev inequalities.
//!
//! All norms here are the un-normalized ones, `||u||_r = (h^d sum |u|^r)^(1/r)`.

use super::form::{CellFunction, DiscreteDirichletForm};
use super::moser::{holder_conjugate, sobolev_exponent};
use crate::environment::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{volume_norm, Ball};

fn check_support(field: &CoefficientField, u: &[f64], ball: &Ball) -> Result<Vec<usize>> {
    let grid = field.grid();
    if u.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            got: u.len(),
        });
    }
    let mask = ball.mask(grid, field.spacing());
    if let Some(cell) = (0..u.len()).find(|&c| !mask[c] && u[c] != 0.0) {
        return Err(Error::Range(format!(
            "test function is nonzero at cell {cell} outside the ball"
        )));
    }
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedRatio(
            "test function vanishes identically".into(),
        ));
    }
    Ok((0..grid.len()).filter(|&c| mask[c]).collect())
}

fn inv_lambda(field: &CoefficientField) -> Vec<f64> {
    field.lambda().iter().map(|l| 1.0 / l).collect()
}

/// `||u||_rho^2 / (||1_B lambda^-1||_q E(u,u))` for `u` supported in `ball`.
pub fn sobolev_ratio(
    form: &DiscreteDirichletForm,
    field: &CoefficientField,
    u: &[f64],
    ball: &Ball,
    q: f64,
) -> Result<f64> {
    let cells = check_support(field, u, ball)?;
    let vol = field.cell_volume();
    let rho = sobolev_exponent(q, field.dim());
    let all: Vec<usize> = (0..u.len()).collect();
    let num = volume_norm(u, &all, rho, vol).powi(2);
    let weight = volume_norm(&inv_lambda(field), &cells, q, vol);
    let e = energy_of(form, u)?;
    Ok(num / (weight * e))
}

/// `||u||_{rho/p*, Lambda}^2 / (||1_B lambda^-1||_q ||1_B Lambda||_p^(2p*/rho) E(u,u))`.
pub fn weighted_sobolev_ratio(
    form: &DiscreteDirichletForm,
    field: &CoefficientField,
    u: &[f64],
    ball: &Ball,
    p: f64,
    q: f64,
) -> Result<f64> {
    let cells = check_support(field, u, ball)?;
    let vol = field.cell_volume();
    let rho = sobolev_exponent(q, field.dim());
    let p_star = holder_conjugate(p);
    let r = rho / p_star;
    let big = field.lambda_max();
    let weighted: f64 = (0..u.len())
        .map(|c| u[c].abs().powf(r) * big[c])
        .sum::<f64>()
        * vol;
    let num = weighted.powf(2.0 / r);
    let weight = volume_norm(&inv_lambda(field), &cells, q, vol)
        * volume_norm(big, &cells, p, vol).powf(2.0 * p_star / rho);
    let e = energy_of(form, u)?;
    Ok(num / (weight * e))
}

fn energy_of(form: &DiscreteDirichletForm, u: &[f64]) -> Result<f64> {
    let f = CellFunction::periodic(form.dim(), u.to_vec());
    let e = form.energy(&f, &f)?;
    if e <= 0.0 {
        return Err(Error::UndefinedRatio(
            "test function has zero energy".into(),
        ));
    }
    Ok(e)
}

/// Piecewise-linear radial ramp: 1 inside `inner`, 0 beyond `outer`.
/// Its lattice gradient is bounded by `1 / (outer - inner)`.
pub fn radial_cutoff(field: &CoefficientField, center: &[f64], inner: f64, outer: f64) -> Vec<f64> {
    let grid = field.grid();
    let h = field.spacing();
    (0..grid.len())
        .map(|c| {
            let r = grid.torus_distance(c, center, h);
            ((outer - r) / (outer - inner)).clamp(0.0, 1.0)
        })
        .collect()
}

/// `||eta u||_rho^2 / (2 ||1_B lambda^-1||_q [E_eta(u,u) + ||grad eta||_inf^2 ||1_B u||_{2,Lambda}^2])`.
pub fn cutoff_sobolev_ratio(
    form: &DiscreteDirichletForm,
    field: &CoefficientField,
    u: &[f64],
    eta: &[f64],
    ball: &Ball,
    q: f64,
) -> Result<f64> {
    let grid = field.grid();
    if u.len() != grid.len() || eta.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            got: u.len().min(eta.len()),
        });
    }
    let h = field.spacing();
    let mask = ball.mask(grid, h);
    let cells: Vec<usize> = (0..grid.len()).filter(|&c| mask[c]).collect();
    if eta.iter().zip(&mask).any(|(&e, &m)| !m && e != 0.0) {
        return Err(Error::Range("cutoff must vanish outside the ball".into()));
    }
    let vol = field.cell_volume();
    let rho = sobolev_exponent(q, field.dim());
    let eta_u: Vec<f64> = u.iter().zip(eta).map(|(a, b)| a * b).collect();
    if eta_u.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedRatio("eta u vanishes identically".into()));
    }
    let all: Vec<usize> = (0..u.len()).collect();
    let num = volume_norm(&eta_u, &all, rho, vol).powi(2);

    let f = CellFunction::periodic(field.dim(), u.to_vec());
    let e_eta = form.weighted_energy(&f, |x, y| 0.5 * (eta[x] * eta[x] + eta[y] * eta[y]))?;
    let mut grad_sup: f64 = 0.0;
    for axis in 0..field.dim() {
        for x in 0..grid.len() {
            let y = grid.step(x, axis, true);
            grad_sup = grad_sup.max((eta[y] - eta[x]).abs() / h);
        }
    }
    let big = field.lambda_max();
    let l2_lambda: f64 = cells.iter().map(|&c| u[c] * u[c] * big[c]).sum::<f64>() * vol;
    let weight = volume_norm(&inv_lambda(field), &cells, q, vol);
    let denom = 2.0 * weight * (e_eta + grad_sup * grad_sup * l2_lambda);
    if denom <= 0.0 {
        return Err(Error::UndefinedRatio("cutoff energy vanishes".into()));
    }
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::assemble;
    use crate::environment::{generate_field, translate, translate_values, EnvironmentSpec, Model};

    fn bump(field: &CoefficientField, center: &[f64], radius: f64, shape: usize) -> Vec<f64> {
        let grid = field.grid();
        let h = field.spacing();
        (0..grid.len())
            .map(|c| {
                let r = grid.torus_distance(c, center, h) / radius;
                if r >= 1.0 {
                    return 0.0;
                }
                match shape {
                    0 => 1.0 - r,
                    1 => (1.0 - r * r).powi(2),
                    2 => (std::f64::consts::FRAC_PI_2 * r).cos(),
                    3 => (1.0 - r).powi(3),
                    _ => (-1.0 / (1.0 - r * r)).exp(),
                }
            })
            .collect()
    }

    #[test]
    fn identity_ratio_is_bounded_on_bump_corpus() {
        let spec = EnvironmentSpec::new(Model::Identity, 2, 0);
        let f = generate_field(&spec, 64, 1.0 / 64.0).unwrap();
        let form = assemble(&f);
        let ball = Ball::box_centered(f.grid(), f.spacing(), 0.3);
        for shape in 0..5 {
            for radius in [0.1, 0.2, 0.3] {
                let u = bump(&f, &ball.center, radius, shape);
                let r = sobolev_ratio(&form, &f, &u, &ball, 2.0).unwrap();
                assert!(r > 0.0 && r < 10.0, "shape {shape} radius {radius}: {r}");
            }
        }
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: 3.0,
                correlation_cells: 2,
            },
            2,
            3,
        );
        let f = generate_field(&spec, 32, 1.0 / 32.0).unwrap();
        let g = f.scaled(7.5).unwrap();
        let ball = Ball::box_centered(f.grid(), f.spacing(), 0.3);
        let u = bump(&f, &ball.center, 0.25, 1);
        let a = sobolev_ratio(&assemble(&f), &f, &u, &ball, f64::INFINITY).unwrap();
        let b = sobolev_ratio(&assemble(&g), &g, &u, &ball, f64::INFINITY).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn ratio_is_translation_invariant() {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: 3.0,
                correlation_cells: 1,
            },
            2,
            6,
        );
        let f = generate_field(&spec, 32, 1.0 / 32.0).unwrap();
        let ball = Ball::around_cell(f.grid(), f.spacing(), 300, 0.25);
        let u = bump(&f, &ball.center, 0.2, 2);
        let z = [5i64, -9];
        let ft = translate(&f, &z);
        let ut = translate_values(f.grid(), &u, &z);
        // the ball moves with the function: cell x of the shifted box is cell x+z of the original
        let h = f.spacing();
        let center: Vec<f64> = ball
            .center
            .iter()
            .zip(&z)
            .map(|(c, &s)| (c - s as f64 * h).rem_euclid(f.box_side()))
            .collect();
        let bt = Ball::new(center, 0.25);
        let a = sobolev_ratio(&assemble(&f), &f, &u, &ball, 2.0).unwrap();
        let b = sobolev_ratio(&assemble(&ft), &ft, &ut, &bt, 2.0).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn zero_function_is_rejected() {
        let spec = EnvironmentSpec::new(Model::Identity, 2, 0);
        let f = generate_field(&spec, 8, 1.0).unwrap();
        let ball = Ball::box_centered(f.grid(), 1.0, 2.0);
        let err = sobolev_ratio(&assemble(&f), &f, &vec![0.0; 64], &ball, 2.0);
        assert!(matches!(err, Err(Error::UndefinedRatio(_))));
        let mut u = vec![0.0; 64];
        u[0] = 1.0;
        let err = sobolev_ratio(&assemble(&f), &f, &u, &ball, 2.0);
        assert!(matches!(err, Err(Error::Range(_))));
    }

    #[test]
    fn weighted_and_cutoff_variants_are_finite() {
        let spec = EnvironmentSpec::new(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 4,
            },
            2,
            0,
        );
        let f = generate_field(&spec, 32, 1.0 / 32.0).unwrap();
        let form = assemble(&f);
        let ball = Ball::box_centered(f.grid(), f.spacing(), 0.4);
        let u = bump(&f, &ball.center, 0.3, 1);
        let w = weighted_sobolev_ratio(&form, &f, &u, &ball, 3.0, 2.0).unwrap();
        assert!(w.is_finite() && w > 0.0);
        // cutoff variant on a function that does not vanish on the ball
        let eta = radial_cutoff(&f, &ball.center, 0.2, 0.38);
        let ones = vec![1.0; f.grid().len()];
        let c = cutoff_sobolev_ratio(&form, &f, &ones, &eta, &ball, 2.0).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corrector::{solve_scan, CorrectorField};
use crate::energy::{DiscreteDirichletForm, MoserSchedule};
use crate::environment::{CoefficientField, EnvironmentSpec};
use crate::error::{config, Error, Result};
use crate::grid::{ball_norm, Ball};
use crate::serde_ext::extended_f64;
use crate::solver::{pcg, Jacobi, LinearOperator, SolverConfig};

fn check_radii(sigma_prime: f64, sigma: f64) -> Result<()> {
    if !(0.5 <= sigma_prime && sigma_prime < sigma && sigma <= 1.0) {
        return config(format!(
            "need 1/2 <= sigma' < sigma <= 1, got sigma' = {sigma_prime}, sigma = {sigma}"
        ));
    }
    Ok(())
}

/// `||lambda^-1||_{B,q} ||Lambda||_{B,p}` with cell-average norms.
pub fn moment_product(field: &CoefficientField, cells: &[usize], p: f64, q: f64) -> f64 {
    let inv: Vec<f64> = field.lambda().iter().map(|l| 1.0 / l).collect();
    ball_norm(&inv, cells, q) * ball_norm(field.lambda_max(), cells, p)
}

fn ratio(lhs: f64, rhs: f64) -> Result<f64> {
    if rhs > 0.0 {
        Ok(lhs / rhs)
    } else if lhs == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::InequalityViolation(format!(
            "right-hand side vanishes while the left-hand side is {lhs:e}"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub epsilon: f64,
    /// `||chi||_{B(sigma' R), inf}`.
    pub lhs: f64,
    pub rhs_core: f64,
    pub ratio: f64,
    pub moment_product: f64,
    /// `||chi||_{B(sigma R), alpha}`.
    pub alpha_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserAuditReport {
    pub radius: f64,
    pub sigma_prime: f64,
    pub sigma: f64,
    pub component: usize,
    pub alpha: f64,
    pub kappa_prime: f64,
    pub gamma_prime: f64,
    pub rows: Vec<AuditRow>,
    /// Largest observed ratio, the empirical constant envelope.
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// `max_ratio / min_ratio`; infinite when some ratio vanishes but not all.
    #[serde(with = "extended_f64")]
    pub stability: f64,
}

impl MoserAuditReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epsilon,lhs,rhs_core,ratio")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.epsilon, r.lhs, r.rhs_core, r.ratio)?;
        }
        Ok(())
    }
}

/// Audits the improved maximal inequality on corrector component `component`,
/// for fields and correctors already solved on a size sweep.
pub fn moser_audit_fields(
    solved: &[(CoefficientField, CorrectorField)],
    schedule: &MoserSchedule,
    radius: f64,
    sigma_prime: f64,
    sigma: f64,
    component: usize,
) -> Result<MoserAuditReport> {
    check_radii(sigma_prime, sigma)?;
    if !(radius > 0.0 && radius <= 0.25) {
        return config(format!(
            "audit radius must be in (0, 1/4] of the box, got {radius}"
        ));
    }
    let mut rows = Vec::with_capacity(solved.len());
    for (field, chi) in solved {
        if component >= field.dim() || field.dim() != schedule.d {
            return config(format!(
                "component {component} / dimension {} do not match the schedule (d = {})",
                field.dim(),
                schedule.d
            ));
        }
        let grid = field.grid();
        let h = field.spacing();
        let ball = Ball::box_centered(grid, h, radius * field.box_side());
        let u = chi.chi(component);
        let lhs = ball_norm(u, &ball.scaled(sigma_prime).cells(grid, h), f64::INFINITY);
        let alpha_norm = ball_norm(u, &ball.scaled(sigma).cells(grid, h), schedule.alpha);
        let x = moment_product(field, &ball.cells(grid, h), schedule.p, schedule.q);
        let rhs_core = MoserSchedule::core_prefactor(x, sigma, sigma_prime, schedule.kappa_prime)
            * alpha_norm.powf(schedule.gamma_prime).max(alpha_norm);
        rows.push(AuditRow {
            epsilon: h,
            lhs,
            rhs_core,
            ratio: ratio(lhs, rhs_core)?,
            moment_product: x,
            alpha_norm,
        });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let stability = if max_ratio == 0.0 {
        1.0
    } else {
        max_ratio / min_ratio
    };
    Ok(MoserAuditReport {
        radius,
        sigma_prime,
        sigma,
        component,
        alpha: schedule.alpha,
        kappa_prime: schedule.kappa_prime,
        gamma_prime: schedule.gamma_prime,
        rows,
        max_ratio,
        min_ratio,
        stability,
    })
}

/// Solves the correctors on the nested size sweep of `spec` and audits component 0.
pub fn moser_audit(
    spec: &EnvironmentSpec,
    schedule: &MoserSchedule,
    radius: f64,
    sigma_prime: f64,
    sigma: f64,
    sizes: &[usize],
    cfg: &SolverConfig,
) -> Result<MoserAuditReport> {
    check_radii(sigma_prime, sigma)?;
    if spec.dimension != schedule.d {
        return config(format!(
            "schedule is for d = {}, environment has d = {}",
            schedule.d, spec.dimension
        ));
    }
    let solved = solve_scan(spec, sizes, cfg)?;
    moser_audit_fields(&solved, schedule, radius, sigma_prime, sigma, 0)
}

/// The periodic operator with zero values imposed outside a cell set.
struct Restricted<'a> {
    form: &'a DiscreteDirichletForm,
    inside: &'a [usize],
}

impl LinearOperator for Restricted<'_> {
    fn len(&self) -> usize {
        self.inside.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut full = vec![0.0; self.form.cells()];
        for (v, &c) in x.iter().zip(self.inside) {
            full[c] = *v;
        }
        let mut out = vec![0.0; full.len()];
        self.form.apply(&full, &mut out);
        for (v, &c) in y.iter_mut().zip(self.inside) {
            *v = out[c];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectInequality {
    /// `||u||_{B(sigma' R), inf}`.
    pub lhs: f64,
    pub rhs_core: f64,
    pub ratio: f64,
    /// `||u||_{B(sigma R), rho}`.
    pub rho_norm: f64,
    pub moment_product: f64,
    pub iterations: usize,
}

/// Solves `E(u, phi) = -E(f, phi)` for `u` vanishing outside `ball`, `f = f_slope . x`,
/// and evaluates both sides of the maximal inequality with exponents `kappa`, `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn maximal_inequality_direct(
    form: &DiscreteDirichletForm,
    field: &CoefficientField,
    f_slope: &[f64],
    ball: &Ball,
    schedule: &MoserSchedule,
    sigma_prime: f64,
    sigma: f64,
    cfg: &SolverConfig,
) -> Result<DirectInequality> {
    check_radii(sigma_prime, sigma)?;
    if form.grid() != field.grid() {
        return Err(Error::Consistency(
            "form and field live on different grids".into(),
        ));
    }
    if f_slope.len() != form.dim() {
        return Err(Error::Shape {
            expected: form.dim(),
            got: f_slope.len(),
        });
    }
    let grid = form.grid();
    let h = form.spacing();
    let inside = ball.cells(grid, h);
    if inside.is_empty() {
        return config("the ball contains no cells");
    }
    if inside.len() == grid.len() {
        return Err(Error::Singular(
            "the ball covers the whole torus; no boundary values".into(),
        ));
    }
    let load = form.affine_load(f_slope);
    let rhs: Vec<f64> = inside.iter().map(|&c| -load[c]).collect();
    let diag = form.diagonal();
    let pre = Jacobi::new(&inside.iter().map(|&c| diag[c]).collect::<Vec<_>>())?;
    let op = Restricted {
        form,
        inside: &inside,
    };
    let cfg = SolverConfig {
        project_mean: false,
        ..*cfg
    };
    let out = pcg(&op, &pre, &rhs, None, &cfg)?;
    let mut u = vec![0.0; grid.len()];
    for (v, &c) in out.solution.iter().zip(&inside) {
        u[c] = *v;
    }

    let lhs = ball_norm(&u, &ball.scaled(sigma_prime).cells(grid, h), f64::INFINITY);
    let rho_norm = ball_norm(&u, &ball.scaled(sigma).cells(grid, h), schedule.rho);
    let x = moment_product(field, &inside, schedule.p, schedule.q);
    let rhs_core = MoserSchedule::core_prefactor(x, sigma, sigma_prime, schedule.kappa)
        * rho_norm.powf(schedule.gamma).max(rho_norm);
    Ok(DirectInequality {
        lhs,
        rhs_core,
        ratio: ratio(lhs, rhs_core)?,
        rho_norm,
        moment_product: x,
        iterations: out.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{assemble, moser_exponents, DEFAULT_TRUNCATION};
    use crate::environment::{generate_field, Model};
    use crate::grid::fit_slope;

    fn schedule(p: f64, q: f64) -> MoserSchedule {
        let p_star = crate::energy::holder_conjugate(p);
        moser_exponents(p, q, 2, 2.0 * p_star, DEFAULT_TRUNCATION).unwrap()
    }

    fn laminate(n: usize) -> CoefficientField {
        let spec = EnvironmentSpec::new(
            Model::LaminateTwoPhase {
                a_low: 1.0,
                a_high: 4.0,
                volume_fraction: 0.5,
            },
            2,
            0,
        );
        generate_field(&spec, n, 1.0 / n as f64).unwrap()
    }

    #[test]
    fn identity_audit_is_zero() {
        let spec = EnvironmentSpec::new(Model::Identity, 2, 0);
        let r = moser_audit(
            &spec,
            &schedule(3.0, 2.0),
            0.25,
            0.5,
            1.0,
            &[16, 32],
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(r.rows.iter().all(|row| row.lhs == 0.0 && row.ratio == 0.0));

        let f = generate_field(&spec, 32, 1.0 / 32.0).unwrap();
        let ball = Ball::box_centered(f.grid(), f.spacing(), 0.25);
        let direct = maximal_inequality_direct(
            &assemble(&f),
            &f,
            &[1.0, 0.0],
            &ball,
            &schedule(3.0, 2.0),
            0.5,
            1.0,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!((direct.lhs, direct.rhs_core), (0.0, 0.0));
    }

    #[test]
    fn checkerboard_audit_is_stable() {
        let spec = EnvironmentSpec::new(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 4,
            },
            2,
            0,
        );
        let r = moser_audit(
            &spec,
            &schedule(3.0, 2.0),
            0.25,
            0.5,
            1.0,
            &[16, 32, 64],
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(r
            .rows
            .iter()
            .all(|row| row.ratio.is_finite() && row.ratio > 0.0));
        assert!(r.stability <= 50.0, "{r:?}");
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }

    #[test]
    fn laminate_direct_ratio_is_bounded() {
        for n in [32, 64, 128] {
            let f = laminate(n);
            let ball = Ball::box_centered(f.grid(), f.spacing(), 0.25);
            let r = maximal_inequality_direct(
                &assemble(&f),
                &f,
                &[1.0, 0.0],
                &ball,
                &schedule(3.0, 2.0),
                0.5,
                1.0,
                &SolverConfig::default(),
            )
            .unwrap();
            assert!(
                r.lhs > 0.0 && (0.0..=100.0).contains(&r.ratio),
                "n={n}: {r:?}"
            );
        }
    }

    #[test]
    fn direct_ratio_has_no_trend_in_radius() {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: 3.0,
                correlation_cells: 1,
            },
            2,
            2,
        );
        let f = generate_field(&spec, 64, 1.0 / 64.0).unwrap();
        let form = assemble(&f);
        let s = schedule(2.5, 2.5);
        let radii = [0.0625, 0.09, 0.125, 0.18, 0.25];
        let mut logs = Vec::new();
        for r in radii {
            let ball = Ball::box_centered(f.grid(), f.spacing(), r);
            let out = maximal_inequality_direct(
                &form,
                &f,
                &[1.0, 0.0],
                &ball,
                &s,
                0.5,
                1.0,
                &SolverConfig::default(),
            )
            .unwrap();
            assert!(out.ratio.is_finite() && out.ratio > 0.0);
            logs.push(out.ratio.ln());
        }
        let x: Vec<f64> = radii.iter().map(|r: &f64| r.ln()).collect();
        let slope = fit_slope(&x, &logs).unwrap();
        assert!((-1.0..=1.0).contains(&slope), "slope {slope}");
    }

    #[test]
    fn prefactor_decreases_with_wider_gap() {
        let a = MoserSchedule::core_prefactor(3.0, 0.8, 0.6, 1.5);
        let b = MoserSchedule::core_prefactor(3.0, 1.0, 0.5, 1.5);
        assert!(b < a);
    }

    #[test]
    fn bad_radii_are_rejected() {
        let spec = EnvironmentSpec::new(Model::Identity, 2, 0);
        let s = schedule(3.0, 2.0);
        let cfg = SolverConfig::default();
        assert!(moser_audit(&spec, &s, 0.25, 0.4, 1.0, &[8, 16], &cfg).is_err());
        assert!(moser_audit(&spec, &s, 0.25, 0.8, 0.7, &[8, 16], &cfg).is_err());
        assert!(moser_audit(&spec, &s, 0.25, 0.5, 1.1, &[8, 16], &cfg).is_err());
    }

    #[test]
    fn whole_torus_ball_is_singular() {
        let f = laminate(8);
        let ball = Ball::box_centered(f.grid(), f.spacing(), 10.0);
        let r = maximal_inequality_direct(
            &assemble(&f),
            &f,
            &[1.0, 0.0],
            &ball,
            &schedule(3.0, 2.0),
            0.5,
            1.0,
            &SolverConfig::default(),
        );
        assert!(matches!(r, Err(Error::Singular(_))));
    }
}

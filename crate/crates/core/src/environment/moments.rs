use serde::{Deserialize, Serialize};

use super::field::{generate_field, CoefficientField};
use super::spec::EnvironmentSpec;
use crate::error::{config, Error, Result};
use crate::grid::{fit_slope, Ball};
use crate::serde_ext::extended_f64;

/// Empirical check of `E[lambda^-q] < inf`, `E[Lambda^p] < inf`, `1/p + 1/q < 2/d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    #[serde(with = "extended_f64")]
    pub p: f64,
    #[serde(with = "extended_f64")]
    pub q: f64,
    #[serde(with = "extended_f64")]
    pub emp_lambda_inv_q: f64,
    #[serde(with = "extended_f64")]
    pub emp_lambda_max_p: f64,
    pub condition_value: f64,
    pub threshold: f64,
    pub admissible: bool,
}

fn reciprocal(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

/// `1/p + 1/q < 2/d`, with `1/inf = 0`.
pub fn moment_condition(p: f64, q: f64, d: usize) -> (f64, f64, bool) {
    let value = reciprocal(p) + reciprocal(q);
    let threshold = 2.0 / d as f64;
    (value, threshold, value < threshold)
}

pub(crate) fn check_exponent(name: &str, v: f64) -> Result<()> {
    if v >= 1.0 {
        Ok(())
    } else {
        config(format!("{name} must be >= 1 (inf allowed), got {v}"))
    }
}

/// Cell average of `v^r`; `r = inf` is the essential sup over cells.
fn empirical_moment(values: impl Iterator<Item = f64> + Clone, r: f64) -> f64 {
    if r.is_infinite() {
        values.fold(0.0, f64::max)
    } else {
        let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v.powf(r), n + 1));
        s / n as f64
    }
}

pub fn validate_moments(field: &CoefficientField, p: f64, q: f64) -> Result<MomentReport> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    let inv = field.lambda().iter().map(|l| 1.0 / l);
    let emp_lambda_inv_q = empirical_moment(inv, q);
    let emp_lambda_max_p = empirical_moment(field.lambda_max().iter().copied(), p);
    let (condition_value, threshold, ok) = moment_condition(p, q, field.dim());
    Ok(MomentReport {
        p,
        q,
        emp_lambda_inv_q,
        emp_lambda_max_p,
        condition_value,
        threshold,
        admissible: ok && emp_lambda_inv_q.is_finite() && emp_lambda_max_p.is_finite(),
    })
}

/// Growth rate above which an empirical moment is judged divergent under refinement.
pub const DIVERGENCE_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub cells_per_side: usize,
    pub emp_lambda_inv_q: f64,
    pub emp_lambda_max_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    #[serde(with = "extended_f64")]
    pub p: f64,
    #[serde(with = "extended_f64")]
    pub q: f64,
    pub rows: Vec<RefinementRow>,
    /// d log(moment) / d log(N) for each moment.
    pub slope_lambda_inv_q: f64,
    pub slope_lambda_max_p: f64,
    pub divergent_lambda_inv_q: bool,
    pub divergent_lambda_max_p: bool,
    pub condition_value: f64,
    pub threshold: f64,
    pub admissible: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Refines the grid at fixed box side and tracks both empirical moments.
///
/// For random laws the per-size value is the median over `seeds`. A moment whose
/// log-log growth in `N` exceeds `slope_limit` is declared divergent.
pub fn moment_refinement(
    spec: &EnvironmentSpec,
    box_side: f64,
    sizes: &[usize],
    seeds: &[u64],
    p: f64,
    q: f64,
    slope_limit: f64,
) -> Result<RefinementReport> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return config("refinement needs at least two strictly increasing sizes");
    }
    if seeds.is_empty() {
        return config("refinement needs at least one seed");
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut inv = Vec::with_capacity(seeds.len());
        let mut big = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut s = spec.clone();
            s.seed = seed;
            let field = generate_field(&s, n, box_side / n as f64)?;
            let r = validate_moments(&field, p, q)?;
            inv.push(r.emp_lambda_inv_q);
            big.push(r.emp_lambda_max_p);
        }
        rows.push(RefinementRow {
            cells_per_side: n,
            emp_lambda_inv_q: median(inv),
            emp_lambda_max_p: median(big),
        });
    }
    let logn: Vec<f64> = rows
        .iter()
        .map(|r| (r.cells_per_side as f64).ln())
        .collect();
    let slope = |ys: Vec<f64>| fit_slope(&logn, &ys).unwrap_or(0.0);
    let slope_lambda_inv_q = slope(rows.iter().map(|r| r.emp_lambda_inv_q.ln()).collect());
    let slope_lambda_max_p = slope(rows.iter().map(|r| r.emp_lambda_max_p.ln()).collect());
    let divergent_lambda_inv_q = slope_lambda_inv_q > slope_limit;
    let divergent_lambda_max_p = slope_lambda_max_p > slope_limit;
    let (condition_value, threshold, ok) = moment_condition(p, q, spec.dimension);
    Ok(RefinementReport {
        p,
        q,
        rows,
        slope_lambda_inv_q,
        slope_lambda_max_p,
        divergent_lambda_inv_q,
        divergent_lambda_max_p,
        condition_value,
        threshold,
        admissible: ok && !divergent_lambda_inv_q && !divergent_lambda_max_p,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingRow {
    pub radius: f64,
    pub ratio_lambda_max: f64,
    pub muckenhaupt_ratio: f64,
}

/// Volume-doubling ratio of `Lambda` and the Muckenhaupt product
/// `(avg_B Lambda)(avg_B lambda^-1)` on balls around a cell center.
pub fn doubling_diagnostic(
    field: &CoefficientField,
    center: usize,
    radii: &[f64],
) -> Result<Vec<DoublingRow>> {
    let grid = field.grid();
    let h = field.spacing();
    if center >= grid.len() {
        return Err(Error::Range(format!(
            "center cell {center} outside the grid"
        )));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Range("radii must be strictly increasing".into()));
    }
    let half = 0.5 * field.box_side();
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r > 0.0) || r > half {
            return Err(Error::Range(format!("radius {r} outside (0, {half}]")));
        }
        let inner = Ball::around_cell(grid, h, center, r).cells(grid, h);
        let outer = Ball::around_cell(grid, h, center, 2.0 * r).cells(grid, h);
        let big = field.lambda_max();
        let small = field.lambda();
        let sum_inner: f64 = inner.iter().map(|&c| big[c]).sum();
        let sum_outer: f64 = outer.iter().map(|&c| big[c]).sum();
        let avg_big = sum_inner / inner.len() as f64;
        let avg_inv = inner.iter().map(|&c| 1.0 / small[c]).sum::<f64>() / inner.len() as f64;
        rows.push(DoublingRow {
            radius: r,
            ratio_lambda_max: sum_outer / sum_inner,
            muckenhaupt_ratio: avg_big * avg_inv,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::spec::Model;

    fn identity(d: usize, n: usize) -> CoefficientField {
        generate_field(&EnvironmentSpec::new(Model::Identity, d, 0), n, 1.0).unwrap()
    }

    #[test]
    fn identity_moments() {
        let f = identity(2, 8);
        let r = validate_moments(&f, 3.0, 2.0).unwrap();
        assert!((r.condition_value - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.threshold, 1.0);
        assert!(r.admissible);
        let r = validate_moments(&f, f64::INFINITY, f64::INFINITY).unwrap();
        assert_eq!(r.condition_value, 0.0);
        assert_eq!(r.emp_lambda_inv_q, 1.0);
        assert_eq!(r.emp_lambda_max_p, 1.0);
        assert!(r.admissible);
    }

    #[test]
    fn boundary_exponents_are_not_admissible() {
        let f = identity(2, 4);
        assert!(!validate_moments(&f, 2.0, 2.0).unwrap().admissible);
        assert!(validate_moments(&f, 0.5, 2.0).is_err());
    }

    #[test]
    fn report_survives_json_with_infinite_exponents() {
        let r = validate_moments(&identity(3, 4), f64::INFINITY, 4.0).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"inf\""));
        let back: MomentReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn doubling_on_identity_counts_cells() {
        let f = identity(2, 32);
        let rows = doubling_diagnostic(&f, 0, &[2.0, 3.5, 6.0]).unwrap();
        let grid = f.grid();
        for row in rows {
            let inner = Ball::around_cell(grid, 1.0, 0, row.radius)
                .cells(grid, 1.0)
                .len();
            let outer = Ball::around_cell(grid, 1.0, 0, 2.0 * row.radius)
                .cells(grid, 1.0)
                .len();
            assert!((row.ratio_lambda_max - outer as f64 / inner as f64).abs() < 1e-12);
            assert_eq!(row.muckenhaupt_ratio, 1.0);
        }
    }

    #[test]
    fn doubling_checkerboard_tends_to_product_of_means() {
        let spec = EnvironmentSpec::new(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 1,
            },
            2,
            0,
        );
        let f = generate_field(&spec, 128, 1.0).unwrap();
        let rows = doubling_diagnostic(&f, 0, &[4.0, 16.0, 60.0]).unwrap();
        let last = rows.last().unwrap();
        // (5/2)(5/8) for equal volume fractions of {1,4} and {1,1/4}
        assert!((last.muckenhaupt_ratio - 25.0 / 16.0).abs() < 0.01);
    }

    #[test]
    fn doubling_rejects_oversized_radius() {
        let f = identity(2, 8);
        assert!(matches!(
            doubling_diagnostic(&f, 0, &[5.0]),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            doubling_diagnostic(&f, 0, &[2.0, 1.0]),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn heavy_tail_doubling_is_finite() {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: 3.0,
                correlation_cells: 1,
            },
            2,
            4,
        );
        let f = generate_field(&spec, 64, 1.0).unwrap();
        for row in doubling_diagnostic(&f, 100, &[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap() {
            assert!(row.ratio_lambda_max.is_finite() && row.ratio_lambda_max > 1.0);
            assert!(row.muckenhaupt_ratio.is_finite() && row.muckenhaupt_ratio >= 1.0);
        }
    }

    #[test]
    fn jensen_ordering_of_moments() {
        let spec = EnvironmentSpec::new(
            Model::HeavyTail {
                tail_index_lo: 2.5,
                tail_index_hi: 2.5,
                correlation_cells: 1,
            },
            2,
            8,
        );
        let f = generate_field(&spec, 32, 1.0).unwrap();
        for (q1, q2) in [(1.0, 2.0), (1.5, 4.0), (2.0, 3.0)] {
            let m1 = validate_moments(&f, 3.0, q1).unwrap().emp_lambda_inv_q;
            let m2 = validate_moments(&f, 3.0, q2).unwrap().emp_lambda_inv_q;
            assert!(m1 <= m2.powf(q1 / q2) * (1.0 + 1e-12));
        }
    }
}

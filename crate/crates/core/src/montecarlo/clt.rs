use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::martingale::QvReport;
use super::walk::WalkEnsemble;
use crate::error::{Error, Result};
use crate::homogenize::EffectiveMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(D_n > d)` with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against the standard normal.
pub fn ks_standard_normal(samples: &[f64]) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::Statistics("no samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite sample".into()));
    }
    let normal = Normal::standard();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = normal.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_p_value(d, sorted.len()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CltThresholds {
    /// Per-direction KS pass threshold.
    pub ks_p_min: f64,
    /// Tolerance on `max_ij |C_ij / t - D_ij| / max_i D_ii`.
    pub covariance_tolerance: f64,
    pub min_paths: usize,
}

impl Default for CltThresholds {
    fn default() -> Self {
        CltThresholds {
            ks_p_min: 0.01,
            covariance_tolerance: 0.05,
            min_paths: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub t: f64,
    /// Row-major sample covariance of `X_t - X_0`.
    pub covariance: Vec<f64>,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub t: f64,
    pub xi: Vec<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub paths: usize,
    pub target: Vec<f64>,
    pub thresholds: CltThresholds,
    pub covariance: Vec<CovarianceRow>,
    pub ks: Vec<KsRow>,
    pub note: String,
    pub qv: Option<QvReport>,
    pub covariance_pass: bool,
    pub ks_pass: bool,
}

/// `max_ij |c_ij - target_ij| / max_i target_ii`.
pub fn relative_matrix_error(c: &[f64], target: &[f64], d: usize) -> f64 {
    let scale = (0..d).map(|i| target[i * d + i].abs()).fold(0.0, f64::max);
    c.iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Endpoint covariance and KS statistics of `xi . (X_t - X_0) / sqrt(t xi^T D xi)`.
pub fn clt_statistics(
    ensemble: &WalkEnsemble,
    target: &EffectiveMatrix,
    eval_times: &[f64],
    directions: &[Vec<f64>],
    thresholds: &CltThresholds,
) -> Result<CltReport> {
    let d = ensemble.dim();
    if target.d != d {
        return Err(Error::Shape {
            expected: d,
            got: target.d,
        });
    }
    if ensemble.len() < thresholds.min_paths {
        return Err(Error::Statistics(format!(
            "{} paths, at least {} needed",
            ensemble.len(),
            thresholds.min_paths
        )));
    }
    let mut covariance = Vec::new();
    let mut ks = Vec::new();
    for &t in eval_times {
        if !(t > 0.0) {
            return Err(Error::Range(format!(
                "evaluation time must be positive, got {t}"
            )));
        }
        let k = ensemble.time_index(t)?;
        let t = ensemble.times[k];
        let cov = ensemble.covariance(k);
        let scaled: Vec<f64> = cov.iter().map(|c| c / t).collect();
        covariance.push(CovarianceRow {
            t,
            relative_error: relative_matrix_error(&scaled, &target.entries, d),
            covariance: cov,
        });
        let disp = ensemble.displacements(k);
        for xi in directions {
            if xi.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    got: xi.len(),
                });
            }
            let sd = (t * target.quadratic(xi)).sqrt();
            let z: Vec<f64> = disp
                .iter()
                .map(|x| x.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() / sd)
                .collect();
            let r = ks_standard_normal(&z)?;
            ks.push(KsRow {
                t,
                xi: xi.clone(),
                statistic: r.statistic,
                p_value: r.p_value,
                pass: r.p_value > thresholds.ks_p_min,
            });
        }
    }
    let tests = ks.len().max(1);
    Ok(CltReport {
        paths: ensemble.len(),
        target: target.entries.clone(),
        thresholds: *thresholds,
        covariance_pass: covariance
            .iter()
            .all(|r| r.relative_error <= thresholds.covariance_tolerance),
        ks_pass: ks.iter().all(|r| r.pass),
        covariance,
        ks,
        note: format!(
            "{tests} KS tests at level {}; the family-wise level under a Bonferroni bound is {}",
            thresholds.ks_p_min,
            (thresholds.ks_p_min * tests as f64).min(1.0)
        ),
        qv: None,
    })
}

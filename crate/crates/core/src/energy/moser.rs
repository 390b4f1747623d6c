//! Exponent bookkeeping for the Moser iteration.
//!
//! With `p* = p/(p-1)` and `rho = 2qd/(q(d-2)+d)`, the iteration runs on the
//! norm indices `alpha_k = (rho / 2p*)^k`, which grow geometrically exactly when
//! `1/p + 1/q < 2/d`. The maximal inequality then carries the exponents
//!
//! ```text
//! kappa  = 1/2 sum_k 1/alpha_k             gamma  = prod_k (1 - 1/alpha_k)
//! kappa' = kappa sum_k k (1-theta)^(k-1)   gamma' = gamma theta / (1 - gamma + gamma theta)
//! ```
//!
//! where `theta = alpha / rho` for the norm index `alpha` of the improved form.
//! For `alpha >= rho` the improved form follows from Jensen directly, so `theta` is
//! capped at one and the primed exponents coincide with the unprimed ones.

use serde::{Deserialize, Serialize};

use crate::environment::{check_exponent, moment_condition};
use crate::error::{config, Result};
use crate::serde_ext::extended_f64;

pub const DEFAULT_TRUNCATION: usize = 64;
pub const MIN_TRUNCATION: usize = 16;

/// Hölder conjugate `p/(p-1)`; `inf -> 1`, `1 -> inf`.
pub fn holder_conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// Sobolev conjugate of `2q/(q+1)` in dimension `d`.
pub fn sobolev_exponent(q: f64, d: usize) -> f64 {
    let d = d as f64;
    if q.is_infinite() {
        if d > 2.0 {
            2.0 * d / (d - 2.0)
        } else {
            f64::INFINITY
        }
    } else {
        2.0 * q * d / (q * (d - 2.0) + d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserSchedule {
    #[serde(with = "extended_f64")]
    pub p: f64,
    #[serde(with = "extended_f64")]
    pub q: f64,
    pub d: usize,
    pub p_star: f64,
    pub rho: f64,
    /// `rho / (2 p*)`, the growth factor of `alpha_k`.
    pub growth: f64,
    /// `alpha_1 .. alpha_K`.
    pub alphas: Vec<f64>,
    pub truncation: usize,
    /// Closed-form geometric sum.
    pub kappa: f64,
    pub kappa_partial: f64,
    pub kappa_tail_bound: f64,
    pub gamma: f64,
    /// Bound on `|log gamma_K - log gamma|` for the truncated product.
    pub gamma_log_tail_bound: f64,
    pub alpha: f64,
    pub theta: f64,
    pub gamma_prime: f64,
    pub kappa_prime: f64,
    pub kappa_prime_partial: f64,
    pub kappa_prime_tail_bound: f64,
}

/// Full schedule for `(p, q, d)` and the norm index `alpha` of the improved inequality.
pub fn moser_exponents(
    p: f64,
    q: f64,
    d: usize,
    alpha: f64,
    truncation: usize,
) -> Result<MoserSchedule> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    if d < 2 {
        return config(format!("the Moser schedule needs d >= 2, got d = {d}"));
    }
    let (value, threshold, ok) = moment_condition(p, q, d);
    if !ok {
        return config(format!(
            "(p, q, d) = ({p}, {q}, {d}) violates 1/p + 1/q < 2/d: {value} >= {threshold}"
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return config(format!(
            "norm index alpha must be positive and finite, got {alpha}"
        ));
    }
    if truncation < MIN_TRUNCATION {
        return config(format!(
            "series truncation must be at least {MIN_TRUNCATION}, got {truncation}"
        ));
    }
    let p_star = holder_conjugate(p);
    let rho = sobolev_exponent(q, d);
    if !rho.is_finite() {
        return config("q = inf in d = 2 puts rho at infinity; the schedule is degenerate");
    }
    let growth = rho / (2.0 * p_star);
    if !(growth > 1.0) {
        return config(format!("rho = {rho} must exceed 2 p* = {}", 2.0 * p_star));
    }

    let alphas: Vec<f64> = (1..=truncation as i32).map(|k| growth.powi(k)).collect();
    let r = 1.0 / growth;
    let r_k = r.powi(truncation as i32);
    // sum_{k>K} r^k = r^(K+1) / (1 - r)
    let geometric_tail = r_k * r / (1.0 - r);

    let kappa = 0.5 * r / (1.0 - r);
    let kappa_partial = 0.5 * alphas.iter().map(|a| 1.0 / a).sum::<f64>();
    let kappa_tail_bound = 0.5 * geometric_tail;

    let gamma: f64 = alphas.iter().map(|a| 1.0 - 1.0 / a).product();
    // -log(1-x) <= x/(1-x) and every neglected x = r^k <= r^(K+1)
    let gamma_log_tail_bound = geometric_tail / (1.0 - r_k * r);

    let theta = (alpha / rho).min(1.0);
    let gamma_prime = gamma * theta / (1.0 - gamma + gamma * theta);
    let s = 1.0 - theta;
    // sum_k k s^(k-1) = 1 / (1-s)^2 = 1 / theta^2
    let series = 1.0 / (theta * theta);
    let partial: f64 = (1..=truncation)
        .map(|k| k as f64 * s.powi(k as i32 - 1))
        .sum();
    let kk = truncation as f64;
    // sum_{k>K} k s^(k-1) = s^K ((K+1) - K s) / (1-s)^2
    let tail = if s == 0.0 {
        0.0
    } else {
        s.powi(truncation as i32) * ((kk + 1.0) - kk * s) / (theta * theta)
    };

    Ok(MoserSchedule {
        p,
        q,
        d,
        p_star,
        rho,
        growth,
        alphas,
        truncation,
        kappa,
        kappa_partial,
        kappa_tail_bound,
        gamma,
        gamma_log_tail_bound,
        alpha,
        theta,
        gamma_prime,
        kappa_prime: kappa * series,
        kappa_prime_partial: kappa * partial,
        kappa_prime_tail_bound: kappa * tail,
    })
}

impl MoserSchedule {
    /// Radii fractions `sigma_k = sigma' + 2^(1-k) (sigma - sigma')`, `k >= 1`.
    pub fn sigma(k: u32, sigma: f64, sigma_prime: f64) -> f64 {
        sigma_prime + 2f64.powi(1 - k as i32) * (sigma - sigma_prime)
    }

    /// `((1 v ||lambda^-1||_q ||Lambda||_p) / (sigma - sigma')^2)^exponent`.
    pub fn core_prefactor(moment_product: f64, sigma: f64, sigma_prime: f64, exponent: f64) -> f64 {
        (moment_product.max(1.0) / (sigma - sigma_prime).powi(2)).powf(exponent)
    }
}

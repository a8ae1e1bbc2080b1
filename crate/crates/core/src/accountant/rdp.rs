//! Rényi divergence of one Poisson-subsampled Gaussian step.
//!
//! With sampling rate `q` and noise multiplier `σ`, the step's RDP at order α is
//! `ln A_α / (α − 1)` where `A_α = E_{z∼N(0,σ²)}[((1−q) + q·e^{(2z−1)/(2σ²)})^α]`.
//! Integer orders use the finite binomial expansion; fractional orders use the
//! convergent two-sided series obtained by splitting the integral at the point
//! where the two mixture components cross.

use super::logmath::{log_add, log_erfc, log_sub, log_sum_exp};
use crate::error::{invalid, Result};

/// How non-integer orders are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionalMethod {
    /// Exact series.
    #[default]
    Exact,
    /// Upper bound from log-convexity of `ln A_α` between the neighbouring integers.
    Interpolate,
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let a = alpha as f64;
    let mut log_binom = 0.0;
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for j in 0..=alpha {
        if j > 0 {
            log_binom += (a - j as f64 + 1.0).ln() - (j as f64).ln();
        }
        let jf = j as f64;
        terms.push(log_binom + jf * lq + (a - jf) * l1q + (jf * jf - jf) / (2.0 * sigma * sigma));
    }
    log_sum_exp(&terms)
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> Option<f64> {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let s2 = sigma * sigma;
    let z0 = s2 * (1.0 / q - 1.0).ln() + 0.5;
    let scale = std::f64::consts::SQRT_2 * sigma;
    let half = 0.5f64.ln();
    let (mut a0, mut a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut log_coef = 0.0;
    let mut positive = true;
    for i in 0..100_000u32 {
        let fi = f64::from(i);
        if i > 0 {
            let factor = alpha - fi + 1.0;
            log_coef += factor.abs().ln() - fi.ln();
            if factor < 0.0 {
                positive = !positive;
            }
        }
        let j = alpha - fi;
        let t0 = log_coef + fi * lq + j * l1q;
        let t1 = log_coef + j * lq + fi * l1q;
        let e0 = half + log_erfc((fi - z0) / scale);
        let e1 = half + log_erfc((z0 - j) / scale);
        let s0 = t0 + (fi * fi - fi) / (2.0 * s2) + e0;
        let s1 = t1 + (j * j - j) / (2.0 * s2) + e1;
        if positive {
            a0 = log_add(a0, s0);
            a1 = log_add(a1, s1);
        } else {
            a0 = log_sub(a0, s0)?;
            a1 = log_sub(a1, s1)?;
        }
        if s0.max(s1) < -30.0 {
            return Some(log_add(a0, a1));
        }
    }
    None
}

/// Log-convexity bound between the integer orders around `alpha`.
fn log_a_interpolated(q: f64, sigma: f64, alpha: f64) -> f64 {
    let lo = alpha.floor();
    let t = alpha - lo;
    // A_1 = 1 exactly.
    let la_lo = if lo <= 1.0 { 0.0 } else { log_a_int(q, sigma, lo as u64) };
    let la_hi = log_a_int(q, sigma, lo as u64 + 1);
    (1.0 - t) * la_lo + t * la_hi
}

fn rdp_order(q: f64, sigma: f64, alpha: f64, method: FractionalMethod) -> f64 {
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        match method {
            FractionalMethod::Exact => log_a_frac(q, sigma, alpha)
                .filter(|v| v.is_finite())
                .unwrap_or_else(|| log_a_interpolated(q, sigma, alpha)),
            FractionalMethod::Interpolate => log_a_interpolated(q, sigma, alpha),
        }
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// RDP of a single subsampled-Gaussian step at each order. `σ = 0` yields +∞.
pub fn rdp_step(q: f64, sigma: f64, orders: &[f64]) -> Result<Vec<f64>> {
    rdp_step_with(q, sigma, orders, FractionalMethod::Exact)
}

pub fn rdp_step_with(q: f64, sigma: f64, orders: &[f64], method: FractionalMethod) -> Result<Vec<f64>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid(format!("noise multiplier must be non-negative, got {sigma}")));
    }
    if let Some(a) = orders.iter().find(|&&a| !(a > 1.0 && a.is_finite())) {
        return Err(invalid(format!("RDP orders must exceed 1, got {a}")));
    }
    if sigma == 0.0 {
        return Ok(vec![f64::INFINITY; orders.len()]);
    }
    Ok(orders.iter().map(|&a| rdp_order(q, sigma, a, method)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_is_plain_gaussian() {
        let r = rdp_step(1.0, 1.0, &[2.0, 3.5]).unwrap();
        assert_eq!(r, vec![1.0, 1.75]);
    }

    #[test]
    fn integer_series_at_two_has_closed_form() {
        // A_2 = 1 + q²(e^{1/σ²} − 1).
        let (q, s) = (0.03, 0.9f64);
        let a2 = 1.0 + q * q * ((1.0 / (s * s)).exp() - 1.0);
        let r = rdp_step(q, s, &[2.0]).unwrap()[0];
        assert!((r - a2.ln()).abs() < 1e-15);
    }

    #[test]
    fn fractional_series_lies_under_the_convexity_bound() {
        for &(q, s) in &[(0.01, 1.5), (0.001, 0.6), (0.2, 3.0), (0.0008, 0.028)] {
            for &a in &[1.1, 1.5, 2.5, 7.3, 10.9] {
                let exact = rdp_step_with(q, s, &[a], FractionalMethod::Exact).unwrap()[0];
                let bound = rdp_step_with(q, s, &[a], FractionalMethod::Interpolate).unwrap()[0];
                assert!(exact <= bound * (1.0 + 1e-9) + 1e-300, "q={q} σ={s} α={a}: {exact} > {bound}");
            }
        }
    }

    #[test]
    fn fractional_series_is_continuous_at_integers() {
        let (q, s) = (0.01, 1.2);
        let at = rdp_step(q, s, &[3.0]).unwrap()[0];
        let near = rdp_step(q, s, &[3.0 + 1e-7]).unwrap()[0];
        assert!(((at - near) / at).abs() < 1e-5);
    }

    #[test]
    fn validates_arguments() {
        assert!(rdp_step(0.0, 1.0, &[2.0]).is_err());
        assert!(rdp_step(1.5, 1.0, &[2.0]).is_err());
        assert!(rdp_step(0.5, 1.0, &[1.0]).is_err());
        assert_eq!(rdp_step(0.5, 0.0, &[2.0]).unwrap()[0], f64::INFINITY);
    }
}

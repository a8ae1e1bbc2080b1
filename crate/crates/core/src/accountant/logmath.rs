//! Log-space helpers for the RDP series.

/// `ln(eᵃ + eᵇ)`.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(eˣ − eʸ)` for `y ≤ x`; `None` when the difference would be negative.
pub(crate) fn log_sub(x: f64, y: f64) -> Option<f64> {
    if y == f64::NEG_INFINITY {
        return Some(x);
    }
    if y > x {
        return None;
    }
    if y == x {
        return Some(f64::NEG_INFINITY);
    }
    Some(x + (-(y - x).exp_m1()).ln())
}

/// `ln Σ exp(terms)` without overflow.
pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `ln erfc(x)`, accurate far into the upper tail where `erfc` underflows.
pub(crate) fn log_erfc(x: f64) -> f64 {
    if x < 10.0 {
        return libm::erfc(x).ln();
    }
    // Asymptotic expansion; the first omitted term is below 1e-9 relative at x = 10.
    let r = 1.0 / (x * x);
    let series = 1.0 - 0.5 * r + 0.75 * r * r - 1.875 * r.powi(3) + 6.5625 * r.powi(4);
    -x * x - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_and_sub_invert() {
        let (a, b) = (3.2, 1.7);
        let s = log_add(a, b);
        assert!((s - (a.exp() + b.exp()).ln()).abs() < 1e-14);
        assert!((log_sub(s, b).unwrap() - a).abs() < 1e-14);
        assert_eq!(log_sub(1.0, 2.0), None);
        assert_eq!(log_add(f64::NEG_INFINITY, 2.0), 2.0);
    }

    #[test]
    fn log_sub_survives_huge_arguments() {
        let v = log_sub(1e6, 1e6 - 1.0).unwrap();
        assert!((v - (1e6 + (1.0 - (-1.0f64).exp()).ln())).abs() < 1e-6);
    }

    #[test]
    fn log_erfc_branches_agree() {
        let x = 9.999_999;
        let direct = libm::erfc(x).ln();
        let r = 1.0 / (x * x);
        let series = 1.0 - 0.5 * r + 0.75 * r * r - 1.875 * r.powi(3) + 6.5625 * r.powi(4);
        let asym = -x * x - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln();
        assert!((direct - asym).abs() < 1e-8, "{direct} vs {asym}");
        assert!(log_erfc(100.0).is_finite());
        assert!((log_erfc(-3.0) - libm::erfc(-3.0).ln()).abs() < 1e-15);
    }
}

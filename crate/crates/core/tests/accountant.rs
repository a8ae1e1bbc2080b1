use dpscale_core::accountant::{
    batch_scaling_curve, compact_orders, compute_epsilon, epsilon_curve, find_noise_multiplier, privacy_report,
    rdp_step, AccountantOptions, AccountantState, Conversion, FractionalMethod,
};
use proptest::prelude::*;

const IMAGENET: f64 = 1_281_167.0;

fn within(value: f64, expected: f64, tol: f64) -> bool {
    ((value - expected) / expected).abs() <= tol
}

#[test]
fn cifar_vgg_budgets() {
    for (sigma, expected) in [(0.5, 47.41), (1.5, 3.45), (3.5, 1.20)] {
        let e = compute_epsilon(sigma, 0.01, 10_000, 1e-5).unwrap();
        assert!(within(e, expected, 0.10), "σ={sigma}: ε={e}, expected {expected}");
    }
}

#[test]
fn imagenet_budgets() {
    let q = 1024.0 / IMAGENET;
    for (sigma, expected) in [(0.56, 4.6), (0.42, 13.2), (0.28, 71.0)] {
        let e = compute_epsilon(sigma, q, 12_510, 1e-6).unwrap();
        assert!(within(e, expected, 0.10), "σ={sigma}: ε={e}, expected {expected}");
    }
    let tiny = compute_epsilon(0.028, q, 12_510, 1e-6).unwrap();
    assert!(tiny.is_finite() && (1e6..1e8).contains(&tiny), "{tiny}");
}

/// The fixed-ratio large-batch configurations: σ = 0.001·√8·b/1024, epochs scaled with batch.
#[test]
fn large_batch_budgets() {
    let base = 0.001 * 8f64.sqrt();
    let cases = [(256 * 1024, 10.0, 23.0), (1024 * 1024, 10.0, 5.6), (1024 * 1024, 640.0, 72.3)];
    for (b, epochs, expected) in cases {
        let sigma = base * b as f64 / 1024.0;
        let steps = (epochs * IMAGENET / b as f64).round() as u64;
        let e = compute_epsilon(sigma, b as f64 / IMAGENET, steps, 1e-6).unwrap();
        assert!(within(e, expected, 0.10), "b={b}: ε={e}, expected {expected}");
    }
}

/// Direct quadrature of A_α = ∫ N(z; 0, σ²)·((1−q) + q·e^{(2z−1)/(2σ²)})^α dz.
fn quadrature_rdp(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (lo, hi, n) = (-40.0 * sigma, 40.0 * sigma + 1.0, 2_000_000usize);
    let h = (hi - lo) / n as f64;
    let log_f = |z: f64| {
        let log_mu0 = -z * z / (2.0 * sigma * sigma) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let ratio = (1.0 - q) + q * ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp();
        log_mu0 + alpha * ratio.ln()
    };
    let m = (0..=n).map(|i| log_f(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    // Composite Simpson in a shifted exponent.
    let mut s = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * (log_f(lo + i as f64 * h) - m).exp();
    }
    (m + (s * h / 3.0).ln()) / (alpha - 1.0)
}

#[test]
fn rdp_matches_quadrature() {
    for &(q, sigma, alpha) in &[(0.01, 1.5, 32.0), (0.05, 2.0, 7.5), (0.01, 1.0, 2.25)] {
        let series = rdp_step(q, sigma, &[alpha]).unwrap()[0];
        let quad = quadrature_rdp(q, sigma, alpha);
        assert!(within(series, quad, 1e-6), "α={alpha}: {series} vs {quad}");
    }
}

#[test]
fn full_batch_single_step_matches_scan() {
    let (sigma, delta) = (2.0, 1e-5);
    let opts = AccountantOptions {
        conversion: Conversion::Classic,
        ..AccountantOptions::default()
    };
    let e = privacy_report(sigma, 1.0, 1, delta, &opts).unwrap().epsilon;
    let scan = opts
        .orders
        .iter()
        .map(|a| a / (2.0 * sigma * sigma) + (1.0 / delta).ln() / (a - 1.0))
        .fold(f64::INFINITY, f64::min);
    assert!((e - scan).abs() < 1e-10);
}

#[test]
fn composition_is_additive() {
    let orders = compact_orders();
    let one = rdp_step(0.02, 1.1, &orders).unwrap();
    let mut st = AccountantState::new(orders.clone());
    st.compose(0.02, 1.1, 250).unwrap();
    for (a, b) in st.rdp.iter().zip(&one) {
        assert_eq!(*a, 250.0 * b);
    }
}

#[test]
fn vanishing_sampling_rate_vanishes() {
    let orders = [2.0, 8.0, 64.0];
    let mut last = rdp_step(1e-2, 1.0, &orders).unwrap();
    for q in [1e-4, 1e-8, 1e-16, 1e-40] {
        let r = rdp_step(q, 1.0, &orders).unwrap();
        assert!(r.iter().zip(&last).all(|(a, b)| a <= b));
        last = r;
    }
    assert!(last.iter().all(|&v| v < 1e-12), "{last:?}");
}

#[test]
fn noise_search_round_trips() {
    let (q, steps, delta) = (0.01, 10_000, 1e-5);
    let sigma = find_noise_multiplier(3.45, q, steps, delta).unwrap();
    assert!(within(sigma, 1.5, 0.10), "{sigma}");
    let mut last = f64::INFINITY;
    for target in [0.5, 1.0, 2.0, 8.0, 30.0] {
        let s = find_noise_multiplier(target, q, steps, delta).unwrap();
        let e = compute_epsilon(s, q, steps, delta).unwrap();
        assert!(within(e, target, 1e-4), "target {target}: got {e}");
        assert!(s < last);
        last = s;
    }
}

#[test]
fn more_steps_need_more_noise_at_fixed_budget() {
    let mut last = 0.0;
    for steps in [100, 500, 2000, 8000] {
        let s = find_noise_multiplier(3.0, 0.01, steps, 1e-5).unwrap();
        assert!(s > last);
        last = s;
    }
}

#[test]
fn unreachable_target_is_an_error() {
    assert!(find_noise_multiplier(1e-6, 0.01, 10_000, 1e-5).is_err());
}

#[test]
fn delta_curve_is_monotone_and_consistent() {
    let deltas: Vec<f64> = (3..=9).rev().map(|k| 10f64.powi(-k)).collect();
    let curve = epsilon_curve(1.1, 0.002, 5000, &deltas).unwrap();
    assert!(curve.windows(2).all(|w| w[0].1 >= w[1].1));
    let at = curve.iter().find(|(d, _)| *d == 1e-6).unwrap().1;
    assert_eq!(at, compute_epsilon(1.1, 0.002, 5000, 1e-6).unwrap());
}

#[test]
fn fixed_ratio_batch_curve_decreases() {
    let batches: Vec<usize> = (0..6).map(|k| 1024 << (2 * k)).collect();
    let curve = batch_scaling_curve(0.3, 1024, IMAGENET as usize, 1000, 1e-6, &batches).unwrap();
    assert!(curve.windows(2).all(|w| w[0].1 > w[1].1), "{curve:?}");
    assert_eq!(curve[0].1, compute_epsilon(0.3, 1024.0 / IMAGENET, 1000, 1e-6).unwrap());
}

#[test]
fn convexity_bound_option_is_looser() {
    let exact = compute_epsilon(1.0, 0.01, 1000, 1e-5).unwrap();
    let opts = AccountantOptions {
        fractional: FractionalMethod::Interpolate,
        ..AccountantOptions::default()
    };
    let bound = privacy_report(1.0, 0.01, 1000, 1e-5, &opts).unwrap().epsilon;
    assert!(bound >= exact);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn epsilon_is_monotone(
        sigma in 0.4f64..4.0,
        q in 0.0005f64..0.2,
        steps in 1u64..5000,
        delta_exp in 3i32..10,
    ) {
        let delta = 10f64.powi(-delta_exp);
        let e = compute_epsilon(sigma, q, steps, delta).unwrap();
        prop_assert!(compute_epsilon(sigma * 1.1, q, steps, delta).unwrap() <= e);
        prop_assert!(compute_epsilon(sigma, q, steps + 10, delta).unwrap() >= e);
        prop_assert!(compute_epsilon(sigma, (q * 1.1).min(1.0), steps, delta).unwrap() >= e);
        prop_assert!(compute_epsilon(sigma, q, steps, delta * 2.0).unwrap() <= e);
    }

    #[test]
    fn rdp_grows_with_steps_and_shrinks_with_noise(sigma in 0.3f64..5.0, q in 0.001f64..1.0) {
        let orders = compact_orders();
        let a = rdp_step(q, sigma, &orders).unwrap();
        let b = rdp_step(q, sigma * 1.2, &orders).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x >= 0.0 && y <= x);
        }
    }
}

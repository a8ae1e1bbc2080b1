//! Rényi-DP accounting for DP-SGD with Poisson subsampling.
//!
//! RDP composes additively over steps; the accumulated curve is converted to an
//! (ε, δ) guarantee by minimizing over a grid of orders.

mod logmath;
mod rdp;

pub use rdp::{rdp_step, rdp_step_with, FractionalMethod};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// RDP→(ε, δ) conversion rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conversion {
    /// `ε = RDP(α) + ln(1/δ)/(α−1)`.
    Classic,
    /// `ε = RDP(α) + ln(1 − 1/α) − (ln δ + ln α)/(α−1)`, never larger than classic.
    #[default]
    Improved,
}

/// Default order grid: 1.1 to 10.9 in steps of 0.1, 1.25, 1.75, then every integer 11..=256.
pub fn default_orders() -> Vec<f64> {
    let mut v: Vec<f64> = (11..=109).map(|i| f64::from(i) / 10.0).collect();
    v.extend([1.25, 1.75]);
    v.extend((11..=256).map(f64::from));
    v.sort_by(f64::total_cmp);
    v
}

/// Smaller grid: integers 2..=256 plus a few fractional orders below 5.
pub fn compact_orders() -> Vec<f64> {
    let mut v = vec![1.25, 1.5, 1.75, 2.5, 3.5, 4.5];
    v.extend((2..=256).map(f64::from));
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantOptions {
    pub orders: Vec<f64>,
    pub conversion: Conversion,
    pub fractional: FractionalMethod,
}

impl Default for AccountantOptions {
    fn default() -> Self {
        AccountantOptions {
            orders: default_orders(),
            conversion: Conversion::default(),
            fractional: FractionalMethod::default(),
        }
    }
}

/// An (ε, δ) guarantee with the inputs that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// `f64::INFINITY` when no noise is added.
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub q: f64,
    pub steps: u64,
    /// Order attaining the minimum, if any step was taken.
    pub order: Option<f64>,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Minimizes the conversion over orders. Returns `(ε, α*)`.
pub fn rdp_to_epsilon(orders: &[f64], rdp: &[f64], delta: f64, conversion: Conversion) -> Result<(f64, f64)> {
    check_delta(delta)?;
    if orders.len() != rdp.len() || orders.is_empty() {
        return Err(invalid("orders and RDP values must be non-empty and of equal length"));
    }
    let ld = delta.ln();
    let mut best = (f64::INFINITY, orders[0]);
    for (&a, &r) in orders.iter().zip(rdp) {
        let eps = match conversion {
            Conversion::Classic => r - ld / (a - 1.0),
            Conversion::Improved => r + (-1.0 / a).ln_1p() - (ld + a.ln()) / (a - 1.0),
        };
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

/// Accumulated RDP over a fixed order grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub orders: Vec<f64>,
    pub rdp: Vec<f64>,
    pub fractional: FractionalMethod,
}

impl AccountantState {
    pub fn new(orders: Vec<f64>) -> Self {
        let rdp = vec![0.0; orders.len()];
        AccountantState {
            orders,
            rdp,
            fractional: FractionalMethod::default(),
        }
    }

    /// Adds `steps` steps at sampling rate `q` and noise multiplier `σ`.
    pub fn compose(&mut self, q: f64, sigma: f64, steps: u64) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let one = rdp_step_with(q, sigma, &self.orders, self.fractional)?;
        for (acc, r) in self.rdp.iter_mut().zip(one) {
            *acc += steps as f64 * r;
        }
        Ok(())
    }

    pub fn epsilon(&self, delta: f64, conversion: Conversion) -> Result<(f64, f64)> {
        rdp_to_epsilon(&self.orders, &self.rdp, delta, conversion)
    }
}

/// ε for `steps` steps of the subsampled Gaussian with the default options.
pub fn compute_epsilon(sigma: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    Ok(privacy_report(sigma, q, steps, delta, &AccountantOptions::default())?.epsilon)
}

pub fn privacy_report(sigma: f64, q: f64, steps: u64, delta: f64, opts: &AccountantOptions) -> Result<PrivacyReport> {
    check_delta(delta)?;
    let mut report = PrivacyReport {
        epsilon: 0.0,
        delta,
        sigma,
        q,
        steps,
        order: None,
    };
    if steps == 0 {
        return Ok(report);
    }
    let mut state = AccountantState::new(opts.orders.clone());
    state.fractional = opts.fractional;
    state.compose(q, sigma, steps)?;
    let (eps, order) = state.epsilon(delta, opts.conversion)?;
    report.epsilon = eps;
    report.order = Some(order);
    Ok(report)
}

const MAX_BRACKET_EXPANSIONS: usize = 64;
const SIGMA_TOLERANCE: f64 = 1e-4;
const BRACKET_WIDTH: f64 = 1e-12;

/// Smallest-noise σ whose ε hits `target_eps`, found by bisection on a
/// geometric scale. Returns the upper bracket end once the bracket is
/// narrower than 1e-12 relative, so `ε(σ) ≤ target` and the relative gap
/// is below 1e-4.
pub fn find_noise_multiplier(target_eps: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    find_noise_multiplier_with(target_eps, q, steps, delta, &AccountantOptions::default())
}

pub fn find_noise_multiplier_with(
    target_eps: f64,
    q: f64,
    steps: u64,
    delta: f64,
    opts: &AccountantOptions,
) -> Result<f64> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(invalid(format!("target epsilon must be positive, got {target_eps}")));
    }
    if steps == 0 {
        return Ok(0.0);
    }
    let eps = |s: f64| privacy_report(s, q, steps, delta, opts).map(|r| r.epsilon);
    let (mut lo, mut hi) = (1.0, 1.0);
    let mut e_hi = eps(hi)?;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        if e_hi <= target_eps {
            break;
        }
        lo = hi;
        hi *= 2.0;
        e_hi = eps(hi)?;
    }
    if e_hi > target_eps {
        return Err(Error::Unreachable(format!(
            "ε = {target_eps} needs σ > {hi}; the order grid bounds ε below at {e_hi}"
        )));
    }
    let mut e_lo = eps(lo)?;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        if e_lo >= target_eps {
            break;
        }
        (hi, e_hi) = (lo, e_lo);
        lo /= 2.0;
        e_lo = eps(lo)?;
    }
    if e_lo < target_eps {
        return Err(Error::Unreachable(format!(
            "ε = {target_eps} is met even at σ = {lo}"
        )));
    }
    // Bisect until the bracket itself has converged rather than stopping at
    // the first midpoint within tolerance: early exits land on either side
    // of the root, which breaks strict monotonicity of σ in the target.
    for _ in 0..200 {
        if hi / lo - 1.0 < BRACKET_WIDTH {
            break;
        }
        let mid = (lo * hi).sqrt();
        let e = eps(mid)?;
        if e > target_eps {
            lo = mid;
        } else {
            hi = mid;
            e_hi = e;
        }
    }
    if (e_hi - target_eps).abs() / target_eps >= SIGMA_TOLERANCE {
        return Err(Error::Unreachable(format!(
            "bisection converged at σ = {hi} with ε = {e_hi}, not within 1e-4 of {target_eps}"
        )));
    }
    Ok(hi)
}

/// ε at every δ of an ascending grid, for one noise configuration.
pub fn epsilon_curve(sigma: f64, q: f64, steps: u64, deltas: &[f64]) -> Result<Vec<(f64, f64)>> {
    epsilon_curve_with(sigma, q, steps, deltas, &AccountantOptions::default())
}

pub fn epsilon_curve_with(
    sigma: f64,
    q: f64,
    steps: u64,
    deltas: &[f64],
    opts: &AccountantOptions,
) -> Result<Vec<(f64, f64)>> {
    if deltas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("delta grid must be strictly ascending"));
    }
    let mut state = AccountantState::new(opts.orders.clone());
    state.fractional = opts.fractional;
    state.compose(q, sigma, steps)?;
    deltas
        .iter()
        .map(|&d| {
            if steps == 0 {
                check_delta(d).map(|_| (d, 0.0))
            } else {
                state.epsilon(d, opts.conversion).map(|(e, _)| (d, e))
            }
        })
        .collect()
}

/// ε per batch size with `σ ∝ batch` and fixed steps: `σ_b = base_σ·b/base_batch`, `q_b = b/n`.
pub fn batch_scaling_curve(
    base_sigma: f64,
    base_batch: usize,
    n: usize,
    steps: u64,
    delta: f64,
    batches: &[usize],
) -> Result<Vec<(usize, f64)>> {
    batches
        .iter()
        .map(|&b| {
            if b == 0 || b > n {
                return Err(invalid(format!("batch size {b} must lie in 1..={n}")));
            }
            let sigma = base_sigma * b as f64 / base_batch as f64;
            compute_epsilon(sigma, b as f64 / n as f64, steps, delta).map(|e| (b, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_are_sorted_and_distinct() {
        for g in [default_orders(), compact_orders()] {
            assert!(g.windows(2).all(|w| w[0] < w[1]));
            assert!(g[0] > 1.0);
        }
        assert_eq!(*default_orders().last().unwrap(), 256.0);
    }

    #[test]
    fn zero_steps_cost_nothing() {
        assert_eq!(compute_epsilon(1.0, 0.01, 0, 1e-5).unwrap(), 0.0);
        assert_eq!(compute_epsilon(0.0, 0.01, 0, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn no_noise_is_infinite() {
        assert_eq!(compute_epsilon(0.0, 0.01, 5, 1e-5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn improved_conversion_never_exceeds_classic() {
        let mut st = AccountantState::new(default_orders());
        st.compose(0.01, 1.1, 1000).unwrap();
        let (c, _) = st.epsilon(1e-5, Conversion::Classic).unwrap();
        let (i, _) = st.epsilon(1e-5, Conversion::Improved).unwrap();
        assert!(i <= c);
    }

    #[test]
    fn rejects_bad_delta() {
        assert!(compute_epsilon(1.0, 0.01, 5, 0.0).is_err());
        assert!(compute_epsilon(1.0, 0.01, 5, 1.0).is_err());
    }
}

//! Uplink channel model: expected rate under Rayleigh fading, transmission
//! error probability, outage sampling, and the power solver that pins every
//! device to a common error probability.
//!
//! The fading power gain is unit-mean exponential. Expectations over it are
//! evaluated with a fixed double-exponential quadrature rule (substitution
//! `z = exp(sinh t)`, trapezoid in `t`), which handles both the logarithmic
//! rate integrand and the essentially singular outage integrand
//! `exp(-a/z)` to near machine precision. The outage expectation also has the
//! closed form `1 - 2*sqrt(a)*K1(2*sqrt(a))`, implemented independently via
//! the integral representation of the Bessel `K1` function; the two routes
//! serve as mutual checks.

use crate::config::FadingKind;
use crate::types::{DeviceProfile, Error, Result, SystemConstants};
use rand::Rng;
use std::sync::OnceLock;

struct ExpRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Quadrature rule for `E[g(Z)]` with `Z` unit exponential: `Σ w_i g(z_i)`
/// with the weights summing to exactly 1. Nodes whose weight underflows are
/// dropped.
fn exp_rule() -> &'static ExpRule {
    static RULE: OnceLock<ExpRule> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 201usize;
        let (t_lo, t_hi) = (-4.0f64, 4.0f64);
        let h = (t_hi - t_lo) / (n - 1) as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let t = t_lo + i as f64 * h;
            let z = t.sinh().exp();
            let w = h * z * t.cosh() * (-z).exp();
            if w > 0.0 && w.is_finite() {
                nodes.push(z);
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        ExpRule { nodes, weights }
    })
}

/// `1/(d^2 (I + B N0))`: multiplying by transmit power and fading gain gives
/// the receiver SNR.
pub fn snr_coefficient(profile: &DeviceProfile, consts: &SystemConstants) -> f64 {
    let denom = profile.distance_m * profile.distance_m
        * (profile.interference_w + profile.bandwidth_hz * consts.noise_psd_w_hz);
    1.0 / denom
}

/// Expected uplink rate in bit/s at transmit power `p`:
/// `B * E[log2(1 + p * gain * fading / (d^2 (I + B N0)))]`.
pub fn expected_rate(
    profile: &DeviceProfile,
    consts: &SystemConstants,
    fading: FadingKind,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::Invalid(format!(
            "transmit power must be > 0, got {p}"
        )));
    }
    let snr = p * snr_coefficient(profile, consts);
    let log2_e = std::f64::consts::LOG2_E;
    match fading {
        FadingKind::Deterministic => Ok(profile.bandwidth_hz * (1.0 + snr).ln() * log2_e),
        FadingKind::Rayleigh => {
            let rule = exp_rule();
            let mut acc = 0.0;
            for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                acc += w * (1.0 + snr * z).ln();
            }
            Ok(profile.bandwidth_hz * acc * log2_e)
        }
    }
}

/// The dimensionless outage argument `a = threshold * (I + B N0) * d^2 / p`.
pub fn outage_argument(profile: &DeviceProfile, consts: &SystemConstants, p: f64) -> f64 {
    consts.waterfall_threshold / (p * snr_coefficient(profile, consts))
}

/// Transmission error probability at power `p`:
/// `E[1 - exp(-a / fading)]` over the fading gain.
pub fn error_probability(
    profile: &DeviceProfile,
    consts: &SystemConstants,
    fading: FadingKind,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::Invalid(format!(
            "transmit power must be > 0, got {p}"
        )));
    }
    let a = outage_argument(profile, consts, p);
    match fading {
        FadingKind::Deterministic => Ok(1.0 - (-a).exp()),
        FadingKind::Rayleigh => {
            let rule = exp_rule();
            let mut survive = 0.0;
            for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                survive += w * (-a / z).exp();
            }
            Ok((1.0 - survive).clamp(0.0, 1.0))
        }
    }
}

/// Modified Bessel function of the second kind, order 1, via the integral
/// representation `K1(x) = ∫ exp(-x cosh t) cosh t dt` on a trapezoid grid.
/// Accurate to near machine precision for `x >= 4e-3`, which covers every
/// physically plausible outage argument.
pub fn bessel_k1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Invalid(format!(
            "Bessel K1 argument must be > 0, got {x}"
        )));
    }
    let h = 0.02f64;
    let mut acc = 0.0;
    let mut j = 0u64;
    loop {
        let t = j as f64 * h;
        let c = t.cosh();
        if x * c > 745.0 {
            break;
        }
        let term = (-x * c).exp() * c;
        acc += if j == 0 { 0.5 * term } else { term };
        j += 1;
    }
    Ok(h * acc)
}

/// Closed-form Rayleigh outage probability `1 - 2 sqrt(a) K1(2 sqrt(a))`,
/// an independent route to the value of [`error_probability`].
pub fn outage_closed_form(a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Invalid(format!(
            "outage argument must be > 0, got {a}"
        )));
    }
    let x = 2.0 * a.sqrt();
    Ok((1.0 - x * bessel_k1(x)?).clamp(0.0, 1.0))
}

/// Result of solving for the power that achieves a target error probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSolution {
    pub power_w: f64,
    pub achieved_error_prob: f64,
    /// False when the target lies outside what the power box can reach; the
    /// power is then clamped to the closer endpoint.
    pub feasible: bool,
}

/// Finds the transmit power in `[p_min, p_max]` whose error probability
/// matches `q_target` to within 1e-9, by bisection (the error probability is
/// strictly decreasing in power). Unattainable targets return the clamped
/// endpoint with `feasible = false`.
pub fn solve_power_for_error(
    profile: &DeviceProfile,
    consts: &SystemConstants,
    fading: FadingKind,
    q_target: f64,
    p_min: f64,
    p_max: f64,
) -> Result<PowerSolution> {
    const TOL: f64 = 1e-9;
    if !(q_target > 0.0 && q_target < 1.0) {
        return Err(Error::Invalid(format!(
            "target error probability must lie strictly inside (0, 1), got {q_target}"
        )));
    }
    if !(p_min > 0.0 && p_min <= p_max) {
        return Err(Error::Invalid(format!(
            "power bounds require 0 < p_min <= p_max, got [{p_min}, {p_max}]"
        )));
    }
    let q_hi = error_probability(profile, consts, fading, p_min)?;
    let q_lo = error_probability(profile, consts, fading, p_max)?;
    if q_target <= q_lo {
        return Ok(PowerSolution {
            power_w: p_max,
            achieved_error_prob: q_lo,
            feasible: (q_lo - q_target).abs() < TOL,
        });
    }
    if q_target >= q_hi {
        return Ok(PowerSolution {
            power_w: p_min,
            achieved_error_prob: q_hi,
            feasible: (q_hi - q_target).abs() < TOL,
        });
    }
    let (mut lo, mut hi) = (p_min, p_max);
    let mut best = PowerSolution {
        power_w: p_min,
        achieved_error_prob: q_hi,
        feasible: false,
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let q = error_probability(profile, consts, fading, mid)?;
        if (q - q_target).abs() < (best.achieved_error_prob - q_target).abs() {
            best = PowerSolution {
                power_w: mid,
                achieved_error_prob: q,
                feasible: false,
            };
        }
        if (q - q_target).abs() < TOL {
            break;
        }
        if q > q_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    best.feasible = (best.achieved_error_prob - q_target).abs() < TOL;
    Ok(best)
}

/// Draws whether an upload is received: true with probability `1 - q`.
pub fn sample_outage(q: f64, rng: &mut impl Rng) -> Result<bool> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Invalid(format!(
            "error probability must lie in [0, 1], got {q}"
        )));
    }
    Ok(rng.random::<f64>() >= q)
}

//! Shared domain types: device profiles, decision strategies, bounds, and
//! analysis constants.
//!
//! All types here are plain data, immutable after construction, and safe to
//! share across threads. Units are documented per field: powers in watts,
//! frequencies in hertz (CPU) or bits per second (radio), distances in meters,
//! energies in joules, times in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Crate-wide error type. Message text names the violated requirement so that
/// configuration mistakes are diagnosable without a stack trace.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration schema or validation failure.
    #[error("config: {0}")]
    Config(String),
    /// An argument outside its documented domain.
    #[error("invalid argument: {0}")]
    Invalid(String),
    /// An input that must be non-empty was empty.
    #[error("empty input: {0}")]
    Empty(String),
    /// A combinatorial guard was exceeded.
    #[error("problem too large: {0}")]
    TooLarge(String),
    /// A name lookup (scenario, subcommand) failed.
    #[error("unknown name: {0}")]
    Unknown(String),
    /// A requested target is unattainable under the given constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Structured-file parse failure, with location where available.
    #[error("parse: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Per-device physical and data parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Device index, dense from 0.
    pub id: usize,
    /// CPU frequency in cycles per second.
    pub cpu_hz: f64,
    /// Distance to the base station in meters.
    pub distance_m: f64,
    /// Interference power at the receiver in watts.
    pub interference_w: f64,
    /// Uplink bandwidth in hertz.
    pub bandwidth_hz: f64,
    /// Local sample count per class (index `c-1` holds class `c`).
    pub class_counts: Vec<u64>,
    /// Normalized share of the total (augmented) training data held by this
    /// device. Shares sum to 1 across devices once augmentation is fixed.
    pub data_share: f64,
}

impl DeviceProfile {
    /// Validates the physical fields; `class_counts` and `data_share` are
    /// checked where they are produced.
    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_hz > 0.0) {
            return Err(Error::Config(format!(
                "device {}: cpu_hz must be > 0, got {}",
                self.id, self.cpu_hz
            )));
        }
        if !(self.distance_m > 0.0) {
            return Err(Error::Config(format!(
                "device {}: distance_m must be > 0, got {}",
                self.id, self.distance_m
            )));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config(format!(
                "device {}: bandwidth_hz must be > 0, got {}",
                self.id, self.bandwidth_hz
            )));
        }
        if !(self.interference_w >= 0.0) {
            return Err(Error::Config(format!(
                "device {}: interference_w must be >= 0, got {}",
                self.id, self.interference_w
            )));
        }
        Ok(())
    }
}

/// Inclusive numeric range, serialized as a two-element array `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::Config(format!(
                "range [min, max] requires finite min <= max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

impl TryFrom<[f64; 2]> for Range {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Range::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

/// Inclusive integer range for quantization bit widths, serialized as
/// `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct BitRange {
    pub min: u32,
    pub max: u32,
}

impl BitRange {
    pub fn new(min: u32, max: u32) -> Result<Self> {
        if min < 1 || min > max {
            return Err(Error::Config(format!(
                "bit range requires 1 <= min <= max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, b: u32) -> bool {
        self.min <= b && b <= self.max
    }
}

impl TryFrom<[u32; 2]> for BitRange {
    type Error = Error;
    fn try_from(v: [u32; 2]) -> Result<Self> {
        BitRange::new(v[0], v[1])
    }
}

impl From<BitRange> for [u32; 2] {
    fn from(r: BitRange) -> Self {
        [r.min, r.max]
    }
}

/// Box constraints for the joint decision: augmentation factor, pruning ratio,
/// quantization bits, transmit power, and the search interval for the common
/// outage target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyBounds {
    /// Augmentation factor box (dimensionless).
    pub aug_factor: Range,
    /// Pruning ratio box; must stay within `[0, 1)`.
    pub prune_ratio: Range,
    /// Quantization bit-width box (positive integers).
    pub quant_bits: BitRange,
    /// Transmit power box in watts.
    pub tx_power_w: Range,
    /// Search interval for the common transmission-error probability.
    pub target_error_prob: Range,
}

impl StrategyBounds {
    pub fn validate(&self) -> Result<()> {
        if self.prune_ratio.min < 0.0 || self.prune_ratio.max >= 1.0 {
            return Err(Error::Config(format!(
                "bounds.prune_ratio must lie within [0, 1), got [{}, {}]",
                self.prune_ratio.min, self.prune_ratio.max
            )));
        }
        if self.aug_factor.min < 0.0 {
            return Err(Error::Config(format!(
                "bounds.aug_factor must be non-negative, got min {}",
                self.aug_factor.min
            )));
        }
        if !(self.tx_power_w.min > 0.0) {
            return Err(Error::Config(format!(
                "bounds.tx_power_w must be strictly positive, got min {}",
                self.tx_power_w.min
            )));
        }
        if self.quant_bits.max > 32 {
            return Err(Error::Config(format!(
                "bounds.quant_bits.max must be <= 32, got {}",
                self.quant_bits.max
            )));
        }
        if !(self.target_error_prob.min > 0.0 && self.target_error_prob.max < 1.0) {
            return Err(Error::Config(format!(
                "bounds.target_error_prob must lie strictly inside (0, 1), got [{}, {}]",
                self.target_error_prob.min, self.target_error_prob.max
            )));
        }
        Ok(())
    }
}

/// The joint decision the optimizer searches over: a common transmission-error
/// target plus per-device augmentation factors, pruning ratios, quantization
/// bit widths, and the transmit powers derived from the error target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    /// Common target transmission-error probability.
    pub target_error_prob: f64,
    /// Per-device augmentation factor.
    pub aug_factor: Vec<f64>,
    /// Per-device pruning ratio.
    pub prune_ratio: Vec<f64>,
    /// Per-device quantization bit width.
    pub quant_bits: Vec<u32>,
    /// Per-device transmit power in watts, derived from the error target (or
    /// pinned by a scenario). Empty until powers have been solved.
    pub tx_power_w: Vec<f64>,
}

impl Strategy {
    /// Builds a uniform strategy broadcasting one value per knob to all
    /// devices. Powers start empty and are filled by the power solver.
    pub fn uniform(
        devices: usize,
        target_error_prob: f64,
        aug_factor: f64,
        prune_ratio: f64,
        quant_bits: u32,
    ) -> Self {
        Self {
            target_error_prob,
            aug_factor: vec![aug_factor; devices],
            prune_ratio: vec![prune_ratio; devices],
            quant_bits: vec![quant_bits; devices],
            tx_power_w: Vec::new(),
        }
    }

    fn check_lengths(&self, devices: usize) -> Result<()> {
        for (name, len) in [
            ("aug_factor", self.aug_factor.len()),
            ("prune_ratio", self.prune_ratio.len()),
            ("quant_bits", self.quant_bits.len()),
        ] {
            if len != devices {
                return Err(Error::Config(format!(
                    "strategy.{name} has {len} entries for {devices} devices"
                )));
            }
        }
        if !self.tx_power_w.is_empty() && self.tx_power_w.len() != devices {
            return Err(Error::Config(format!(
                "strategy.tx_power_w has {} entries for {} devices",
                self.tx_power_w.len(),
                devices
            )));
        }
        Ok(())
    }

    /// Checks every box constraint exactly against `bounds`. Solved powers are
    /// checked only when present.
    pub fn validate(&self, bounds: &StrategyBounds, devices: usize) -> Result<()> {
        self.check_lengths(devices)?;
        if !bounds.target_error_prob.contains(self.target_error_prob) {
            return Err(Error::Config(format!(
                "strategy.target_error_prob = {} outside bounds.target_error_prob [{}, {}]",
                self.target_error_prob, bounds.target_error_prob.min, bounds.target_error_prob.max
            )));
        }
        for (u, &x) in self.aug_factor.iter().enumerate() {
            if !bounds.aug_factor.contains(x) {
                return Err(Error::Config(format!(
                    "strategy.aug_factor[{u}] = {x} outside bounds.aug_factor [{}, {}]",
                    bounds.aug_factor.min, bounds.aug_factor.max
                )));
            }
        }
        for (u, &x) in self.prune_ratio.iter().enumerate() {
            if !bounds.prune_ratio.contains(x) {
                return Err(Error::Config(format!(
                    "strategy.prune_ratio[{u}] = {x} outside bounds.prune_ratio [{}, {}]",
                    bounds.prune_ratio.min, bounds.prune_ratio.max
                )));
            }
        }
        for (u, &b) in self.quant_bits.iter().enumerate() {
            if !bounds.quant_bits.contains(b) {
                return Err(Error::Config(format!(
                    "strategy.quant_bits[{u}] = {b} outside bounds.quant_bits [{}, {}]",
                    bounds.quant_bits.min, bounds.quant_bits.max
                )));
            }
        }
        for (u, &p) in self.tx_power_w.iter().enumerate() {
            if !bounds.tx_power_w.contains(p) {
                return Err(Error::Config(format!(
                    "strategy.tx_power_w[{u}] = {p} outside bounds.tx_power_w [{}, {}]",
                    bounds.tx_power_w.min, bounds.tx_power_w.max
                )));
            }
        }
        Ok(())
    }

    /// Checks physical sanity only (domains, not optimizer boxes). Scenario
    /// overrides such as "no pruning" may lie outside the search box on
    /// purpose and are validated with this weaker check.
    pub fn validate_physical(&self, devices: usize) -> Result<()> {
        self.check_lengths(devices)?;
        if !(self.target_error_prob >= 0.0 && self.target_error_prob < 1.0) {
            return Err(Error::Config(format!(
                "strategy.target_error_prob must lie in [0, 1), got {}",
                self.target_error_prob
            )));
        }
        for (u, &x) in self.aug_factor.iter().enumerate() {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!(
                    "strategy.aug_factor[{u}] must be finite and >= 0, got {x}"
                )));
            }
        }
        for (u, &x) in self.prune_ratio.iter().enumerate() {
            if !(0.0..1.0).contains(&x) {
                return Err(Error::Config(format!(
                    "strategy.prune_ratio[{u}] must lie in [0, 1), got {x}"
                )));
            }
        }
        for (u, &b) in self.quant_bits.iter().enumerate() {
            if b < 1 || b > 32 {
                return Err(Error::Config(format!(
                    "strategy.quant_bits[{u}] must lie in [1, 32], got {b}"
                )));
            }
        }
        for (u, &p) in self.tx_power_w.iter().enumerate() {
            if !(p > 0.0) {
                return Err(Error::Config(format!(
                    "strategy.tx_power_w[{u}] must be > 0, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Calibrated or assumed analysis constants plus the physical-layer and
/// energy-model parameters shared by all devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    /// Gradient smoothness constant (largest observed gradient Lipschitz
    /// ratio). The bound evaluator requires `0 < learning_rate < 1/(16 L)`.
    pub lipschitz: f64,
    /// Upper bound on the minibatch gradient variance.
    pub grad_variance: f64,
    /// Per-device upper bound on the squared deviation between the device
    /// gradient and the population gradient.
    pub heterogeneity: Vec<f64>,
    /// Upper bound on the squared parameter norm along the trajectory.
    pub param_norm_sq: f64,
    /// Learning rate.
    pub learning_rate: f64,
    /// Per-device worst-case squared gradient range, summed over coordinates:
    /// `V * (hi - lo)^2` with `hi`/`lo` the extreme gradient components seen.
    pub grad_range_sq: Vec<f64>,
    /// Loss gap between the initial model and the best achievable loss on the
    /// pooled data; numerator of the analytic round budget.
    pub initial_gap: f64,
    /// Channel-quality threshold in the packet-error model (dimensionless).
    pub waterfall_threshold: f64,
    /// Bits of per-vector header overhead in a quantized upload (range
    /// endpoints).
    pub overhead_bits: u32,
    /// Minibatch size used for local training.
    pub batch_size: usize,
    /// CPU cycles to process one training sample.
    pub cycles_per_train_sample: f64,
    /// CPU cycles to generate one synthetic sample.
    pub cycles_per_gen_sample: f64,
    /// Effective switched capacitance of the device CPUs (J * s^(gamma-1) /
    /// cycles^gamma scale constant).
    pub eff_capacitance: f64,
    /// Exponent on CPU frequency in the dynamic power model.
    pub power_exponent: f64,
    /// Receiver noise power spectral density in watts per hertz.
    pub noise_psd_w_hz: f64,
}

impl SystemConstants {
    /// Validates positivity requirements. Analysis constants may be zero
    /// (e.g. a homogeneous population has zero heterogeneity) but never
    /// negative; energy constants must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lipschitz", self.lipschitz),
            ("learning_rate", self.learning_rate),
            ("cycles_per_train_sample", self.cycles_per_train_sample),
            ("cycles_per_gen_sample", self.cycles_per_gen_sample),
            ("eff_capacitance", self.eff_capacitance),
            ("power_exponent", self.power_exponent),
            ("waterfall_threshold", self.waterfall_threshold),
            ("initial_gap", self.initial_gap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "constants.{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("grad_variance", self.grad_variance),
            ("param_norm_sq", self.param_norm_sq),
            ("noise_psd_w_hz", self.noise_psd_w_hz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "constants.{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        for (u, &z) in self.heterogeneity.iter().enumerate() {
            if !(z >= 0.0 && z.is_finite()) {
                return Err(Error::Config(format!(
                    "constants.heterogeneity[{u}] must be non-negative, got {z}"
                )));
            }
        }
        for (u, &r) in self.grad_range_sq.iter().enumerate() {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!(
                    "constants.grad_range_sq[{u}] must be non-negative, got {r}"
                )));
            }
        }
        if self.batch_size < 1 {
            return Err(Error::Config(
                "constants.batch_size must be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Largest learning rate admitted by the bound evaluator for the stored
    /// smoothness constant.
    pub fn step_size_limit(&self) -> f64 {
        1.0 / (16.0 * self.lipschitz)
    }
}

/// Checks that shares form a probability vector within `tol`.
pub fn validate_shares(shares: &[f64], tol: f64) -> Result<()> {
    if shares.is_empty() {
        return Err(Error::Empty("share vector".to_string()));
    }
    let mut sum = crate::numeric::KahanSum::new();
    for (u, &t) in shares.iter().enumerate() {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Invalid(format!(
                "share[{u}] must be a finite non-negative value, got {t}"
            )));
        }
        sum.add(t);
    }
    let total = sum.value();
    if (total - 1.0).abs() > tol {
        return Err(Error::Invalid(format!(
            "shares must sum to 1 within {tol}, got {total}"
        )));
    }
    Ok(())
}

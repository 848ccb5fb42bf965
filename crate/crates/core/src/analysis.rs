//! Convergence analysis: expected participation weights under slot sampling
//! with transmission failures, the per-term gradient-norm bound, the round
//! budget needed to hit a convergence tolerance, and empirical calibration of
//! the analysis constants.
//!
//! Each round draws `S` upload slots independently from the data-share
//! distribution (with replacement, so one device can occupy several slots)
//! and every slot independently fails with its device's error probability.
//! Conditioned on at least one success, the server averages the received
//! gradients. The aggregation weight `β̄_u` is the expected coefficient of
//! device `u`'s gradient in that average; the companion weight `ᾱ_u` uses the
//! squared success count in the denominator and governs the variance terms.

use crate::numeric::{binomial, KahanSum};
use crate::rng;
use crate::types::{validate_shares, Error, Result, SystemConstants};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How a set of participation weights was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMethod {
    ExactEnumeration,
    MonteCarlo,
    UniformClosedForm,
}

/// Expected aggregation coefficients per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationWeights {
    /// Expected share of the aggregated gradient, `β̄_u`; sums to 1.
    pub aggregation: Vec<f64>,
    /// Expected share with a squared success-count denominator, `ᾱ_u`.
    pub variance: Vec<f64>,
    pub method: WeightMethod,
    /// Standard errors of `aggregation`, present for Monte Carlo estimates.
    pub aggregation_se: Option<Vec<f64>>,
    /// Standard errors of `variance`, present for Monte Carlo estimates.
    pub variance_se: Option<Vec<f64>>,
}

fn check_error_probs(error_probs: &[f64], devices: usize) -> Result<()> {
    if error_probs.len() != devices {
        return Err(Error::Invalid(format!(
            "got {} error probabilities for {devices} devices",
            error_probs.len()
        )));
    }
    for (u, &q) in error_probs.iter().enumerate() {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::Invalid(format!(
                "error probability for device {u} must lie in [0, 1), got {q}"
            )));
        }
    }
    Ok(())
}

const ENUM_TUPLE_LIMIT: f64 = 1e6;
const ENUM_OP_LIMIT: f64 = 2e8;

/// Computes both weight vectors exactly by iterating every ordered slot
/// assignment (`U^S` tuples) and every success subset within each. Guarded
/// against combinatorial blowup; larger problems should use
/// [`monte_carlo_weights`].
pub fn enumerate_weights(
    shares: &[f64],
    error_probs: &[f64],
    slots: usize,
) -> Result<ParticipationWeights> {
    validate_shares(shares, 1e-9)?;
    let devices = shares.len();
    check_error_probs(error_probs, devices)?;
    if slots == 0 {
        return Err(Error::Invalid("slot count must be >= 1".to_string()));
    }
    if slots >= 64 {
        return Err(Error::TooLarge(format!(
            "{slots} slots cannot be enumerated; use the Monte Carlo estimator"
        )));
    }
    let tuples = (devices as f64).powi(slots as i32);
    let ops = tuples * (1u64 << slots) as f64 * slots as f64;
    if tuples > ENUM_TUPLE_LIMIT || ops > ENUM_OP_LIMIT {
        return Err(Error::TooLarge(format!(
            "enumerating {devices}^{slots} slot assignments exceeds the exact-computation guard; \
             use the Monte Carlo estimator"
        )));
    }

    let mut beta: Vec<KahanSum> = (0..devices).map(|_| KahanSum::new()).collect();
    let mut alpha: Vec<KahanSum> = (0..devices).map(|_| KahanSum::new()).collect();
    let mut tuple = vec![0usize; slots];
    loop {
        let mut tau_prod = 1.0;
        for &u in &tuple {
            tau_prod *= shares[u];
        }
        if tau_prod > 0.0 {
            let mut all_fail = 1.0;
            for &u in &tuple {
                all_fail *= error_probs[u];
            }
            let denom = 1.0 - all_fail;
            for mask in 1u32..(1u32 << slots) {
                let mut p = 1.0;
                for (i, &u) in tuple.iter().enumerate() {
                    p *= if mask >> i & 1 == 1 {
                        1.0 - error_probs[u]
                    } else {
                        error_probs[u]
                    };
                }
                if p == 0.0 {
                    continue;
                }
                let k = mask.count_ones() as f64;
                let w = tau_prod * p / denom;
                for (i, &u) in tuple.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        beta[u].add(w / k);
                        alpha[u].add(w / (k * k));
                    }
                }
            }
        }
        let mut pos = 0;
        loop {
            if pos == slots {
                let aggregation: Vec<f64> = beta.iter().map(|s| s.value()).collect();
                let variance: Vec<f64> = alpha.iter().map(|s| s.value()).collect();
                return Ok(ParticipationWeights {
                    aggregation,
                    variance,
                    method: WeightMethod::ExactEnumeration,
                    aggregation_se: None,
                    variance_se: None,
                });
            }
            tuple[pos] += 1;
            if tuple[pos] < devices {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

/// Estimates the weight vectors by simulating rounds: draw the slot
/// assignment, draw per-slot failures, and redraw the failure pattern for the
/// same assignment until some slot succeeds (matching the per-assignment
/// conditioning of the exact computation). Reports standard errors.
pub fn monte_carlo_weights(
    shares: &[f64],
    error_probs: &[f64],
    slots: usize,
    trials: u64,
    rng: &mut impl Rng,
) -> Result<ParticipationWeights> {
    const RESAMPLE_CAP: u32 = 100_000;
    validate_shares(shares, 1e-9)?;
    let devices = shares.len();
    check_error_probs(error_probs, devices)?;
    if slots == 0 {
        return Err(Error::Invalid("slot count must be >= 1".to_string()));
    }
    if trials == 0 {
        return Err(Error::Invalid("trial count must be >= 1".to_string()));
    }

    let mut cumulative = Vec::with_capacity(devices);
    let mut acc = 0.0;
    for &t in shares {
        acc += t;
        cumulative.push(acc);
    }

    let mut beta_sum: Vec<KahanSum> = (0..devices).map(|_| KahanSum::new()).collect();
    let mut alpha_sum: Vec<KahanSum> = (0..devices).map(|_| KahanSum::new()).collect();
    let mut beta_sq = vec![0.0; devices];
    let mut alpha_sq = vec![0.0; devices];
    let mut tuple = vec![0usize; slots];
    let mut success = vec![false; slots];
    let mut multiplicity = vec![0u32; devices];

    for _ in 0..trials {
        for slot in tuple.iter_mut() {
            let draw: f64 = rng.random();
            *slot = match cumulative.iter().position(|&c| draw < c) {
                Some(u) => u,
                None => devices - 1,
            };
        }
        let mut k = 0u32;
        let mut attempts = 0u32;
        while k == 0 {
            if attempts == RESAMPLE_CAP {
                return Err(Error::Infeasible(format!(
                    "all {slots} slots failed in {RESAMPLE_CAP} consecutive redraws; \
                     error probabilities are too close to 1"
                )));
            }
            attempts += 1;
            k = 0;
            for (i, &u) in tuple.iter().enumerate() {
                let ok = rng.random::<f64>() >= error_probs[u];
                success[i] = ok;
                k += u32::from(ok);
            }
        }
        for (i, &u) in tuple.iter().enumerate() {
            if success[i] {
                multiplicity[u] += 1;
            }
        }
        let kf = k as f64;
        for (i, &u) in tuple.iter().enumerate() {
            if success[i] && multiplicity[u] > 0 {
                let m = std::mem::take(&mut multiplicity[u]) as f64;
                let b = m / kf;
                let a = m / (kf * kf);
                beta_sum[u].add(b);
                alpha_sum[u].add(a);
                beta_sq[u] += b * b;
                alpha_sq[u] += a * a;
            }
        }
    }

    let n = trials as f64;
    let finish = |sums: &[KahanSum], sqs: &[f64]| {
        let mean: Vec<f64> = sums.iter().map(|s| s.value() / n).collect();
        let se: Vec<f64> = mean
            .iter()
            .zip(sqs)
            .map(|(&m, &sq)| ((sq / n - m * m).max(0.0) / n).sqrt())
            .collect();
        (mean, se)
    };
    let (aggregation, aggregation_se) = finish(&beta_sum, &beta_sq);
    let (variance, variance_se) = finish(&alpha_sum, &alpha_sq);
    Ok(ParticipationWeights {
        aggregation,
        variance,
        method: WeightMethod::MonteCarlo,
        aggregation_se: Some(aggregation_se),
        variance_se: Some(variance_se),
    })
}

/// Expected number of successful slots per round when every device has error
/// probability `q`: `(1 - q^S) / Σ_{k=1..S} (1/k) C(S,k) (1-q)^k q^(S-k)`.
/// This is the harmonic-style mean that divides the variance weights in the
/// uniform case.
pub fn s_bar(q: f64, slots: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Invalid(format!(
            "uniform error probability must lie in [0, 1), got {q}"
        )));
    }
    if slots == 0 {
        return Err(Error::Invalid("slot count must be >= 1".to_string()));
    }
    let s = slots as u64;
    let mut denom = KahanSum::new();
    for k in 1..=s {
        denom.add(
            binomial(s, k) / k as f64
                * (1.0 - q).powi(k as i32)
                * q.powi((s - k) as i32),
        );
    }
    Ok((1.0 - q.powi(s as i32)) / denom.value())
}

/// Closed-form weights for the uniform-error-probability case:
/// `β̄_u = τ_u` and `ᾱ_u = τ_u / S̄`.
pub fn uniform_weights(shares: &[f64], q: f64, slots: usize) -> Result<ParticipationWeights> {
    validate_shares(shares, 1e-9)?;
    let sb = s_bar(q, slots)?;
    Ok(ParticipationWeights {
        aggregation: shares.to_vec(),
        variance: shares.iter().map(|&t| t / sb).collect(),
        method: WeightMethod::UniformClosedForm,
        aggregation_se: None,
        variance_se: None,
    })
}

/// The per-term decomposition of the average-gradient-norm bound, plus the
/// round budget when one was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Initial loss gap amortized over the rounds.
    pub initial_gap_term: f64,
    /// Penalty for the gap between expected aggregation weights and data
    /// shares (zero under uniform error probabilities).
    pub selection_mismatch_term: f64,
    /// Device-gradient dispersion weighted by the variance weights.
    pub outage_heterogeneity_term: f64,
    /// Penalty for training on pruned models.
    pub pruning_term: f64,
    /// Quantization error contribution, using worst-case per-device gradient
    /// ranges.
    pub quantization_term: f64,
    /// Penalty for unequal per-device error probabilities (zero when they
    /// are uniform).
    pub error_spread_term: f64,
    /// Minibatch gradient noise contribution.
    pub gradient_noise_term: f64,
    /// Sum of all terms.
    pub total: f64,
    /// Squared distance between aggregation weights and data shares.
    pub chi_square: f64,
    /// Residual floor of the bound, filled when a round budget was solved.
    pub psi: Option<f64>,
    /// Rounds needed to reach the requested tolerance, when attainable.
    pub rounds_budget: Option<u64>,
    pub budget_feasible: Option<bool>,
}

impl std::fmt::Display for BoundReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<28} {:>14.6e}", "initial gap", self.initial_gap_term)?;
        writeln!(
            f,
            "{:<28} {:>14.6e}",
            "selection mismatch", self.selection_mismatch_term
        )?;
        writeln!(
            f,
            "{:<28} {:>14.6e}",
            "outage heterogeneity", self.outage_heterogeneity_term
        )?;
        writeln!(f, "{:<28} {:>14.6e}", "pruning", self.pruning_term)?;
        writeln!(f, "{:<28} {:>14.6e}", "quantization", self.quantization_term)?;
        writeln!(f, "{:<28} {:>14.6e}", "error spread", self.error_spread_term)?;
        writeln!(
            f,
            "{:<28} {:>14.6e}",
            "gradient noise", self.gradient_noise_term
        )?;
        writeln!(f, "{:<28} {:>14.6e}", "total", self.total)?;
        writeln!(f, "{:<28} {:>14.6e}", "chi-square", self.chi_square)?;
        if let Some(psi) = self.psi {
            writeln!(f, "{:<28} {:>14.6e}", "residual floor", psi)?;
        }
        match (self.rounds_budget, self.budget_feasible) {
            (Some(r), _) => writeln!(f, "{:<28} {r:>14}", "round budget")?,
            (None, Some(false)) => {
                writeln!(f, "{:<28} {:>14}", "round budget", "infeasible")?
            }
            _ => {}
        }
        Ok(())
    }
}

/// `η/2 - 8Lη²`, the descent coefficient dividing every bound term. Errors
/// unless `0 < η < 1/(16L)`, the range where it is positive.
pub fn descent_coefficient(consts: &SystemConstants) -> Result<f64> {
    let eta = consts.learning_rate;
    let limit = consts.step_size_limit();
    if !(eta > 0.0 && eta < limit) {
        return Err(Error::Invalid(format!(
            "step-size condition violated: learning rate {eta} outside (0, {limit:.6e})"
        )));
    }
    Ok(eta / 2.0 - 8.0 * consts.lipschitz * eta * eta)
}

fn check_analysis_inputs(
    consts: &SystemConstants,
    devices: usize,
    prune_ratio: &[f64],
    quant_bits: &[u32],
) -> Result<()> {
    for (name, len) in [
        ("heterogeneity", consts.heterogeneity.len()),
        ("grad_range_sq", consts.grad_range_sq.len()),
        ("prune_ratio", prune_ratio.len()),
        ("quant_bits", quant_bits.len()),
    ] {
        if len != devices {
            return Err(Error::Invalid(format!(
                "{name} has {len} entries for {devices} devices"
            )));
        }
    }
    for (u, &b) in quant_bits.iter().enumerate() {
        if b < 1 {
            return Err(Error::Invalid(format!(
                "quantization bits for device {u} must be >= 1"
            )));
        }
    }
    for (u, &r) in prune_ratio.iter().enumerate() {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Invalid(format!(
                "pruning ratio for device {u} must lie in [0, 1], got {r}"
            )));
        }
    }
    Ok(())
}

fn quant_denominator(bits: u32) -> f64 {
    let levels = (1u64 << bits) - 1;
    4.0 * (levels as f64) * (levels as f64)
}

/// Evaluates every term of the average-gradient-norm bound after `rounds`
/// rounds. Per-round gradient ranges are replaced by the stored worst-case
/// ranges, so the quantization term is an upper estimate of the per-round
/// average.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_bound(
    consts: &SystemConstants,
    weights: &ParticipationWeights,
    shares: &[f64],
    error_probs: &[f64],
    prune_ratio: &[f64],
    quant_bits: &[u32],
    slots: usize,
    rounds: u64,
) -> Result<BoundReport> {
    let devices = shares.len();
    validate_shares(shares, 1e-9)?;
    check_error_probs(error_probs, devices)?;
    check_analysis_inputs(consts, devices, prune_ratio, quant_bits)?;
    if weights.aggregation.len() != devices || weights.variance.len() != devices {
        return Err(Error::Invalid(format!(
            "weights cover {} devices, expected {devices}",
            weights.aggregation.len()
        )));
    }
    if rounds == 0 {
        return Err(Error::Invalid("round count must be >= 1".to_string()));
    }
    if slots == 0 {
        return Err(Error::Invalid("slot count must be >= 1".to_string()));
    }
    let d = descent_coefficient(consts)?;
    let eta = consts.learning_rate;
    let l = consts.lipschitz;
    let omega = rounds as f64;

    let initial_gap_term = consts.initial_gap / (d * omega);

    let mut chi = KahanSum::new();
    let mut tau_z = KahanSum::new();
    let mut alpha_z = KahanSum::new();
    let mut beta_sq = KahanSum::new();
    let mut rho_sum = KahanSum::new();
    let mut beta_rho = KahanSum::new();
    let mut quant = KahanSum::new();
    let mut alpha_sum = KahanSum::new();
    let mut q_bar_acc = KahanSum::new();
    for u in 0..devices {
        let diff = weights.aggregation[u] - shares[u];
        chi.add(diff * diff);
        tau_z.add(shares[u] * consts.heterogeneity[u]);
        alpha_z.add(weights.variance[u] * consts.heterogeneity[u]);
        beta_sq.add(weights.aggregation[u] * weights.aggregation[u]);
        rho_sum.add(prune_ratio[u]);
        beta_rho.add(weights.aggregation[u] * prune_ratio[u]);
        quant.add(
            weights.variance[u] * consts.grad_range_sq[u] / quant_denominator(quant_bits[u]),
        );
        alpha_sum.add(weights.variance[u]);
        q_bar_acc.add(shares[u] * error_probs[u]);
    }
    let chi_square = chi.value();
    let selection_mismatch_term = eta * chi_square * tau_z.value() / d;
    let outage_heterogeneity_term = 8.0 * l * eta * eta * alpha_z.value() / d;
    let pruning_term = eta * l * l * consts.param_norm_sq
        * (beta_sq.value() * rho_sum.value() + 4.0 * eta * l * beta_rho.value())
        / d;
    let quantization_term = l * eta * eta * quant.value() / d;

    let q_max = error_probs.iter().cloned().fold(0.0f64, f64::max);
    let q_bar = q_bar_acc.value();
    let uniform_q = error_probs.windows(2).all(|w| w[0] == w[1]);
    let error_spread_term = if uniform_q {
        0.0
    } else {
        let mut spread_coeff = KahanSum::new();
        let s = slots as u64;
        for k in 2..=s {
            spread_coeff.add(q_max.powi((s - k) as i32) * binomial(s, k));
        }
        let spread_norm = 1.0 - q_max.powi(s as i32);
        let mut spread_dev = KahanSum::new();
        for u in 0..devices {
            let dq = error_probs[u] - q_bar;
            spread_dev.add(shares[u] * dq * dq * consts.heterogeneity[u]);
        }
        if spread_norm > 0.0 {
            8.0 * l * eta * eta * (spread_coeff.value() / spread_norm) * spread_dev.value() / d
        } else {
            0.0
        }
    };

    let gradient_noise_term = 2.0 * l * eta * eta * alpha_sum.value() * consts.grad_variance / d;

    let total = initial_gap_term
        + selection_mismatch_term
        + outage_heterogeneity_term
        + pruning_term
        + quantization_term
        + error_spread_term
        + gradient_noise_term;
    Ok(BoundReport {
        initial_gap_term,
        selection_mismatch_term,
        outage_heterogeneity_term,
        pruning_term,
        quantization_term,
        error_spread_term,
        gradient_noise_term,
        total,
        chi_square,
        psi: None,
        rounds_budget: None,
        budget_feasible: None,
    })
}

/// The round budget solving the bound for a tolerance, under uniform error
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundBudget {
    /// Smallest round count meeting the tolerance, absent when infeasible.
    pub rounds: Option<u64>,
    /// The tolerance floor: bound terms that no amount of rounds removes.
    pub psi: f64,
    /// `(η/2 - 8Lη²)·ε - psi`; the budget is the gap divided by this.
    pub denominator: f64,
    pub feasible: bool,
}

/// Computes the residual floor `Ψ` and the smallest integer round count with
/// bound total at most `epsilon`, assuming every device has error
/// probability `q`. Infeasible (no round count suffices) when the floor
/// already exceeds the tolerance.
pub fn rounds_to_epsilon(
    consts: &SystemConstants,
    shares: &[f64],
    prune_ratio: &[f64],
    quant_bits: &[u32],
    q: f64,
    slots: usize,
    epsilon: f64,
) -> Result<RoundBudget> {
    let devices = shares.len();
    validate_shares(shares, 1e-9)?;
    check_analysis_inputs(consts, devices, prune_ratio, quant_bits)?;
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!(
            "tolerance must be > 0, got {epsilon}"
        )));
    }
    let d = descent_coefficient(consts)?;
    let eta = consts.learning_rate;
    let l = consts.lipschitz;
    let sb = s_bar(q, slots)?;

    let mut tau_sq = KahanSum::new();
    let mut rho_sum = KahanSum::new();
    let mut tau_rho = KahanSum::new();
    let mut quant = KahanSum::new();
    let mut tau_z = KahanSum::new();
    for u in 0..devices {
        tau_sq.add(shares[u] * shares[u]);
        rho_sum.add(prune_ratio[u]);
        tau_rho.add(shares[u] * prune_ratio[u]);
        quant.add(shares[u] / sb * consts.grad_range_sq[u] / quant_denominator(quant_bits[u]));
        tau_z.add(shares[u] / sb * consts.heterogeneity[u]);
    }
    let psi = eta * l * l * consts.param_norm_sq
        * (tau_sq.value() * rho_sum.value() + 4.0 * eta * l * tau_rho.value())
        + l * eta * eta * quant.value()
        + 2.0 * l * eta * eta * (consts.grad_variance / sb + 4.0 * tau_z.value());
    let denominator = d * epsilon - psi;
    if !(denominator > 0.0) {
        return Ok(RoundBudget {
            rounds: None,
            psi,
            denominator,
            feasible: false,
        });
    }
    let raw = consts.initial_gap / denominator;
    let rounds = raw.ceil().max(1.0);
    if rounds > 9.0e18 {
        return Ok(RoundBudget {
            rounds: None,
            psi,
            denominator,
            feasible: false,
        });
    }
    Ok(RoundBudget {
        rounds: Some(rounds as u64),
        psi,
        denominator,
        feasible: true,
    })
}

/// Empirical estimates of the analysis constants, all running maxima over
/// the probed points and therefore lower bounds on the true suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEstimates {
    pub lipschitz: f64,
    pub grad_variance: f64,
    pub heterogeneity: Vec<f64>,
    pub param_norm_sq: f64,
    pub grad_range_sq: Vec<f64>,
}

/// What the calibration probes need from a training problem.
pub trait CalibrationTarget {
    /// Model dimension.
    fn dim(&self) -> usize;
    fn device_count(&self) -> usize;
    /// Data shares, summing to 1.
    fn shares(&self) -> Vec<f64>;
    /// Full-batch gradient of one device's loss.
    fn device_gradient(&self, device: usize, w: &[f64]) -> Vec<f64>;
    /// Minibatch gradient at the configured batch size.
    fn minibatch_gradient(&self, device: usize, w: &[f64], rng: &mut dyn rand::RngCore)
        -> Vec<f64>;
}

const MINIBATCH_PROBES: usize = 8;

/// Walks a short descent trajectory from the zero model, probing gradients
/// at each point and a nearby perturbed point, and records running maxima of
/// the smoothness ratio, device-to-population gradient deviation, minibatch
/// noise, parameter norm, and per-device gradient range.
pub fn calibrate_constants<T: CalibrationTarget + ?Sized>(
    target: &T,
    probe_rounds: usize,
    step: f64,
    seed: u64,
) -> Result<CalibrationEstimates> {
    if probe_rounds < 2 {
        return Err(Error::Invalid(format!(
            "calibration needs at least 2 probe rounds, got {probe_rounds}"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!(
            "calibration step must be positive and finite, got {step}"
        )));
    }
    let dim = target.dim();
    let devices = target.device_count();
    if dim == 0 || devices == 0 {
        return Err(Error::Empty("calibration target".to_string()));
    }
    let shares = target.shares();
    validate_shares(&shares, 1e-9)?;

    let mut w = vec![0.0; dim];
    let mut lipschitz = 0.0f64;
    let mut grad_variance = 0.0f64;
    let mut heterogeneity = vec![0.0f64; devices];
    let mut param_norm_sq = 0.0f64;
    let mut range_lo = vec![f64::INFINITY; devices];
    let mut range_hi = vec![f64::NEG_INFINITY; devices];
    let mut prev: Option<(Vec<f64>, Vec<Vec<f64>>)> = None;

    for round in 0..probe_rounds {
        let grads: Vec<Vec<f64>> = (0..devices)
            .map(|u| target.device_gradient(u, &w))
            .collect();
        for (u, g) in grads.iter().enumerate() {
            for &x in g {
                if !x.is_finite() {
                    return Err(Error::Invalid(format!(
                        "calibration diverged: non-finite gradient for device {u} at probe \
                         round {round}; reduce the probe step"
                    )));
                }
            }
        }
        let mut global = vec![0.0; dim];
        for (u, g) in grads.iter().enumerate() {
            for (gl, &x) in global.iter_mut().zip(g) {
                *gl += shares[u] * x;
            }
        }
        for (u, g) in grads.iter().enumerate() {
            let dev: f64 = g
                .iter()
                .zip(&global)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            heterogeneity[u] = heterogeneity[u].max(dev);
            for &x in g {
                range_lo[u] = range_lo[u].min(x);
                range_hi[u] = range_hi[u].max(x);
            }
            let mut noise = 0.0;
            let mut mb_rng = rng::stream(seed, round as u64, u as u64, "calibrate-minibatch");
            for _ in 0..MINIBATCH_PROBES {
                let mb = target.minibatch_gradient(u, &w, &mut mb_rng);
                noise += mb
                    .iter()
                    .zip(g)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            grad_variance = grad_variance.max(noise / MINIBATCH_PROBES as f64);
        }

        let mut dir_rng = rng::stream(seed, round as u64, 0, "calibrate-perturb");
        let mut dir: Vec<f64> = (0..dim)
            .map(|_| dir_rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = dir.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut dir {
                *x /= norm;
            }
        } else {
            dir[0] = 1.0;
        }
        let w_probe: Vec<f64> = w.iter().zip(&dir).map(|(&a, &b)| a + step * b).collect();
        for (u, g) in grads.iter().enumerate() {
            let g_probe = target.device_gradient(u, &w_probe);
            let dg: f64 = g_probe
                .iter()
                .zip(g)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            lipschitz = lipschitz.max(dg / step);
        }
        if let Some((w_prev, grads_prev)) = &prev {
            let dw: f64 = w
                .iter()
                .zip(w_prev)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dw > 0.0 {
                for (g, g_prev) in grads.iter().zip(grads_prev) {
                    let dg: f64 = g
                        .iter()
                        .zip(g_prev)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    lipschitz = lipschitz.max(dg / dw);
                }
            }
        }

        let wn: f64 = w.iter().map(|&x| x * x).sum();
        let wp: f64 = w_probe.iter().map(|&x| x * x).sum();
        param_norm_sq = param_norm_sq.max(wn).max(wp);
        prev = Some((w.clone(), grads));
        for (x, &g) in w.iter_mut().zip(&global) {
            *x -= step * g;
        }
        let wn: f64 = w.iter().map(|&x| x * x).sum();
        param_norm_sq = param_norm_sq.max(wn);
    }

    let grad_range_sq = range_lo
        .iter()
        .zip(&range_hi)
        .map(|(&lo, &hi)| {
            if hi >= lo {
                dim as f64 * (hi - lo) * (hi - lo)
            } else {
                0.0
            }
        })
        .collect();
    Ok(CalibrationEstimates {
        lipschitz,
        grad_variance,
        heterogeneity,
        param_norm_sq,
        grad_range_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_bar_limits() {
        assert_eq!(s_bar(0.0, 7).unwrap(), 7.0);
        assert!((s_bar(0.9, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!((s_bar(0.3, 1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_slot_no_failures_gives_shares() {
        let w = enumerate_weights(&[0.5, 0.5], &[0.0, 0.0], 1).unwrap();
        assert_eq!(w.aggregation, vec![0.5, 0.5]);
        assert_eq!(w.variance, vec![0.5, 0.5]);
    }

    #[test]
    fn enumeration_matches_uniform_closed_form() {
        let shares = [0.2, 0.3, 0.5];
        let q = 0.25;
        let exact = enumerate_weights(&shares, &[q; 3], 3).unwrap();
        let closed = uniform_weights(&shares, q, 3).unwrap();
        for u in 0..3 {
            assert!((exact.aggregation[u] - closed.aggregation[u]).abs() < 1e-12);
            assert!((exact.variance[u] - closed.variance[u]).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_guard_suggests_monte_carlo() {
        let shares = vec![0.01; 100];
        let q = vec![0.1; 100];
        let err = enumerate_weights(&shares, &q, 10).unwrap_err();
        assert!(err.to_string().contains("Monte Carlo"), "{err}");
    }

    fn test_consts(devices: usize) -> SystemConstants {
        SystemConstants {
            lipschitz: 2.0,
            grad_variance: 0.5,
            heterogeneity: vec![0.3; devices],
            param_norm_sq: 4.0,
            learning_rate: 0.01,
            grad_range_sq: vec![50.0; devices],
            initial_gap: 1.5,
            waterfall_threshold: 1.0,
            overhead_bits: 64,
            batch_size: 16,
            cycles_per_train_sample: 2.7e8,
            cycles_per_gen_sample: 2.2e8,
            eff_capacitance: 1.25e-26,
            power_exponent: 3.0,
            noise_psd_w_hz: 4.0e-21,
        }
    }

    #[test]
    fn uniform_error_probs_zero_the_mismatch_and_spread_terms() {
        let consts = test_consts(3);
        let shares = [0.2, 0.3, 0.5];
        let w = uniform_weights(&shares, 0.2, 4).unwrap();
        let report = evaluate_bound(
            &consts,
            &w,
            &shares,
            &[0.2; 3],
            &[0.1; 3],
            &[8; 3],
            4,
            100,
        )
        .unwrap();
        assert_eq!(report.selection_mismatch_term, 0.0);
        assert_eq!(report.error_spread_term, 0.0);
        assert_eq!(report.chi_square, 0.0);
        assert!(report.total > 0.0);
    }

    #[test]
    fn step_size_condition_is_enforced() {
        let mut consts = test_consts(1);
        consts.learning_rate = 1.0;
        let err = descent_coefficient(&consts).unwrap_err();
        assert!(err.to_string().contains("step-size condition"), "{err}");
    }

    #[test]
    fn budget_scales_linearly_in_gap() {
        let consts = test_consts(2);
        let shares = [0.5, 0.5];
        let b1 = rounds_to_epsilon(&consts, &shares, &[0.0; 2], &[16; 2], 0.1, 5, 1.0).unwrap();
        assert!(b1.feasible);
        let mut doubled = consts.clone();
        doubled.initial_gap *= 2.0;
        let b2 = rounds_to_epsilon(&doubled, &shares, &[0.0; 2], &[16; 2], 0.1, 5, 1.0).unwrap();
        let r1 = b1.rounds.unwrap() as f64;
        let r2 = b2.rounds.unwrap() as f64;
        assert!((r2 - 2.0 * r1).abs() <= 1.0, "{r1} vs {r2}");
    }
}

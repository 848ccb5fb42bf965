//! Time and energy accounting for generation, local training, and uplink
//! transmission, plus the total-cost objective.
//!
//! CPU work draws dynamic power `ϱ f^γ`, so an activity lasting `T` seconds
//! costs `ϱ f^γ T` joules. Transmission costs `p T` at transmit power `p`.
//! The total cost charges the data-share-weighted per-round energy for every
//! round plus the one-off generation energy.

use crate::numeric::KahanSum;
use crate::types::{DeviceProfile, Error, Result, SystemConstants};
use serde::{Deserialize, Serialize};

/// Time (seconds) and energy (joules) of one device's activities. Round
/// components and the one-off generation component are kept separate so
/// callers can combine them per the cost structure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub gen_s: f64,
    pub gen_j: f64,
    pub train_s: f64,
    pub train_j: f64,
    pub comm_s: f64,
    pub comm_j: f64,
}

impl EnergyBreakdown {
    /// Energy spent in one round: training plus transmission.
    pub fn round_j(&self) -> f64 {
        self.train_j + self.comm_j
    }

    pub fn total_j(&self) -> f64 {
        self.gen_j + self.train_j + self.comm_j
    }
}

fn dynamic_power_w(profile: &DeviceProfile, consts: &SystemConstants) -> f64 {
    consts.eff_capacitance * profile.cpu_hz.powf(consts.power_exponent)
}

/// Per-round training and transmission cost for one device.
///
/// Training processes a minibatch through the unpruned fraction of the model:
/// `T = b c_tr (1 - ρ) / f`. Transmission sends the quantized payload of
/// `V δ + o` bits at the expected uplink rate. `rho` may reach 1.0 here (the
/// full-pruning limit costs zero training time) even though the optimizer box
/// keeps it strictly below 1.
pub fn round_energy(
    profile: &DeviceProfile,
    consts: &SystemConstants,
    rho: f64,
    bits: u32,
    tx_power_w: f64,
    rate_bps: f64,
    model_dim: usize,
) -> Result<EnergyBreakdown> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!(
            "pruning ratio must lie in [0, 1], got {rho}"
        )));
    }
    if bits < 1 {
        return Err(Error::Invalid("quantization bits must be >= 1".to_string()));
    }
    if !(tx_power_w > 0.0) {
        return Err(Error::Invalid(format!(
            "transmit power must be > 0, got {tx_power_w}"
        )));
    }
    if !(rate_bps > 0.0) {
        return Err(Error::Infeasible(format!(
            "device {}: uplink rate is 0 bit/s, transmission never completes",
            profile.id
        )));
    }
    let train_s =
        consts.batch_size as f64 * consts.cycles_per_train_sample * (1.0 - rho) / profile.cpu_hz;
    let train_j = dynamic_power_w(profile, consts) * train_s;
    let payload_bits = model_dim as f64 * bits as f64 + consts.overhead_bits as f64;
    let comm_s = payload_bits / rate_bps;
    let comm_j = tx_power_w * comm_s;
    Ok(EnergyBreakdown {
        gen_s: 0.0,
        gen_j: 0.0,
        train_s,
        train_j,
        comm_s,
        comm_j,
    })
}

/// One-off cost of generating `generated` synthetic samples on a device.
pub fn generation_energy(
    profile: &DeviceProfile,
    consts: &SystemConstants,
    generated: u64,
) -> EnergyBreakdown {
    let gen_s = generated as f64 * consts.cycles_per_gen_sample / profile.cpu_hz;
    let gen_j = dynamic_power_w(profile, consts) * gen_s;
    EnergyBreakdown {
        gen_s,
        gen_j,
        ..EnergyBreakdown::default()
    }
}

/// Total expected cost over `rounds` rounds:
/// `rounds * Σ_u share_u (train_u + comm_u) + Σ_u gen_u`. The per-round term
/// is the data-share-weighted average device cost, charged every round; the
/// generation term is paid once.
pub fn total_energy(
    round: &[EnergyBreakdown],
    gen: &[EnergyBreakdown],
    shares: &[f64],
    rounds: f64,
) -> Result<f64> {
    if round.len() != shares.len() || gen.len() != shares.len() {
        return Err(Error::Invalid(format!(
            "total energy needs aligned inputs, got {} round entries, {} generation entries, {} shares",
            round.len(),
            gen.len(),
            shares.len()
        )));
    }
    if !(rounds >= 0.0) {
        return Err(Error::Invalid(format!(
            "round count must be >= 0, got {rounds}"
        )));
    }
    let mut per_round = KahanSum::new();
    for (e, &t) in round.iter().zip(shares) {
        per_round.add(t * e.round_j());
    }
    let mut gen_total = KahanSum::new();
    for e in gen {
        gen_total.add(e.gen_j);
    }
    Ok(rounds * per_round.value() + gen_total.value())
}

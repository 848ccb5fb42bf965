//! End-to-end federated training loop at desk scale: a softmax-regression
//! model, one local SGD step per device per round, share-weighted
//! participant sampling with replacement, prune-then-quantize uplinks, and
//! outage-aware aggregation that skips rounds nobody survives.

use crate::analysis::CalibrationTarget;
use crate::compress;
use crate::data::{LocalDataset, Sample};
use crate::energy::{self, EnergyBreakdown};
use crate::numeric::KahanSum;
use crate::rng;
use crate::types::{
    validate_shares, DeviceProfile, Error, Result, Strategy, SystemConstants,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Shape of the multinomial logistic-regression model: one weight row plus
/// bias per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub classes: usize,
    pub features: usize,
}

impl ModelSpec {
    /// Parameter count `(features + 1) * classes`, biases included.
    pub fn dim(&self) -> usize {
        (self.features + 1) * self.classes
    }

    fn scores(&self, w: &[f64], features: &[f64], out: &mut [f64]) {
        let stride = self.features + 1;
        for c in 0..self.classes {
            let row = &w[c * stride..c * stride + stride];
            let mut dot = row[self.features];
            for (a, b) in row[..self.features].iter().zip(features) {
                dot += a * b;
            }
            out[c] = dot;
        }
    }

    /// Cross-entropy of one sample; softmax probabilities land in `probs`.
    fn sample_loss(&self, w: &[f64], sample: &Sample, probs: &mut [f64]) -> f64 {
        self.scores(w, &sample.features, probs);
        let peak = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - peak).exp();
            norm += *p;
        }
        for p in probs.iter_mut() {
            *p /= norm;
        }
        -probs[sample.label - 1].ln()
    }

    fn accumulate_gradient(&self, w: &[f64], sample: &Sample, acc: &mut [f64], probs: &mut [f64]) {
        self.sample_loss(w, sample, probs);
        let stride = self.features + 1;
        for c in 0..self.classes {
            let coeff = probs[c] - if c == sample.label - 1 { 1.0 } else { 0.0 };
            let row = &mut acc[c * stride..c * stride + stride];
            for (slot, &x) in row[..self.features].iter_mut().zip(&sample.features) {
                *slot += coeff * x;
            }
            row[self.features] += coeff;
        }
    }
}

/// One device's training pool, flattened class-by-class from its mixed
/// (local plus synthetic) dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceData {
    pub samples: Vec<Sample>,
}

impl DeviceData {
    pub fn from_local(local: &LocalDataset) -> Self {
        Self {
            samples: local.iter().cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Mean gradient over an explicit set of samples.
fn mean_gradient(spec: &ModelSpec, w: &[f64], samples: &[&Sample]) -> Vec<f64> {
    let mut acc = vec![0.0; spec.dim()];
    let mut probs = vec![0.0; spec.classes];
    for s in samples {
        spec.accumulate_gradient(w, s, &mut acc, &mut probs);
    }
    let n = samples.len().max(1) as f64;
    for v in &mut acc {
        *v /= n;
    }
    acc
}

/// Minibatch gradient at the pruned model: prunes `w` by `rho`, draws a
/// size-`batch` minibatch, and averages per-sample gradients. A batch equal
/// to the dataset uses every sample once and draws nothing from the stream;
/// a larger batch draws with replacement.
pub fn local_gradient(
    spec: &ModelSpec,
    w: &[f64],
    data: &DeviceData,
    rho: f64,
    batch: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("device dataset".to_string()));
    }
    if batch == 0 {
        return Err(Error::Invalid("batch size must be >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!(
            "pruning ratio must lie in [0, 1], got {rho}"
        )));
    }
    let pruned = if rho == 1.0 {
        vec![0.0; w.len()]
    } else {
        compress::prune(w, rho)?.0
    };
    let n = data.len();
    let chosen: Vec<&Sample> = if batch == n {
        data.samples.iter().collect()
    } else if batch > n {
        (0..batch)
            .map(|_| &data.samples[rng.random_range(0..n)])
            .collect()
    } else {
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..batch {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices[..batch].iter().map(|&i| &data.samples[i]).collect()
    };
    Ok(mean_gradient(spec, &pruned, &chosen))
}

/// `slots` i.i.d. draws from the categorical share distribution.
pub fn sample_participants(
    shares: &[f64],
    slots: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    validate_shares(shares, 1e-9)?;
    let mut out = Vec::with_capacity(slots);
    for _ in 0..slots {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut pick = shares.len() - 1;
        for (i, &s) in shares.iter().enumerate() {
            cum += s;
            if u < cum {
                pick = i;
                break;
            }
        }
        out.push(pick);
    }
    Ok(out)
}

/// Mean of per-slot contributions, reduced in ascending device order with
/// compensated summation; `None` when no slot survived.
pub fn mean_update(contributions: &[(usize, Vec<f64>)]) -> Option<Vec<f64>> {
    if contributions.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..contributions.len()).collect();
    order.sort_by_key(|&i| (contributions[i].0, i));
    let dim = contributions[0].1.len();
    let k = contributions.len() as f64;
    let mut out = vec![0.0; dim];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut acc = KahanSum::new();
        for &i in &order {
            acc.add(contributions[i].1[c]);
        }
        *slot = acc.value() / k;
    }
    Some(out)
}

/// The global model between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub weights: Vec<f64>,
    pub round: u64,
}

impl GlobalModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            round: 0,
        }
    }
}

/// Solved uplink operating point for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLink {
    pub tx_power_w: f64,
    pub rate_bps: f64,
    pub error_prob: f64,
}

/// Everything one training round touches: sampled slots, outage draws,
/// per-slot realized energy, and post-update metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: u64,
    /// Device id per slot, in draw order.
    pub participants: Vec<usize>,
    /// Transmission success per slot.
    pub delivered: Vec<bool>,
    /// Realized energy per slot.
    pub energy: Vec<EnergyBreakdown>,
    pub loss: f64,
    pub accuracy: f64,
    /// True when every slot's transmission failed and the model kept its
    /// previous value.
    pub skipped: bool,
}

/// Aggregate counters for one complete run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds_run: u64,
    pub skipped_rounds: u64,
    pub rounds_to_target: Option<u64>,
    pub reached_target: bool,
}

/// Componentwise gap between the sampled and full-participation aggregate
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub max_deviation: f64,
    /// Standard error of the Monte Carlo mean at the worst component.
    pub std_error: f64,
    pub trials: u64,
}

/// A fully prepared federated experiment over one task instance.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model_spec: ModelSpec,
    pub devices: Vec<DeviceProfile>,
    pub consts: SystemConstants,
    pub strategy: Strategy,
    pub links: Vec<DeviceLink>,
    pub data: Vec<DeviceData>,
    /// Participation shares over the mixed datasets; must sum to 1.
    pub shares: Vec<f64>,
    pub test: Vec<Sample>,
    /// Participant slots per round.
    pub slots: usize,
    pub seed: u64,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let u = self.devices.len();
        if u == 0 {
            return Err(Error::Empty("device list".to_string()));
        }
        for (name, len) in [
            ("links", self.links.len()),
            ("datasets", self.data.len()),
            ("shares", self.shares.len()),
        ] {
            if len != u {
                return Err(Error::Invalid(format!(
                    "{name} cover {len} devices, profiles cover {u}"
                )));
            }
        }
        self.strategy.validate_physical(u)?;
        validate_shares(&self.shares, 1e-9)?;
        if self.slots == 0 {
            return Err(Error::Invalid(
                "participant slots per round must be >= 1".to_string(),
            ));
        }
        for (i, d) in self.data.iter().enumerate() {
            if d.is_empty() {
                return Err(Error::Empty(format!("dataset of device {i}")));
            }
        }
        Ok(())
    }

    /// Share-weighted training loss and test accuracy of a parameter vector.
    pub fn evaluate(&self, w: &[f64]) -> (f64, f64) {
        let mut probs = vec![0.0; self.model_spec.classes];
        let mut loss = KahanSum::new();
        for (data, &share) in self.data.iter().zip(&self.shares) {
            let mut local = KahanSum::new();
            for s in &data.samples {
                local.add(self.model_spec.sample_loss(w, s, &mut probs));
            }
            loss.add(share * local.value() / data.len() as f64);
        }
        let mut correct = 0u64;
        for s in &self.test {
            self.model_spec.scores(w, &s.features, &mut probs);
            let mut arg = 0;
            for (c, &p) in probs.iter().enumerate() {
                if p > probs[arg] {
                    arg = c;
                }
            }
            if arg == s.label - 1 {
                correct += 1;
            }
        }
        let accuracy = if self.test.is_empty() {
            0.0
        } else {
            correct as f64 / self.test.len() as f64
        };
        (loss.value(), accuracy)
    }

    /// Advances the model by one round: samples participants, runs the
    /// prune-gradient-quantize pipeline per slot, draws outages, and applies
    /// the mean of delivered reconstructions. An all-outage round leaves the
    /// model untouched and sets the skipped flag; participants still spend
    /// compute and transmit energy.
    pub fn run_round(&self, model: &mut GlobalModel) -> Result<RoundTrace> {
        let t = model.round + 1;
        let participants = sample_participants(
            &self.shares,
            self.slots,
            &mut rng::stream(self.seed, t, 0, "participants"),
        )?;
        let dim = self.model_spec.dim();
        let mut delivered = Vec::with_capacity(self.slots);
        let mut energy = Vec::with_capacity(self.slots);
        let mut contributions: Vec<(usize, Vec<f64>)> = Vec::new();
        for (slot, &u) in participants.iter().enumerate() {
            let device = &self.devices[u];
            let rho = self.strategy.prune_ratio[u];
            let bits = self.strategy.quant_bits[u];
            let link = &self.links[u];
            let grad = local_gradient(
                &self.model_spec,
                &model.weights,
                &self.data[u],
                rho,
                self.consts.batch_size,
                &mut rng::stream(self.seed, t, u as u64, &format!("minibatch/slot{slot}")),
            )?;
            let quantized = compress::quantize(
                &grad,
                bits,
                self.consts.overhead_bits,
                &mut rng::stream(self.seed, t, u as u64, &format!("quantize/slot{slot}")),
            )?;
            let lost = !crate::channel::sample_outage(
                link.error_prob,
                &mut rng::stream(self.seed, t, u as u64, &format!("outage/slot{slot}")),
            )?;
            energy.push(energy::round_energy(
                device,
                &self.consts,
                rho,
                bits,
                link.tx_power_w,
                link.rate_bps,
                dim,
            )?);
            delivered.push(!lost);
            if !lost {
                contributions.push((u, quantized.dequantize()));
            }
        }
        let skipped = match mean_update(&contributions) {
            Some(update) => {
                for (w, &g) in model.weights.iter_mut().zip(&update) {
                    *w -= self.consts.learning_rate * g;
                }
                false
            }
            None => true,
        };
        model.round = t;
        if model.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "training diverged at round {t}: model parameters are non-finite"
            )));
        }
        let (loss, accuracy) = self.evaluate(&model.weights);
        Ok(RoundTrace {
            round: t,
            participants,
            delivered,
            energy,
            loss,
            accuracy,
            skipped,
        })
    }

    /// Runs rounds until the accuracy target is reached (when stopping is
    /// requested) or the cap is hit, returning the final model, per-round
    /// traces, and summary counters.
    pub fn run(
        &self,
        round_cap: u64,
        target_accuracy: Option<f64>,
        stop_at_target: bool,
    ) -> Result<(GlobalModel, Vec<RoundTrace>, RunSummary)> {
        self.validate()?;
        let mut model = GlobalModel::zeros(self.model_spec.dim());
        let mut traces = Vec::new();
        let mut skipped = 0u64;
        let mut rounds_to_target = None;
        for _ in 0..round_cap {
            let trace = self.run_round(&mut model)?;
            if trace.skipped {
                skipped += 1;
            }
            let hit = target_accuracy.is_some_and(|target| trace.accuracy >= target);
            if hit && rounds_to_target.is_none() {
                rounds_to_target = Some(trace.round);
            }
            traces.push(trace);
            if hit && stop_at_target {
                break;
            }
        }
        let summary = RunSummary {
            rounds_run: model.round,
            skipped_rounds: skipped,
            rounds_to_target,
            reached_target: rounds_to_target.is_some(),
        };
        Ok((model, traces, summary))
    }

    /// Full-batch gradient of one device's loss, unpruned.
    pub fn device_full_gradient(&self, device: usize, w: &[f64]) -> Vec<f64> {
        let samples: Vec<&Sample> = self.data[device].samples.iter().collect();
        mean_gradient(&self.model_spec, w, &samples)
    }

    /// Share-weighted full-participation gradient of the global loss.
    pub fn global_gradient(&self, w: &[f64]) -> Vec<f64> {
        let dim = self.model_spec.dim();
        let mut acc = vec![KahanSum::new(); dim];
        for (u, &share) in self.shares.iter().enumerate() {
            let g = self.device_full_gradient(u, w);
            for (slot, &v) in acc.iter_mut().zip(&g) {
                slot.add(share * v);
            }
        }
        acc.into_iter().map(|k| k.value()).collect()
    }

    /// Compares the Monte Carlo mean of the sampled-participant aggregate
    /// against the full-participation gradient, componentwise, using exact
    /// per-device gradients (no outage, no pruning, no quantization).
    pub fn unbiasedness_probe(&self, w: &[f64], trials: u64, seed: u64) -> Result<DeviationReport> {
        if trials == 0 {
            return Err(Error::Invalid("probe needs at least 1 trial".to_string()));
        }
        let dim = self.model_spec.dim();
        let per_device: Vec<Vec<f64>> = (0..self.devices.len())
            .map(|u| self.device_full_gradient(u, w))
            .collect();
        let exact = self.global_gradient(w);
        let mut mean = vec![KahanSum::new(); dim];
        let mut sq = vec![KahanSum::new(); dim];
        for trial in 0..trials {
            let picks = sample_participants(
                &self.shares,
                self.slots,
                &mut rng::stream(seed, trial, 0, "probe-participants"),
            )?;
            for c in 0..dim {
                let mut acc = KahanSum::new();
                for &u in &picks {
                    acc.add(per_device[u][c]);
                }
                let v = acc.value() / picks.len() as f64;
                mean[c].add(v);
                sq[c].add(v * v);
            }
        }
        let n = trials as f64;
        let mut max_deviation = 0.0;
        let mut std_error = 0.0;
        for c in 0..dim {
            let m = mean[c].value() / n;
            let var = (sq[c].value() / n - m * m).max(0.0);
            let dev = (m - exact[c]).abs();
            if dev >= max_deviation {
                max_deviation = dev;
                std_error = (var / n).sqrt();
            }
        }
        Ok(DeviationReport {
            max_deviation,
            std_error,
            trials,
        })
    }

    /// Approximates the smallest attainable global training loss by running
    /// full-batch gradient descent from the zero model, returning the best
    /// loss seen. Stops early once an iteration improves the best loss by
    /// less than one part in 1e8.
    pub fn centralized_best_loss(&self, iters: u64, step: f64) -> Result<f64> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Invalid(format!(
                "descent step must be positive and finite, got {step}"
            )));
        }
        let mut w = vec![0.0; self.model_spec.dim()];
        let mut best = self.evaluate(&w).0;
        for i in 0..iters {
            let g = self.global_gradient(&w);
            for (slot, &v) in w.iter_mut().zip(&g) {
                *slot -= step * v;
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "centralized descent diverged at iteration {}",
                    i + 1
                )));
            }
            let loss = self.evaluate(&w).0;
            let gain = best - loss;
            best = best.min(loss);
            if gain < 1e-8 * best.abs().max(1.0) && i > 0 {
                break;
            }
        }
        Ok(best)
    }
}

impl CalibrationTarget for Experiment {
    fn dim(&self) -> usize {
        self.model_spec.dim()
    }

    fn device_count(&self) -> usize {
        self.devices.len()
    }

    fn shares(&self) -> Vec<f64> {
        self.shares.clone()
    }

    fn device_gradient(&self, device: usize, w: &[f64]) -> Vec<f64> {
        self.device_full_gradient(device, w)
    }

    fn minibatch_gradient(
        &self,
        device: usize,
        w: &[f64],
        rng: &mut dyn rand::RngCore,
    ) -> Vec<f64> {
        local_gradient(
            &self.model_spec,
            w,
            &self.data[device],
            0.0,
            self.consts.batch_size,
            rng,
        )
        .expect("minibatch gradient on a validated experiment")
    }
}

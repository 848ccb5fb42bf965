//! Experiment orchestration: named scenario overrides, one-time task
//! preparation (synthesis, partitioning, generator fitting, constant
//! calibration), link solving, the analytic energy objective handed to the
//! optimizer, full simulation runs, and grid sweeps with file emission.

use crate::analysis::{self, CalibrationEstimates, ParticipationWeights, RoundBudget};
use crate::channel;
use crate::config::Config;
use crate::data::{
    self, plan_augmentation, LocalDataset, Sample, SurrogateGenerator,
};
use crate::energy::{self, EnergyBreakdown};
use crate::engine::{DeviceData, DeviceLink, Experiment, ModelSpec, RunSummary};
use crate::metrics::{self, MetricsRecord};
use crate::numeric::KahanSum;
use crate::optimizer::{
    bcd_optimize, BcdBudgets, BcdOptions, BcdOutcome, BoOptions, StrategyObjective,
};
use crate::rng;
use crate::types::{
    DeviceProfile, Error, Result, Strategy, StrategyBounds, SystemConstants,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Named experiment variants: the full system, the plain-transmission
/// baseline, and one ablation per module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Traditional federated learning: no augmentation, no pruning, widest
    /// quantization, maximum transmit power.
    Tfl,
    /// The full pipeline with powers solved from the error target.
    FedDpq,
    /// Augmentation disabled.
    NoDa,
    /// Pruning and quantization disabled.
    NoPq,
    /// Power control disabled: fixed transmit power for every device.
    NoPc,
    /// The configured strategy verbatim.
    Custom,
}

impl Scenario {
    /// Every named variant, in reporting order.
    pub const NAMED: [Scenario; 5] = [
        Scenario::Tfl,
        Scenario::FedDpq,
        Scenario::NoDa,
        Scenario::NoPq,
        Scenario::NoPc,
    ];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scenario::Tfl => "TFL",
            Scenario::FedDpq => "FedDPQ",
            Scenario::NoDa => "FedDPQ-noDA",
            Scenario::NoPq => "FedDPQ-noPQ",
            Scenario::NoPc => "FedDPQ-noPC",
            Scenario::Custom => "custom",
        };
        f.write_str(name)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TFL" => Ok(Scenario::Tfl),
            "FedDPQ" => Ok(Scenario::FedDpq),
            "FedDPQ-noDA" => Ok(Scenario::NoDa),
            "FedDPQ-noPQ" => Ok(Scenario::NoPq),
            "FedDPQ-noPC" => Ok(Scenario::NoPc),
            "custom" => Ok(Scenario::Custom),
            other => Err(Error::Unknown(format!(
                "unknown scenario '{other}'; expected TFL, FedDPQ, FedDPQ-noDA, \
                 FedDPQ-noPQ, FedDPQ-noPC, or custom"
            ))),
        }
    }
}

/// Rewrites a base strategy for a scenario. The transformation is pure and
/// idempotent: an empty power vector means "solve from the error target",
/// a filled one fixes the powers.
pub fn apply_scenario(
    scenario: Scenario,
    base: &Strategy,
    bounds: &StrategyBounds,
    no_pc_power_w: f64,
) -> Strategy {
    let u = base.aug_factor.len();
    let mut s = base.clone();
    match scenario {
        Scenario::Custom => {}
        Scenario::FedDpq => {
            s.tx_power_w = Vec::new();
        }
        Scenario::Tfl => {
            s.aug_factor = vec![0.0; u];
            s.prune_ratio = vec![0.0; u];
            s.quant_bits = vec![bounds.quant_bits.max; u];
            s.tx_power_w = vec![bounds.tx_power_w.max; u];
        }
        Scenario::NoDa => {
            s.aug_factor = vec![0.0; u];
            s.tx_power_w = Vec::new();
        }
        Scenario::NoPq => {
            s.prune_ratio = vec![0.0; u];
            s.quant_bits = vec![bounds.quant_bits.max; u];
            s.tx_power_w = Vec::new();
        }
        Scenario::NoPc => {
            s.tx_power_w = vec![no_pc_power_w; u];
        }
    }
    s
}

/// Blend constant for rescaling heterogeneity with class coverage: keeps the
/// ratio finite when a device's classes are already balanced.
const COVERAGE_BLEND: f64 = 0.05;

/// Squared distance between a count vector's class distribution and the
/// uniform one.
fn class_imbalance(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.is_empty() {
        return 0.0;
    }
    let uniform = 1.0 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 / total as f64 - uniform;
            d * d
        })
        .sum()
}

/// A task instance fully prepared for any number of scenario runs: devices,
/// partitioned data, fitted generator, and resolved analysis constants.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: Config,
    pub devices: Vec<DeviceProfile>,
    pub model_spec: ModelSpec,
    /// Per-device partitions before augmentation.
    pub locals: Vec<LocalDataset>,
    pub generator: SurrogateGenerator,
    pub test: Vec<Sample>,
    pub consts: SystemConstants,
    /// Calibration output, present when any constant had to be estimated.
    pub estimates: Option<CalibrationEstimates>,
}

impl Prepared {
    /// Synthesizes the task, partitions it, fits the generator, and fills
    /// any analysis constants the config leaves open by probing the
    /// un-augmented problem.
    pub fn build(config: &Config) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut devices = config.build_devices()?;
        let u = devices.len();
        let task = &config.task;
        let task_seed = task.seed.unwrap_or(seed);
        let global = data::synth_task(task, &mut rng::stream(task_seed, 0, 0, "task"));
        let locals = data::partition_dirichlet(
            &global.train,
            task.classes,
            u,
            config.experiment.dirichlet_pi,
            &mut rng::stream(task_seed, 0, 0, "partition"),
        )?;
        let grand: u64 = locals.iter().map(LocalDataset::total).sum();
        for (device, local) in devices.iter_mut().zip(&locals) {
            device.class_counts = local.counts();
            device.data_share = local.total() as f64 / grand as f64;
        }
        let generator = data::fit_surrogate_generator(
            &global.pretrain,
            task.classes,
            task.features,
            task.generator_fidelity,
        )?;
        let model_spec = ModelSpec {
            classes: task.classes,
            features: task.features,
        };

        let cs = &config.constants;
        let mut consts = SystemConstants {
            lipschitz: cs.lipschitz.unwrap_or(1.0),
            grad_variance: cs.grad_variance.unwrap_or(0.0),
            heterogeneity: match &cs.heterogeneity {
                Some(h) => h.broadcast(u, "constants.heterogeneity")?,
                None => vec![0.0; u],
            },
            param_norm_sq: cs.param_norm_sq.unwrap_or(1.0),
            learning_rate: cs.learning_rate,
            grad_range_sq: match &cs.grad_range_sq {
                Some(r) => r.broadcast(u, "constants.grad_range_sq")?,
                None => vec![0.0; u],
            },
            initial_gap: cs.initial_gap.unwrap_or(1.0),
            waterfall_threshold: cs.waterfall_threshold,
            overhead_bits: cs.overhead_bits,
            batch_size: cs.batch_size,
            cycles_per_train_sample: cs.cycles_per_train_sample,
            cycles_per_gen_sample: cs.cycles_per_gen_sample,
            eff_capacitance: cs.eff_capacitance,
            power_exponent: cs.power_exponent,
            noise_psd_w_hz: cs.noise_psd_w_hz(),
        };

        let mut prepared = Self {
            config: config.clone(),
            devices,
            model_spec,
            locals,
            generator,
            test: global.test,
            consts: consts.clone(),
            estimates: None,
        };

        let needs_probe = cs.lipschitz.is_none()
            || cs.grad_variance.is_none()
            || cs.heterogeneity.is_none()
            || cs.param_norm_sq.is_none()
            || cs.grad_range_sq.is_none();
        if needs_probe || cs.initial_gap.is_none() {
            let base = prepared.base_experiment()?;
            if needs_probe {
                let est = analysis::calibrate_constants(
                    &base,
                    config.experiment.calibration_rounds,
                    consts.learning_rate,
                    seed,
                )?;
                if cs.lipschitz.is_none() {
                    consts.lipschitz = est.lipschitz;
                }
                if cs.grad_variance.is_none() {
                    consts.grad_variance = est.grad_variance;
                }
                if cs.heterogeneity.is_none() {
                    consts.heterogeneity = est.heterogeneity.clone();
                }
                if cs.param_norm_sq.is_none() {
                    consts.param_norm_sq = est.param_norm_sq;
                }
                if cs.grad_range_sq.is_none() {
                    consts.grad_range_sq = est.grad_range_sq.clone();
                }
                prepared.estimates = Some(est);
            }
            if cs.initial_gap.is_none() {
                let step = 0.9 / consts.lipschitz.max(1e-12);
                let start = base.evaluate(&vec![0.0; prepared.model_spec.dim()]).0;
                let best = base
                    .centralized_best_loss(config.experiment.centralized_iters as u64, step)?;
                consts.initial_gap = (start - best).max(f64::MIN_POSITIVE);
            }
            prepared.consts = consts;
        }
        Ok(prepared)
    }

    /// The un-augmented experiment used for probing; links are placeholders
    /// that no probe path reads.
    fn base_experiment(&self) -> Result<Experiment> {
        let u = self.devices.len();
        let data: Vec<DeviceData> = self.locals.iter().map(DeviceData::from_local).collect();
        let shares: Vec<f64> = self.devices.iter().map(|d| d.data_share).collect();
        let strategy = Strategy::uniform(
            u,
            self.config.bounds.target_error_prob.min,
            0.0,
            0.0,
            self.config.bounds.quant_bits.max,
        );
        let links = vec![
            DeviceLink {
                tx_power_w: self.config.bounds.tx_power_w.min,
                rate_bps: 1.0,
                error_prob: 0.0,
            };
            u
        ];
        Ok(Experiment {
            model_spec: self.model_spec,
            devices: self.devices.clone(),
            consts: self.consts.clone(),
            strategy,
            links,
            data,
            shares,
            test: self.test.clone(),
            slots: self.config.experiment.participants,
            seed: self.config.seed,
        })
    }

    /// Runs the constant-estimation probe unconditionally, independent of
    /// which constants the config pins.
    pub fn calibrate(&self) -> Result<CalibrationEstimates> {
        let base = self.base_experiment()?;
        analysis::calibrate_constants(
            &base,
            self.config.experiment.calibration_rounds,
            self.consts.learning_rate,
            self.config.seed,
        )
    }

    /// Fills empty power vectors by solving each device's power for the
    /// strategy's error target, and derives the per-device operating point
    /// (power, expected rate, achieved error probability).
    pub fn resolve_links(&self, strategy: &Strategy) -> Result<(Strategy, Vec<DeviceLink>)> {
        let mut s = strategy.clone();
        let mut links = Vec::with_capacity(self.devices.len());
        let fading = self.config.channel.fading;
        if s.tx_power_w.is_empty() {
            for device in &self.devices {
                let sol = channel::solve_power_for_error(
                    device,
                    &self.consts,
                    fading,
                    s.target_error_prob,
                    self.config.bounds.tx_power_w.min,
                    self.config.bounds.tx_power_w.max,
                )?;
                let rate = channel::expected_rate(device, &self.consts, fading, sol.power_w)?;
                links.push(DeviceLink {
                    tx_power_w: sol.power_w,
                    rate_bps: rate,
                    error_prob: sol.achieved_error_prob,
                });
                s.tx_power_w.push(sol.power_w);
            }
        } else {
            for (device, &p) in self.devices.iter().zip(&s.tx_power_w) {
                links.push(DeviceLink {
                    tx_power_w: p,
                    rate_bps: channel::expected_rate(device, &self.consts, fading, p)?,
                    error_prob: channel::error_probability(device, &self.consts, fading, p)?,
                });
            }
        }
        Ok((s, links))
    }

    /// Executes the augmentation plan per device and assembles the runnable
    /// experiment plus per-device generation energies.
    pub fn build_experiment(
        &self,
        strategy: &Strategy,
        links: Vec<DeviceLink>,
    ) -> Result<(Experiment, Vec<EnergyBreakdown>)> {
        let seed = self.config.seed;
        let mut data = Vec::with_capacity(self.devices.len());
        let mut gen = Vec::with_capacity(self.devices.len());
        let mut totals = Vec::with_capacity(self.devices.len());
        for (u, local) in self.locals.iter().enumerate() {
            let plan = plan_augmentation(&local.counts(), strategy.aug_factor[u])?;
            let mixed = data::execute_plan(
                local,
                &plan,
                &self.generator,
                &mut rng::stream(seed, 0, u as u64, "augment"),
            )?;
            gen.push(energy::generation_energy(
                &self.devices[u],
                &self.consts,
                plan.total,
            ));
            totals.push(mixed.total());
            data.push(DeviceData::from_local(&mixed));
        }
        let grand: u64 = totals.iter().sum();
        let shares: Vec<f64> = totals
            .iter()
            .map(|&t| t as f64 / grand as f64)
            .collect();
        let experiment = Experiment {
            model_spec: self.model_spec,
            devices: self.devices.clone(),
            consts: self.consts.clone(),
            strategy: strategy.clone(),
            links,
            data,
            shares,
            test: self.test.clone(),
            slots: self.config.experiment.participants,
            seed,
        };
        Ok((experiment, gen))
    }

    /// Applies a scenario to the base strategy, runs the full simulation,
    /// and returns the emitted records plus headline numbers.
    pub fn run_scenario(&self, scenario: Scenario, base: &Strategy) -> Result<ScenarioRun> {
        let bounds = &self.config.bounds;
        let strategy = apply_scenario(scenario, base, bounds, self.config.no_pc_power_w());
        strategy.validate_physical(self.devices.len())?;
        let (strategy, links) = self.resolve_links(&strategy)?;
        let (experiment, gen) = self.build_experiment(&strategy, links)?;
        let gen_total = {
            let mut acc = KahanSum::new();
            for g in &gen {
                acc.add(g.gen_j);
            }
            acc.value()
        };
        let exp = &self.config.experiment;
        let (initial_loss, initial_accuracy) =
            experiment.evaluate(&vec![0.0; self.model_spec.dim()]);
        let (_, traces, summary) = experiment.run(
            exp.round_cap,
            Some(exp.target_accuracy),
            exp.stop_at_target,
        )?;
        let records = metrics::build_records(
            &scenario.to_string(),
            self.config.seed,
            self.devices.len(),
            exp.participants,
            initial_loss,
            initial_accuracy,
            gen_total,
            &traces,
            &summary,
        );
        let total_energy = match metrics::summary_of(&records) {
            Some(MetricsRecord::Summary { total_energy, .. }) => *total_energy,
            _ => gen_total,
        };
        let energy_to_target = summary
            .rounds_to_target
            .and_then(|target| {
                records.iter().find_map(|r| match r {
                    MetricsRecord::Round {
                        round, energy_cum, ..
                    } if *round == target => Some(*energy_cum),
                    _ => None,
                })
            })
            .unwrap_or(total_energy);
        Ok(ScenarioRun {
            scenario,
            strategy,
            records,
            summary,
            total_energy,
            energy_to_target,
        })
    }

    /// Optimizes the strategy against the analytic objective, starting from
    /// the configured strategy under the full-pipeline scenario.
    pub fn optimize(&self) -> Result<BcdOutcome> {
        analysis::descent_coefficient(&self.consts)?;
        let base = apply_scenario(
            Scenario::FedDpq,
            &self.config.initial_strategy()?,
            &self.config.bounds,
            self.config.no_pc_power_w(),
        );
        let mut objective = AnalyticObjective::new(self);
        let opt = &self.config.optimizer;
        let opts = BcdOptions {
            max_iters: opt.bcd_max_iters,
            tolerance: opt.bcd_tolerance,
            budgets: BcdBudgets {
                error_prob: opt.budget_error_prob,
                aug: opt.budget_aug,
                prune: opt.budget_prune,
                bits: opt.budget_bits,
            },
            bo: BoOptions::default(),
        };
        bcd_optimize(&base, &mut objective, &self.config.bounds, &opts, self.config.seed)
    }

    /// Participation weights for a given per-device error-probability
    /// vector: exact enumeration when the outcome space is small enough,
    /// Monte Carlo otherwise.
    pub fn participation_weights(
        &self,
        shares: &[f64],
        error_probs: &[f64],
    ) -> Result<ParticipationWeights> {
        let slots = self.config.experiment.participants;
        match analysis::enumerate_weights(shares, error_probs, slots) {
            Err(Error::TooLarge(_)) => analysis::monte_carlo_weights(
                shares,
                error_probs,
                slots,
                self.config.experiment.weights_mc_trials,
                &mut rng::stream(self.config.seed, 0, 0, "weights-mc"),
            ),
            other => other,
        }
    }

    /// The bound decomposition for a strategy: solves links, rescales
    /// heterogeneity for the augmented class coverage, computes the round
    /// budget at the configured tolerance, and evaluates every term.
    pub fn bound_report(&self, strategy: &Strategy) -> Result<analysis::BoundReport> {
        let strategy = {
            let s = apply_scenario(
                Scenario::Custom,
                strategy,
                &self.config.bounds,
                self.config.no_pc_power_w(),
            );
            s.validate_physical(self.devices.len())?;
            s
        };
        let (strategy, links) = self.resolve_links(&strategy)?;
        let error_probs: Vec<f64> = links.iter().map(|l| l.error_prob).collect();
        let q_eff = error_probs.iter().cloned().fold(0.0, f64::max);
        let (shares, consts) = self.augmented_view(&strategy)?;
        let budget = analysis::rounds_to_epsilon(
            &consts,
            &shares,
            &strategy.prune_ratio,
            &strategy.quant_bits,
            q_eff,
            self.config.experiment.participants,
            self.config.experiment.epsilon,
        )?;
        let rounds = budget.rounds.unwrap_or(self.config.experiment.round_cap.max(1));
        let weights = self.participation_weights(&shares, &error_probs)?;
        let mut report = analysis::evaluate_bound(
            &consts,
            &weights,
            &shares,
            &error_probs,
            &strategy.prune_ratio,
            &strategy.quant_bits,
            self.config.experiment.participants,
            rounds,
        )?;
        report.psi = Some(budget.psi);
        report.rounds_budget = budget.rounds;
        report.budget_feasible = Some(budget.feasible);
        Ok(report)
    }

    /// Post-augmentation shares and constants: mixed-data participation
    /// shares and heterogeneity rescaled by residual class imbalance.
    fn augmented_view(&self, strategy: &Strategy) -> Result<(Vec<f64>, SystemConstants)> {
        let mut totals = Vec::with_capacity(self.locals.len());
        let mut consts = self.consts.clone();
        for (u, local) in self.locals.iter().enumerate() {
            let counts = local.counts();
            let plan = plan_augmentation(&counts, strategy.aug_factor[u])?;
            let mixed: Vec<u64> = counts
                .iter()
                .zip(&plan.per_class)
                .map(|(&c, &g)| c + g)
                .collect();
            let before = class_imbalance(&counts) + COVERAGE_BLEND;
            let after = class_imbalance(&mixed) + COVERAGE_BLEND;
            consts.heterogeneity[u] = self.consts.heterogeneity[u] * after / before;
            totals.push(mixed.iter().sum::<u64>());
        }
        let grand: u64 = totals.iter().sum();
        let shares = totals
            .iter()
            .map(|&t| t as f64 / grand as f64)
            .collect();
        Ok((shares, consts))
    }
}

/// The outcome of one simulated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    /// The strategy actually run, powers filled in.
    pub strategy: Strategy,
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
    /// Realized energy of the whole run (J).
    pub total_energy: f64,
    /// Realized energy up to the target round, or the run total when the
    /// target was never reached (J).
    pub energy_to_target: f64,
}

/// Expected total energy of a strategy under the analytic round budget;
/// infeasible strategies evaluate to infinity.
pub struct AnalyticObjective<'a> {
    prepared: &'a Prepared,
    /// Solved operating points per error-target, keyed by the target's bit
    /// pattern.
    power_cache: HashMap<u64, PowerTable>,
    pub evaluations: u64,
}

#[derive(Clone)]
struct PowerTable {
    powers: Vec<f64>,
    rates: Vec<f64>,
    error_probs: Vec<f64>,
}

impl<'a> AnalyticObjective<'a> {
    pub fn new(prepared: &'a Prepared) -> Self {
        Self {
            prepared,
            power_cache: HashMap::new(),
            evaluations: 0,
        }
    }

    fn solved_table(&mut self, q_target: f64) -> Result<PowerTable> {
        if let Some(hit) = self.power_cache.get(&q_target.to_bits()) {
            return Ok(hit.clone());
        }
        let p = self.prepared;
        let fading = p.config.channel.fading;
        let mut table = PowerTable {
            powers: Vec::with_capacity(p.devices.len()),
            rates: Vec::with_capacity(p.devices.len()),
            error_probs: Vec::with_capacity(p.devices.len()),
        };
        for device in &p.devices {
            let sol = channel::solve_power_for_error(
                device,
                &p.consts,
                fading,
                q_target,
                p.config.bounds.tx_power_w.min,
                p.config.bounds.tx_power_w.max,
            )?;
            table.powers.push(sol.power_w);
            table
                .rates
                .push(channel::expected_rate(device, &p.consts, fading, sol.power_w)?);
            table.error_probs.push(sol.achieved_error_prob);
        }
        self.power_cache.insert(q_target.to_bits(), table.clone());
        Ok(table)
    }

    fn fixed_table(&self, powers: &[f64]) -> Result<PowerTable> {
        let p = self.prepared;
        let fading = p.config.channel.fading;
        let mut table = PowerTable {
            powers: powers.to_vec(),
            rates: Vec::with_capacity(powers.len()),
            error_probs: Vec::with_capacity(powers.len()),
        };
        for (device, &power) in p.devices.iter().zip(powers) {
            table
                .rates
                .push(channel::expected_rate(device, &p.consts, fading, power)?);
            table
                .error_probs
                .push(channel::error_probability(device, &p.consts, fading, power)?);
        }
        Ok(table)
    }

    fn evaluate_inner(&mut self, strategy: &Strategy) -> Result<f64> {
        let p = self.prepared;
        let table = if strategy.tx_power_w.is_empty() {
            self.solved_table(strategy.target_error_prob)?
        } else {
            self.fixed_table(&strategy.tx_power_w)?
        };
        let q_eff = table.error_probs.iter().cloned().fold(0.0, f64::max);
        let (shares, consts) = p.augmented_view(strategy)?;
        let budget: RoundBudget = analysis::rounds_to_epsilon(
            &consts,
            &shares,
            &strategy.prune_ratio,
            &strategy.quant_bits,
            q_eff,
            p.config.experiment.participants,
            p.config.experiment.epsilon,
        )?;
        let Some(rounds) = budget.rounds else {
            return Ok(f64::INFINITY);
        };
        let dim = p.model_spec.dim();
        let mut round = Vec::with_capacity(p.devices.len());
        let mut gen = Vec::with_capacity(p.devices.len());
        for (u, device) in p.devices.iter().enumerate() {
            round.push(energy::round_energy(
                device,
                &p.consts,
                strategy.prune_ratio[u],
                strategy.quant_bits[u],
                table.powers[u],
                table.rates[u],
                dim,
            )?);
            let plan = plan_augmentation(&p.locals[u].counts(), strategy.aug_factor[u])?;
            gen.push(energy::generation_energy(device, &p.consts, plan.total));
        }
        energy::total_energy(&round, &gen, &shares, rounds as f64)
    }
}

impl StrategyObjective for AnalyticObjective<'_> {
    fn evaluate(&mut self, strategy: &Strategy) -> f64 {
        self.evaluations += 1;
        self.evaluate_inner(strategy).unwrap_or(f64::INFINITY)
    }
}

/// One sweep cell's headline numbers, mirrored into the sweep summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub seed: u64,
    pub dirichlet_pi: f64,
    pub devices: usize,
    pub participants: usize,
    pub rounds_run: u64,
    pub rounds_to_target: Option<u64>,
    pub reached_target: bool,
    pub total_energy: f64,
    pub energy_to_target: f64,
}

/// Runs the configured grid of (devices, participants, concentration, seed)
/// cells, each over the configured scenarios, writing one metrics file per
/// run plus a `sweep-summary.jsonl` roll-up into `out_dir`.
pub fn run_sweep(config: &Config, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let sweep = config.sweep.clone().unwrap_or_default();
    let pis = sweep
        .dirichlet_pi
        .unwrap_or_else(|| vec![config.experiment.dirichlet_pi]);
    let device_counts = sweep
        .devices
        .unwrap_or_else(|| vec![config.device_count()]);
    let participant_counts = sweep
        .participants
        .unwrap_or_else(|| vec![config.experiment.participants]);
    let seeds = sweep.seeds.unwrap_or_else(|| vec![config.seed]);
    let scenarios: Vec<Scenario> = match sweep.scenarios {
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>>>()?,
        None => Scenario::NAMED.to_vec(),
    };
    std::fs::create_dir_all(out_dir)?;

    let mut rows = Vec::new();
    for &devices in &device_counts {
        for &participants in &participant_counts {
            for &pi in &pis {
                for &seed in &seeds {
                    let mut cell = config.clone();
                    cell.seed = seed;
                    cell.devices.count = devices;
                    cell.experiment.participants = participants;
                    cell.experiment.dirichlet_pi = pi;
                    let prepared = Prepared::build(&cell)?;
                    let base = if sweep.optimize {
                        prepared.optimize()?.strategy
                    } else {
                        cell.initial_strategy()?
                    };
                    for &scenario in &scenarios {
                        let run = prepared.run_scenario(scenario, &base)?;
                        let name = format!(
                            "{scenario}-pi{pi}-U{devices}-S{participants}-seed{seed}.jsonl"
                        );
                        metrics::write_records(&out_dir.join(name), &run.records)?;
                        rows.push(SweepRow {
                            scenario: scenario.to_string(),
                            seed,
                            dirichlet_pi: pi,
                            devices,
                            participants,
                            rounds_run: run.summary.rounds_run,
                            rounds_to_target: run.summary.rounds_to_target,
                            reached_target: run.summary.reached_target,
                            total_energy: run.total_energy,
                            energy_to_target: run.energy_to_target,
                        });
                    }
                }
            }
        }
    }

    let mut text = String::new();
    for row in &rows {
        text.push_str(&serde_json::to_string(row).map_err(|e| {
            Error::Invalid(format!("sweep row not serializable: {e}"))
        })?);
        text.push('\n');
    }
    std::fs::write(out_dir.join("sweep-summary.jsonl"), text)?;
    Ok(rows)
}

/// Parses a sweep summary file back into rows.
pub fn read_sweep_summary(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("sweep summary line {}: {e}", i + 1)))?,
        );
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BitRange, Range};

    fn bounds() -> StrategyBounds {
        StrategyBounds {
            aug_factor: Range::new(0.0, 1.0).unwrap(),
            prune_ratio: Range::new(0.0, 0.5).unwrap(),
            quant_bits: BitRange::new(2, 16).unwrap(),
            tx_power_w: Range::new(0.005, 0.1).unwrap(),
            target_error_prob: Range::new(0.01, 0.5).unwrap(),
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for scenario in Scenario::NAMED {
            let name = scenario.to_string();
            assert_eq!(name.parse::<Scenario>().unwrap(), scenario);
        }
        assert_eq!("custom".parse::<Scenario>().unwrap(), Scenario::Custom);
        assert!("fedDPQ".parse::<Scenario>().is_err());
    }

    #[test]
    fn overrides_are_idempotent() {
        let base = Strategy::uniform(3, 0.2, 0.8, 0.3, 6);
        for scenario in Scenario::NAMED {
            let once = apply_scenario(scenario, &base, &bounds(), 0.005);
            let twice = apply_scenario(scenario, &once, &bounds(), 0.005);
            assert_eq!(once, twice, "{scenario} not idempotent");
        }
    }

    #[test]
    fn disabling_augmentation_only_touches_augmentation() {
        let base = Strategy::uniform(2, 0.2, 0.8, 0.3, 6);
        let s = apply_scenario(Scenario::NoDa, &base, &bounds(), 0.005);
        assert_eq!(s.aug_factor, vec![0.0, 0.0]);
        assert_eq!(s.prune_ratio, base.prune_ratio);
        assert_eq!(s.quant_bits, base.quant_bits);
        assert!(s.tx_power_w.is_empty());
    }

    #[test]
    fn imbalance_is_zero_for_balanced_counts() {
        assert_eq!(class_imbalance(&[5, 5, 5]), 0.0);
        assert!(class_imbalance(&[9, 1, 0]) > 0.1);
    }
}

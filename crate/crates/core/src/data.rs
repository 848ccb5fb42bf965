//! Synthetic task generation, non-i.i.d. partitioning, the augmentation
//! planner, and the class-conditional surrogate generator.
//!
//! The task is a Gaussian-cluster classification problem: each class has a
//! random center and isotropic within-class spread. Labels are 1-based. The
//! global dataset carries three splits: training data (partitioned across
//! devices), test data (global accuracy), and a held-out pretraining pool the
//! surrogate generator is fitted on, so it can synthesize classes a device
//! holds no samples of.

use crate::config::TaskSection;
use crate::types::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::fmt::Write as _;
use std::path::Path;

/// One labeled sample. `synthetic` marks generator output so ablations can
/// separate it from organic data.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Class label in `1..=classes`.
    pub label: usize,
    pub features: Vec<f64>,
    pub synthetic: bool,
}

/// A device-local dataset organized by class; index `c - 1` holds class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub by_class: Vec<Vec<Sample>>,
}

impl LocalDataset {
    pub fn empty(classes: usize) -> Self {
        Self {
            by_class: vec![Vec::new(); classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.by_class.len()
    }

    /// Per-class sample counts.
    pub fn counts(&self) -> Vec<u64> {
        self.by_class.iter().map(|v| v.len() as u64).collect()
    }

    pub fn total(&self) -> u64 {
        self.by_class.iter().map(|v| v.len() as u64).sum()
    }

    pub fn push(&mut self, s: Sample) -> Result<()> {
        if s.label < 1 || s.label > self.by_class.len() {
            return Err(Error::Invalid(format!(
                "label {} outside 1..={}",
                s.label,
                self.by_class.len()
            )));
        }
        self.by_class[s.label - 1].push(s);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.by_class.iter().flatten()
    }
}

/// The full synthetic task: class centers plus the three sample splits.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDataset {
    pub classes: usize,
    pub features: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub pretrain: Vec<Sample>,
}

/// Draws the task from `stream`: class centers scaled by `mean_scale`, then
/// train, test, and pretrain splits in that order. Labels cycle through the
/// classes so every split is class-balanced.
pub fn synth_task(task: &TaskSection, rng: &mut impl Rng) -> GlobalDataset {
    let means: Vec<Vec<f64>> = (0..task.classes)
        .map(|_| {
            (0..task.features)
                .map(|_| task.mean_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut draw_split = |n: usize| {
        (0..n)
            .map(|i| {
                let label = (i % task.classes) + 1;
                let features = means[label - 1]
                    .iter()
                    .map(|&m| m + task.cluster_std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Sample {
                    label,
                    features,
                    synthetic: false,
                }
            })
            .collect::<Vec<_>>()
    };
    let train = draw_split(task.train_samples);
    let test = draw_split(task.test_samples);
    let pretrain = draw_split(task.pretrain_samples);
    GlobalDataset {
        classes: task.classes,
        features: task.features,
        train,
        test,
        pretrain,
    }
}

/// Splits `samples` across `devices` into near-equal-size shards whose class
/// composition follows a per-device Dirichlet(`pi`) draw: smaller `pi`
/// concentrates each shard on fewer classes while shard sizes stay within one
/// sample of each other. Every sample lands on exactly one device. When a
/// device's drawn class mix outruns the remaining stock of a class, the
/// shortfall is filled from whichever classes still have the most samples
/// left.
pub fn partition_dirichlet(
    samples: &[Sample],
    classes: usize,
    devices: usize,
    pi: f64,
    rng: &mut impl Rng,
) -> Result<Vec<LocalDataset>> {
    if devices == 0 {
        return Err(Error::Invalid("device count must be >= 1".to_string()));
    }
    if !(pi > 0.0) {
        return Err(Error::Invalid(format!(
            "Dirichlet concentration must be > 0, got {pi}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Empty("dataset to partition".to_string()));
    }
    if samples.len() < devices {
        return Err(Error::Invalid(format!(
            "cannot give each of {devices} devices a sample from {} total",
            samples.len()
        )));
    }
    let mut pools: Vec<Vec<&Sample>> = vec![Vec::new(); classes];
    for s in samples {
        if s.label < 1 || s.label > classes {
            return Err(Error::Invalid(format!(
                "label {} outside 1..={classes}",
                s.label
            )));
        }
        pools[s.label - 1].push(s);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let mut cursors = vec![0usize; classes];

    let gamma = Gamma::new(pi, 1.0)
        .map_err(|e| Error::Invalid(format!("Dirichlet concentration {pi}: {e}")))?;
    let uniform = vec![1.0 / devices as f64; devices];
    let quotas = largest_remainder(samples.len(), &uniform);
    let mut out: Vec<LocalDataset> = vec![LocalDataset::empty(classes); devices];
    let mut shortfalls = vec![0usize; devices];
    for (u, dataset) in out.iter_mut().enumerate() {
        let mut weights: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            weights.fill(1.0 / classes as f64);
        } else {
            for w in &mut weights {
                *w /= total;
            }
        }
        let wanted = largest_remainder(quotas[u], &weights);
        for (c, &want) in wanted.iter().enumerate() {
            let take = want.min(pools[c].len() - cursors[c]);
            for s in &pools[c][cursors[c]..cursors[c] + take] {
                dataset.push((*s).clone())?;
            }
            cursors[c] += take;
            shortfalls[u] += want - take;
        }
    }

    for (u, &short) in shortfalls.iter().enumerate() {
        for _ in 0..short {
            let c = (0..classes)
                .max_by_key(|&c| pools[c].len() - cursors[c])
                .expect("classes >= 1");
            debug_assert!(cursors[c] < pools[c].len(), "quotas conserve the total");
            out[u].push(pools[c][cursors[c]].clone())?;
            cursors[c] += 1;
        }
    }
    Ok(out)
}

/// Integer apportionment of `n` items to fractional `weights`: floor each
/// quota, then hand remaining items to the largest fractional parts (ties to
/// the lower index). Conserves `n` exactly.
fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let mut quotas: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let exact = w * n as f64;
        let base = exact.floor().min(n as f64) as usize;
        quotas.push(base);
        assigned += base;
        fracs.push((i, exact - base as f64));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = n.saturating_sub(assigned);
    for (i, _) in fracs {
        if leftover == 0 {
            break;
        }
        quotas[i] += 1;
        leftover -= 1;
    }
    quotas
}

/// Per-class generation targets for one device at augmentation factor `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPlan {
    /// Samples to generate per class.
    pub per_class: Vec<u64>,
    /// Total samples to generate.
    pub total: u64,
    /// Class counts after mixing generated samples into the local data.
    pub mixed_counts: Vec<u64>,
}

/// Computes how many samples each class needs so that every class reaches the
/// fraction `Δ` of the largest local class. The continuous target `Δ·D'` is
/// rounded up to an integer before subtracting the local count, and deficits
/// clamp at zero. A device with no data gets an empty plan.
pub fn plan_augmentation(counts: &[u64], delta: f64) -> Result<AugmentationPlan> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Invalid(format!(
            "augmentation factor must be finite and >= 0, got {delta}"
        )));
    }
    let largest = counts.iter().copied().max().unwrap_or(0);
    if largest == 0 {
        return Ok(AugmentationPlan {
            per_class: vec![0; counts.len()],
            total: 0,
            mixed_counts: counts.to_vec(),
        });
    }
    let target = (delta * largest as f64).ceil() as u64;
    let per_class: Vec<u64> = counts.iter().map(|&c| target.saturating_sub(c)).collect();
    let total = per_class.iter().sum();
    let mixed_counts = counts
        .iter()
        .zip(&per_class)
        .map(|(&c, &g)| c + g)
        .collect();
    Ok(AugmentationPlan {
        per_class,
        total,
        mixed_counts,
    })
}

/// Class-conditional sampler standing in for a pre-trained generative model.
///
/// Fidelity `λ` blends a per-class Gaussian fitted to the reference data with
/// uninformative noise: a draw for class `c` is
/// `λ·μ_c + z·(λ·σ_c + (1 − λ))` with `z` standard normal, so `λ = 1` is the
/// fitted mean-plus-diagonal-covariance model and `λ = 0` is zero-mean
/// isotropic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGenerator {
    classes: usize,
    features: usize,
    fidelity: f64,
    means: Vec<Vec<f64>>,
    stds: Vec<Vec<f64>>,
}

/// Fits per-class moments on `reference`. Every class in `1..=classes` must
/// appear at least once.
pub fn fit_surrogate_generator(
    reference: &[Sample],
    classes: usize,
    features: usize,
    fidelity: f64,
) -> Result<SurrogateGenerator> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::Invalid(format!(
            "generator fidelity must lie in [0, 1], got {fidelity}"
        )));
    }
    let mut sums = vec![vec![0.0; features]; classes];
    let mut sq_sums = vec![vec![0.0; features]; classes];
    let mut counts = vec![0usize; classes];
    for s in reference {
        if s.label < 1 || s.label > classes {
            return Err(Error::Invalid(format!(
                "label {} outside 1..={classes}",
                s.label
            )));
        }
        if s.features.len() != features {
            return Err(Error::Invalid(format!(
                "sample has {} features, expected {features}",
                s.features.len()
            )));
        }
        let c = s.label - 1;
        counts[c] += 1;
        for (j, &x) in s.features.iter().enumerate() {
            sums[c][j] += x;
            sq_sums[c][j] += x * x;
        }
    }
    let mut means = vec![vec![0.0; features]; classes];
    let mut stds = vec![vec![0.0; features]; classes];
    for c in 0..classes {
        if counts[c] == 0 {
            return Err(Error::Empty(format!(
                "class {} has no reference samples to fit the generator on",
                c + 1
            )));
        }
        let n = counts[c] as f64;
        for j in 0..features {
            let mean = sums[c][j] / n;
            means[c][j] = mean;
            stds[c][j] = (sq_sums[c][j] / n - mean * mean).max(0.0).sqrt();
        }
    }
    Ok(SurrogateGenerator {
        classes,
        features,
        fidelity,
        means,
        stds,
    })
}

impl SurrogateGenerator {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_mean(&self, label: usize) -> Result<&[f64]> {
        if label < 1 || label > self.classes {
            return Err(Error::Invalid(format!(
                "label {label} outside 1..={}",
                self.classes
            )));
        }
        Ok(&self.means[label - 1])
    }

    /// Draws one synthetic sample of the requested class.
    pub fn sample(&self, label: usize, rng: &mut impl Rng) -> Result<Sample> {
        if label < 1 || label > self.classes {
            return Err(Error::Invalid(format!(
                "label {label} outside 1..={}",
                self.classes
            )));
        }
        let c = label - 1;
        let lam = self.fidelity;
        let features = (0..self.features)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                lam * self.means[c][j] + z * (lam * self.stds[c][j] + (1.0 - lam))
            })
            .collect();
        Ok(Sample {
            label,
            features,
            synthetic: true,
        })
    }
}

/// Generates the planned samples and merges them into `local`. The output
/// class counts equal the plan's mixed counts; generated samples carry the
/// `synthetic` flag.
pub fn execute_plan(
    local: &LocalDataset,
    plan: &AugmentationPlan,
    generator: &SurrogateGenerator,
    rng: &mut impl Rng,
) -> Result<LocalDataset> {
    if plan.per_class.len() != local.classes() {
        return Err(Error::Invalid(format!(
            "plan covers {} classes, dataset has {}",
            plan.per_class.len(),
            local.classes()
        )));
    }
    let mut mixed = local.clone();
    for (c, &need) in plan.per_class.iter().enumerate() {
        for _ in 0..need {
            mixed.push(generator.sample(c + 1, rng)?)?;
        }
    }
    Ok(mixed)
}

/// Writes samples as a whitespace-separated text table, one row per sample:
/// `id label f0 f1 ...`. Floats use the shortest representation that parses
/// back to the identical value, so a round trip is exact. The provenance flag
/// is not part of the table format; imported samples read as organic.
pub fn export_table(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut text = String::new();
    for (id, s) in samples.iter().enumerate() {
        write!(text, "{id} {}", s.label).expect("string write");
        for f in &s.features {
            write!(text, " {f}").expect("string write");
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a table written by [`export_table`]. Rows must share one feature
/// width; errors name the offending 1-based line.
pub fn import_table(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let _id: u64 = parse_field(fields.next(), "id", line_no)?;
        let label: usize = parse_field(fields.next(), "label", line_no)?;
        if label < 1 {
            return Err(Error::Parse(format!(
                "line {line_no}: label must be >= 1, got {label}"
            )));
        }
        let features: Vec<f64> = fields
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "line {line_no}: feature {j} is not a number: {f:?}"
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::Parse(format!(
                    "line {line_no}: expected {w} features, found {}",
                    features.len()
                )));
            }
            _ => {}
        }
        out.push(Sample {
            label,
            features,
            synthetic: false,
        });
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    name: &str,
    line_no: usize,
) -> Result<T> {
    let raw = field
        .ok_or_else(|| Error::Parse(format!("line {line_no}: missing {name} column")))?;
    raw.parse::<T>()
        .map_err(|_| Error::Parse(format!("line {line_no}: bad {name}: {raw:?}")))
}

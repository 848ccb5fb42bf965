//! Black-box minimization of the energy objective: a Gaussian-process
//! surrogate with probability-of-improvement acquisition per variable block,
//! wrapped in a block-coordinate-descent loop over the error-probability
//! target, augmentation factors, pruning ratios, and quantization bits.
//!
//! All kernel math runs in the block's unit-normalized coordinates. The GP is
//! zero-mean with a unit-variance squared-exponential kernel, fitted
//! noise-free up to a small jitter, so it interpolates observations and
//! relaxes to the prior away from them.

use crate::numeric::normal_cdf;
use crate::rng;
use crate::types::{Error, Result, Strategy, StrategyBounds};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Substitute objective value recorded when an evaluation returns a
/// non-finite number, keeping the surrogate landscape finite while making
/// the point maximally unattractive.
pub const OBJECTIVE_PENALTY: f64 = 1e12;

/// Noise-free GP interpolator over points in the unit box.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    points: Vec<Vec<f64>>,
    length_scale: f64,
    /// Lower-triangular Cholesky factor of the jittered kernel matrix,
    /// row-major.
    chol: Vec<f64>,
    /// Kernel-matrix solve against the observed values.
    weights: Vec<f64>,
    best: f64,
}

fn kernel(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

impl GpSurrogate {
    /// Fits the interpolator. Points should be distinct; coincident points
    /// make the kernel matrix singular beyond what jitter can absorb.
    pub fn fit(
        points: Vec<Vec<f64>>,
        values: &[f64],
        length_scale: f64,
        jitter: f64,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::Invalid(format!(
                "surrogate needs matching non-empty points and values, got {} and {}",
                points.len(),
                values.len()
            )));
        }
        if !(length_scale > 0.0) {
            return Err(Error::Invalid(format!(
                "length scale must be > 0, got {length_scale}"
            )));
        }
        let n = points.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel(&points[i], &points[j], length_scale);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += jitter;
        }
        let chol = cholesky(&k, n).ok_or_else(|| {
            Error::Invalid(
                "kernel matrix is singular despite jitter; increase the jitter or \
                 deduplicate observation points"
                    .to_string(),
            )
        })?;
        let weights = chol_solve(&chol, n, values);
        let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            points,
            length_scale,
            chol,
            weights,
            best,
        })
    }

    /// Posterior mean and variance at a query point; the variance is clamped
    /// at zero from below.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let k_vec: Vec<f64> = self
            .points
            .iter()
            .map(|p| kernel(p, x, self.length_scale))
            .collect();
        let mean: f64 = k_vec.iter().zip(&self.weights).map(|(&a, &b)| a * b).sum();
        let half = forward_solve(&self.chol, n, &k_vec);
        let explained: f64 = half.iter().map(|&v| v * v).sum();
        (mean, (1.0 - explained).max(0.0))
    }

    /// Smallest observed value.
    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or None when a
/// pivot is not strictly positive.
fn cholesky(k: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = k[i * n + j];
            for m in 0..j {
                sum -= l[i * n + m] * l[j * n + m];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[i * n + j] * y[j];
        }
        y[i] = sum / l[i * n + i];
    }
    y
}

fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let y = forward_solve(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for j in i + 1..n {
            sum -= l[j * n + i] * x[j];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Probability that a draw from `N(mean, sd²)` improves on the incumbent by
/// at least the exploration margin: `Φ((best - tradeoff - mean)/sd)`. The
/// margin keeps zero-variance points at already-observed values from scoring
/// 1 and trapping the search at the incumbent.
pub fn probability_of_improvement(mean: f64, sd: f64, best: f64, tradeoff: f64) -> f64 {
    if sd <= 0.0 {
        return if mean < best - tradeoff { 1.0 } else { 0.0 };
    }
    1.0 - normal_cdf((mean - best + tradeoff) / sd)
}

/// One optimization block: a box, optionally restricted to integer lattice
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: bool,
}

impl BlockSpec {
    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::Invalid(
                "block bounds must be non-empty and aligned".to_string(),
            ));
        }
        for (i, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Invalid(format!(
                    "block dimension {i} requires finite lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Clamps into the box and snaps integer blocks to the lattice.
    fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| {
                let v = v.clamp(lo, hi);
                if self.integer {
                    v.round().clamp(lo.ceil(), hi.floor())
                } else {
                    v
                }
            })
            .collect()
    }

    fn random_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                if self.integer {
                    let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
                    if a >= b {
                        a as f64
                    } else {
                        rng.random_range(a..=b) as f64
                    }
                } else if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            })
            .collect()
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    /// Full lattice enumeration for small 1-D integer blocks.
    fn small_lattice(&self) -> Option<Vec<Vec<f64>>> {
        if !self.integer || self.dims() != 1 {
            return None;
        }
        let (a, b) = (self.lower[0].ceil() as i64, self.upper[0].floor() as i64);
        let count = b.saturating_sub(a) + 1;
        if !(1..=4096).contains(&count) {
            return None;
        }
        Some((a..=b).map(|v| vec![v as f64]).collect())
    }
}

/// Tunables for one BO run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoOptions {
    /// Kernel length scale as a fraction of the unit-box diameter `√dims`.
    pub length_scale_frac: f64,
    pub jitter: f64,
    /// Exploration margin as a fraction of the first observed |value|.
    pub tradeoff_frac: f64,
    /// Random candidates per acquisition round for vector blocks.
    pub candidates: usize,
    /// Grid resolution for 1-D continuous blocks.
    pub grid: usize,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            length_scale_frac: 0.2,
            jitter: 1e-8,
            tradeoff_frac: 0.01,
            candidates: 1024,
            grid: 512,
        }
    }
}

/// Everything a BO run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct BoOutcome {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Every evaluated point with its (penalized) value, in evaluation order.
    pub evaluations: Vec<(Vec<f64>, f64)>,
}

/// Minimizes a black-box objective over one block with `budget` total
/// evaluations: the start point (when given), one random point, then
/// acquisition-chosen points. Already-evaluated points are never re-queried;
/// exhausting a small integer lattice ends the run early. Non-finite
/// objective values are recorded as [`OBJECTIVE_PENALTY`].
pub fn bo_minimize(
    block: &BlockSpec,
    objective: &mut dyn FnMut(&[f64]) -> f64,
    budget: u64,
    start: Option<&[f64]>,
    opts: &BoOptions,
    rng: &mut impl Rng,
) -> Result<BoOutcome> {
    block.validate()?;
    if budget < 2 {
        return Err(Error::Invalid(format!(
            "optimization budget must be >= 2, got {budget}"
        )));
    }
    let length_scale = opts.length_scale_frac * (block.dims() as f64).sqrt();
    let lattice = block.small_lattice();
    let mut evaluations: Vec<(Vec<f64>, f64)> = Vec::new();
    let seen = |evals: &[(Vec<f64>, f64)], x: &[f64]| evals.iter().any(|(p, _)| p == x);

    while (evaluations.len() as u64) < budget {
        let next = if evaluations.is_empty() {
            match start {
                Some(x) => block.project(x),
                None => block.random_point(rng),
            }
        } else if evaluations.len() == 1 {
            let mut pick = None;
            for _ in 0..1000 {
                let x = block.project(&block.random_point(rng));
                if !seen(&evaluations, &x) {
                    pick = Some(x);
                    break;
                }
            }
            match pick.or_else(|| {
                lattice.as_ref().and_then(|points| {
                    points.iter().find(|x| !seen(&evaluations, x)).cloned()
                })
            }) {
                Some(x) => x,
                None => break,
            }
        } else {
            let normalized: Vec<Vec<f64>> =
                evaluations.iter().map(|(p, _)| block.normalize(p)).collect();
            let values: Vec<f64> = evaluations.iter().map(|&(_, v)| v).collect();
            let gp = GpSurrogate::fit(normalized, &values, length_scale, opts.jitter)?;
            let tradeoff = opts.tradeoff_frac * evaluations[0].1.abs();
            let candidates: Vec<Vec<f64>> = match &lattice {
                Some(points) => points.clone(),
                None if block.dims() == 1 && !block.integer => {
                    let (lo, hi) = (block.lower[0], block.upper[0]);
                    (0..opts.grid)
                        .map(|i| {
                            vec![lo + (hi - lo) * i as f64 / (opts.grid - 1).max(1) as f64]
                        })
                        .collect()
                }
                None => (0..opts.candidates)
                    .map(|_| block.project(&block.random_point(rng)))
                    .collect(),
            };
            let mut best_candidate: Option<(Vec<f64>, f64)> = None;
            for x in candidates {
                if seen(&evaluations, &x) {
                    continue;
                }
                let (mean, var) = gp.posterior(&block.normalize(&x));
                let score = probability_of_improvement(mean, var.sqrt(), gp.best(), tradeoff);
                let better = match &best_candidate {
                    Some((_, s)) => score > *s,
                    None => true,
                };
                if better {
                    best_candidate = Some((x, score));
                }
            }
            match best_candidate {
                Some((x, _)) => x,
                None => break,
            }
        };
        let raw = objective(&next);
        let value = if raw.is_finite() {
            raw
        } else {
            OBJECTIVE_PENALTY
        };
        evaluations.push((next, value));
    }

    let (best_point, best_value) = evaluations
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, v)| (p.clone(), *v))
        .expect("at least one evaluation");
    Ok(BoOutcome {
        best_point,
        best_value,
        evaluations,
    })
}

/// An objective over full strategies; implementations may cache internally.
pub trait StrategyObjective {
    fn evaluate(&mut self, strategy: &Strategy) -> f64;
}

/// Per-block evaluation budgets for the coordinate-descent sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcdBudgets {
    pub error_prob: u64,
    pub aug: u64,
    pub prune: u64,
    pub bits: u64,
}

impl Default for BcdBudgets {
    fn default() -> Self {
        Self {
            error_prob: 20,
            aug: 40,
            prune: 40,
            bits: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOptions {
    pub max_iters: u64,
    /// Relative objective-gap threshold ending the sweeps.
    pub tolerance: f64,
    pub budgets: BcdBudgets,
    pub bo: BoOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            max_iters: 8,
            tolerance: 1e-3,
            budgets: BcdBudgets::default(),
            bo: BoOptions::default(),
        }
    }
}

/// One accepted-or-rejected block update in the descent trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdTraceRow {
    pub iteration: u64,
    pub block: String,
    pub point: Vec<f64>,
    pub objective: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome {
    pub strategy: Strategy,
    pub objective: f64,
    pub trace: Vec<BcdTraceRow>,
    /// Completed sweeps.
    pub iterations: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    ErrorProb,
    Aug,
    Prune,
    Bits,
}

impl Block {
    const ORDER: [Block; 4] = [Block::ErrorProb, Block::Aug, Block::Prune, Block::Bits];

    fn name(self) -> &'static str {
        match self {
            Block::ErrorProb => "error_prob",
            Block::Aug => "aug",
            Block::Prune => "prune",
            Block::Bits => "bits",
        }
    }

    fn spec(self, bounds: &StrategyBounds, devices: usize) -> BlockSpec {
        match self {
            Block::ErrorProb => BlockSpec {
                lower: vec![bounds.target_error_prob.min],
                upper: vec![bounds.target_error_prob.max],
                integer: false,
            },
            Block::Aug => BlockSpec {
                lower: vec![bounds.aug_factor.min; devices],
                upper: vec![bounds.aug_factor.max; devices],
                integer: false,
            },
            Block::Prune => BlockSpec {
                lower: vec![bounds.prune_ratio.min; devices],
                upper: vec![bounds.prune_ratio.max; devices],
                integer: false,
            },
            Block::Bits => BlockSpec {
                lower: vec![bounds.quant_bits.min as f64; devices],
                upper: vec![bounds.quant_bits.max as f64; devices],
                integer: true,
            },
        }
    }

    fn budget(self, budgets: &BcdBudgets) -> u64 {
        match self {
            Block::ErrorProb => budgets.error_prob,
            Block::Aug => budgets.aug,
            Block::Prune => budgets.prune,
            Block::Bits => budgets.bits,
        }
    }

    fn extract(self, s: &Strategy) -> Vec<f64> {
        match self {
            Block::ErrorProb => vec![s.target_error_prob],
            Block::Aug => s.aug_factor.clone(),
            Block::Prune => s.prune_ratio.clone(),
            Block::Bits => s.quant_bits.iter().map(|&b| b as f64).collect(),
        }
    }

    fn install(self, s: &Strategy, x: &[f64]) -> Strategy {
        let mut out = s.clone();
        match self {
            Block::ErrorProb => out.target_error_prob = x[0],
            Block::Aug => out.aug_factor = x.to_vec(),
            Block::Prune => out.prune_ratio = x.to_vec(),
            Block::Bits => out.quant_bits = x.iter().map(|&v| v.round() as u32).collect(),
        }
        out
    }
}

/// Minimizes the objective by sweeping the blocks in the fixed order
/// error-probability target, augmentation, pruning, bits, running a BO
/// search per block. A block result is installed only when it does not
/// worsen the best objective seen, so the best value is non-increasing
/// across sweeps. Stops when the per-sweep relative improvement falls below
/// the tolerance or the sweep cap is hit; a cap of zero returns the initial
/// strategy scored but unchanged.
pub fn bcd_optimize(
    initial: &Strategy,
    objective: &mut dyn StrategyObjective,
    bounds: &StrategyBounds,
    opts: &BcdOptions,
    seed: u64,
) -> Result<BcdOutcome> {
    let devices = initial.aug_factor.len();
    initial.validate(bounds, devices)?;
    let mut best = initial.clone();
    let raw = objective.evaluate(&best);
    let mut h_best = if raw.is_finite() { raw } else { OBJECTIVE_PENALTY };
    let mut trace = Vec::new();
    let mut iterations = 0u64;

    for sweep in 1..=opts.max_iters {
        let h_before = h_best;
        for (index, block) in Block::ORDER.iter().copied().enumerate() {
            let spec = block.spec(bounds, devices);
            let base = best.clone();
            let mut wrapped = |x: &[f64]| {
                let candidate = block.install(&base, x);
                objective.evaluate(&candidate)
            };
            let mut stream = rng::stream(seed, sweep, index as u64, "bcd-bo");
            let outcome = bo_minimize(
                &spec,
                &mut wrapped,
                block.budget(&opts.budgets),
                Some(&block.extract(&best)),
                &opts.bo,
                &mut stream,
            )?;
            let accepted = outcome.best_value <= h_best;
            if accepted {
                best = block.install(&best, &outcome.best_point);
                h_best = outcome.best_value.min(h_best);
            }
            trace.push(BcdTraceRow {
                iteration: sweep,
                block: block.name().to_string(),
                point: outcome.best_point,
                objective: outcome.best_value,
                accepted,
            });
        }
        iterations = sweep;
        let gap = (h_before - h_best).abs() / h_before.abs().max(1e-300);
        if gap < opts.tolerance {
            break;
        }
    }

    Ok(BcdOutcome {
        strategy: best,
        objective: h_best,
        trace,
        iterations,
    })
}

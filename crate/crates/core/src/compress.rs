//! Magnitude pruning and stochastic gradient quantization with exact bit
//! accounting.
//!
//! Pruning zeroes the smallest-magnitude entries of the model. Quantization
//! snaps each gradient element to one of the `2^δ` evenly spaced boundary
//! points covering the vector's own range, choosing between the two
//! bracketing points with probability proportional to proximity, which makes
//! the reconstruction an unbiased estimate of the input.

use crate::types::{Error, Result};
use rand::Rng;

/// Which model entries survived pruning, plus the realized ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    /// Indices left untouched, ascending.
    pub kept: Vec<usize>,
    /// Fraction of entries zeroed: pruned count over vector length.
    pub achieved_ratio: f64,
}

/// Zeroes the `round(ρ·V)` smallest-magnitude entries (round half up, ties
/// broken by zeroing the lowest index) and reports the surviving indices.
pub fn prune(weights: &[f64], rho: f64) -> Result<(Vec<f64>, PruneMask)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Invalid(format!(
            "pruning ratio must lie in [0, 1), got {rho}"
        )));
    }
    if weights.is_empty() {
        return Err(Error::Empty("weight vector".to_string()));
    }
    let v = weights.len();
    let drop = (rho * v as f64 + 0.5).floor() as usize;
    let drop = drop.min(v);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .total_cmp(&weights[b].abs())
            .then(a.cmp(&b))
    });
    let mut out = weights.to_vec();
    for &i in &order[..drop] {
        out[i] = 0.0;
    }
    let mut kept: Vec<usize> = order[drop..].to_vec();
    kept.sort_unstable();
    Ok((
        out,
        PruneMask {
            kept,
            achieved_ratio: drop as f64 / v as f64,
        },
    ))
}

/// A gradient vector reduced to per-element level indices on a shared
/// `[lo, hi]` grid.
///
/// The endpoints are stored as 32-bit floats, rounded outward from the
/// vector's true extrema so every input element stays inside the stored
/// range; this keeps the serialized form lossless with respect to the
/// in-memory value and keeps reconstruction unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGradient {
    /// Chosen boundary index per element, each in `[0, 2^bits - 1]`.
    pub levels: Vec<u32>,
    pub lo: f32,
    pub hi: f32,
    pub bits_per_element: u32,
    /// Exact payload size: `V * bits_per_element + overhead_bits`.
    pub total_bits: u64,
}

fn round_down_f32(x: f64) -> f32 {
    let y = x as f32;
    if (y as f64) > x {
        y.next_down()
    } else {
        y
    }
}

fn round_up_f32(x: f64) -> f32 {
    let y = x as f32;
    if (y as f64) < x {
        y.next_up()
    } else {
        y
    }
}

/// Stochastically rounds each element of `g` onto the `2^bits` boundary
/// points spanning the vector's range. An element strictly between two
/// boundaries moves up with probability equal to its normalized offset;
/// elements exactly on a boundary stay put without consuming randomness. A
/// constant vector reproduces exactly. `overhead_bits` is the serialized
/// header budget (range endpoints plus padding) counted into `total_bits`.
pub fn quantize(
    g: &[f64],
    bits: u32,
    overhead_bits: u32,
    rng: &mut impl Rng,
) -> Result<QuantizedGradient> {
    if g.is_empty() {
        return Err(Error::Empty("gradient vector".to_string()));
    }
    if bits < 1 || bits > 32 {
        return Err(Error::Invalid(format!(
            "quantization bits must lie in [1, 32], got {bits}"
        )));
    }
    if overhead_bits < 64 || overhead_bits % 8 != 0 {
        return Err(Error::Invalid(format!(
            "overhead bits must be a multiple of 8 and >= 64, got {overhead_bits}"
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &x) in g.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Invalid(format!(
                "gradient element {i} is not finite: {x}"
            )));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let lo32 = round_down_f32(lo);
    let hi32 = round_up_f32(hi);
    if !(lo32.is_finite() && hi32.is_finite()) {
        return Err(Error::Invalid(
            "gradient range exceeds 32-bit float limits".to_string(),
        ));
    }
    let intervals = (1u64 << bits) - 1;
    let width = (hi32 as f64 - lo32 as f64) / intervals as f64;
    let levels = g
        .iter()
        .map(|&x| {
            if width == 0.0 {
                return 0u32;
            }
            let pos = (x - lo32 as f64) / width;
            let j = (pos.floor() as u64).min(intervals);
            let frac = pos - j as f64;
            let up = frac > 0.0 && rng.random::<f64>() < frac;
            (j + u64::from(up)).min(intervals) as u32
        })
        .collect();
    Ok(QuantizedGradient {
        levels,
        lo: lo32,
        hi: hi32,
        bits_per_element: bits,
        total_bits: g.len() as u64 * bits as u64 + overhead_bits as u64,
    })
}

impl QuantizedGradient {
    fn overhead_bits(&self) -> u64 {
        self.total_bits - self.levels.len() as u64 * self.bits_per_element as u64
    }

    /// Reconstructs the boundary value for every stored level index. The
    /// extreme indices reproduce the stored endpoints exactly.
    pub fn dequantize(&self) -> Vec<f64> {
        let intervals = (1u64 << self.bits_per_element) - 1;
        let lo = self.lo as f64;
        let hi = self.hi as f64;
        let width = (hi - lo) / intervals as f64;
        self.levels
            .iter()
            .map(|&j| {
                if j == 0 {
                    lo
                } else if u64::from(j) == intervals {
                    hi
                } else {
                    lo + j as f64 * width
                }
            })
            .collect()
    }

    /// Serializes to `[lo: f32 LE][hi: f32 LE][zero padding][packed levels]`.
    /// Level indices are packed least-significant-bit first, starting right
    /// after the overhead region; the buffer holds exactly
    /// `ceil(total_bits / 8)` bytes with unused trailing bits zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = (self.total_bits as usize).div_ceil(8);
        let mut out = vec![0u8; n_bytes];
        out[0..4].copy_from_slice(&self.lo.to_le_bytes());
        out[4..8].copy_from_slice(&self.hi.to_le_bytes());
        let base = self.overhead_bits();
        for (i, &level) in self.levels.iter().enumerate() {
            let start = base + i as u64 * self.bits_per_element as u64;
            for b in 0..self.bits_per_element as u64 {
                if (level >> b) & 1 == 1 {
                    let bit = start + b;
                    out[(bit / 8) as usize] |= 1 << (bit % 8);
                }
            }
        }
        out
    }

    /// Parses a buffer produced by [`Self::to_bytes`]. The element count,
    /// bit width, and overhead are not self-describing and must be supplied;
    /// the buffer length is checked against them exactly.
    pub fn from_bytes(
        bytes: &[u8],
        elements: usize,
        bits: u32,
        overhead_bits: u32,
    ) -> Result<Self> {
        if bits < 1 || bits > 32 {
            return Err(Error::Invalid(format!(
                "quantization bits must lie in [1, 32], got {bits}"
            )));
        }
        if overhead_bits < 64 || overhead_bits % 8 != 0 {
            return Err(Error::Invalid(format!(
                "overhead bits must be a multiple of 8 and >= 64, got {overhead_bits}"
            )));
        }
        let total_bits = elements as u64 * bits as u64 + overhead_bits as u64;
        let expect = (total_bits as usize).div_ceil(8);
        if bytes.len() != expect {
            return Err(Error::Parse(format!(
                "quantized payload is {} bytes, expected {expect} for {elements} elements at {bits} bits",
                bytes.len()
            )));
        }
        let lo = f32::from_le_bytes(bytes[0..4].try_into().expect("length checked"));
        let hi = f32::from_le_bytes(bytes[4..8].try_into().expect("length checked"));
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Parse(format!(
                "quantized payload endpoints invalid: lo={lo}, hi={hi}"
            )));
        }
        let base = overhead_bits as u64;
        let levels = (0..elements)
            .map(|i| {
                let start = base + i as u64 * bits as u64;
                let mut level = 0u32;
                for b in 0..bits as u64 {
                    let bit = start + b;
                    if (bytes[(bit / 8) as usize] >> (bit % 8)) & 1 == 1 {
                        level |= 1 << b;
                    }
                }
                level
            })
            .collect();
        Ok(Self {
            levels,
            lo,
            hi,
            bits_per_element: bits,
            total_bits,
        })
    }
}

//! Pruning and quantization checked against hand-built payloads and
//! statistical oracles.

use feddpq_core::compress::{prune, quantize, QuantizedGradient};
use feddpq_core::rng::stream;
use proptest::prelude::*;

#[test]
fn drop_count_rounds_half_up() {
    // 10 entries: ρ=0.25 → 2.5 → 3 dropped; ρ=0.24 → 2.4 → 2 dropped.
    let w: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    let (_, mask) = prune(&w, 0.25).unwrap();
    assert_eq!(mask.kept.len(), 7);
    assert_eq!(mask.achieved_ratio, 0.3);
    let (_, mask) = prune(&w, 0.24).unwrap();
    assert_eq!(mask.kept.len(), 8);
}

#[test]
fn magnitude_ties_drop_the_lowest_index() {
    let (out, mask) = prune(&[2.0, -2.0, 2.0, 5.0], 0.5).unwrap();
    assert_eq!(out, vec![0.0, 0.0, 2.0, 5.0]);
    assert_eq!(mask.kept, vec![2, 3]);
}

#[test]
fn prune_rejects_out_of_range_ratios() {
    for rho in [-0.1, 1.0, 1.5, f64::NAN] {
        assert!(prune(&[1.0], rho).is_err());
    }
}

#[test]
fn byte_layout_matches_hand_construction() {
    // 3 elements at 2 bits after a 64-bit header. Levels 1, 2, 3 pack
    // LSB-first from bit 64: 1=01, 2=10, 3=11 → byte 8 = 0b00111001.
    let q = QuantizedGradient {
        levels: vec![1, 2, 3],
        lo: -1.0,
        hi: 2.0,
        bits_per_element: 2,
        total_bits: 3 * 2 + 64,
    };
    let mut expect = Vec::new();
    expect.extend_from_slice(&(-1.0f32).to_le_bytes());
    expect.extend_from_slice(&2.0f32.to_le_bytes());
    expect.push(0x39);
    assert_eq!(q.to_bytes(), expect);
    let back = QuantizedGradient::from_bytes(&expect, 3, 2, 64).unwrap();
    assert_eq!(back, q);
}

#[test]
fn oversized_overhead_shifts_the_level_region() {
    // With an 80-bit header the first level starts at bit 80 (byte 10).
    let q = QuantizedGradient {
        levels: vec![1],
        lo: 0.0,
        hi: 1.0,
        bits_per_element: 1,
        total_bits: 1 + 80,
    };
    let bytes = q.to_bytes();
    assert_eq!(bytes.len(), 11);
    assert_eq!(bytes[10], 0x01);
    assert_eq!(&bytes[8..10], &[0, 0]);
}

#[test]
fn from_bytes_rejects_wrong_lengths_and_endpoints() {
    let q = QuantizedGradient {
        levels: vec![0, 1],
        lo: 0.0,
        hi: 1.0,
        bits_per_element: 4,
        total_bits: 8 + 64,
    };
    let bytes = q.to_bytes();
    assert!(QuantizedGradient::from_bytes(&bytes[..bytes.len() - 1], 2, 4, 64).is_err());
    let mut swapped = bytes.clone();
    swapped[0..4].copy_from_slice(&2.0f32.to_le_bytes());
    swapped[4..8].copy_from_slice(&1.0f32.to_le_bytes());
    assert!(QuantizedGradient::from_bytes(&swapped, 2, 4, 64).is_err());
}

#[test]
fn reconstruction_is_unbiased() {
    let mut key = stream(11, 0, 0, "unbiased-input");
    let g: Vec<f64> = (0..16).map(|_| rand::Rng::random_range(&mut key, -1.0..1.0)).collect();
    let bits = 2;
    let trials = 20_000u32;
    let mut sums = vec![0.0f64; g.len()];
    let mut width = 0.0;
    for t in 0..trials {
        let mut rng = stream(11, u64::from(t), 0, "unbiased-draws");
        let q = quantize(&g, bits, 64, &mut rng).unwrap();
        width = (q.hi as f64 - q.lo as f64) / ((1u64 << bits) - 1) as f64;
        for (s, v) in sums.iter_mut().zip(q.dequantize()) {
            *s += v;
        }
    }
    // Each element is a two-point distribution inside one interval, so its
    // standard error is at most width / (2 sqrt(n)).
    let se = width / 2.0 / f64::from(trials).sqrt();
    for (s, &x) in sums.iter().zip(&g) {
        let mean = s / f64::from(trials);
        assert!(
            (mean - x).abs() <= 4.0 * se,
            "bias {} exceeds 4 standard errors {}",
            (mean - x).abs(),
            se
        );
    }
}

#[test]
fn mean_squared_error_respects_the_range_bound() {
    let mut key = stream(12, 0, 0, "mse-input");
    let g: Vec<f64> = (0..32).map(|_| rand::Rng::random_range(&mut key, -2.0..2.0)).collect();
    for bits in [1u32, 3, 6] {
        let trials = 4000u32;
        let mut acc = 0.0;
        let mut range = 0.0;
        for t in 0..trials {
            let mut rng = stream(12, u64::from(t), u64::from(bits), "mse-draws");
            let q = quantize(&g, bits, 64, &mut rng).unwrap();
            range = q.hi as f64 - q.lo as f64;
            acc += q
                .dequantize()
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let bound = g.len() as f64 * range * range
            / (4.0 * (((1u64 << bits) - 1) as f64).powi(2));
        assert!(
            acc / f64::from(trials) <= bound,
            "empirical MSE {} exceeds bound {} at {} bits",
            acc / f64::from(trials),
            bound,
            bits
        );
    }
}

proptest! {
    #[test]
    fn pruning_partitions_and_preserves_survivors(
        w in prop::collection::vec(-100.0f64..100.0, 1..40),
        rho in 0.0f64..0.999,
    ) {
        let (out, mask) = prune(&w, rho).unwrap();
        let v = w.len();
        let want_drop = ((rho * v as f64 + 0.5).floor() as usize).min(v);
        prop_assert_eq!(mask.kept.len(), v - want_drop);
        prop_assert!((mask.achieved_ratio - want_drop as f64 / v as f64).abs() < 1e-15);
        let kept: std::collections::BTreeSet<_> = mask.kept.iter().copied().collect();
        for i in 0..v {
            if kept.contains(&i) {
                prop_assert_eq!(out[i], w[i]);
            } else {
                prop_assert_eq!(out[i], 0.0);
            }
        }
        prop_assert!(mask.kept.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn quantization_levels_stay_in_range(
        g in prop::collection::vec(-1e6f64..1e6, 1..24),
        bits in 1u32..12,
        seed in 0u64..1000,
    ) {
        let mut rng = stream(seed, 0, 0, "prop-quant");
        let q = quantize(&g, bits, 64, &mut rng).unwrap();
        let top = ((1u64 << bits) - 1) as u32;
        prop_assert!(q.levels.iter().all(|&j| j <= top));
        prop_assert!((q.lo as f64) <= g.iter().cloned().fold(f64::INFINITY, f64::min));
        prop_assert!((q.hi as f64) >= g.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        for (v, &x) in q.dequantize().iter().zip(&g) {
            let width = (q.hi as f64 - q.lo as f64) / ((1u64 << bits) - 1) as f64;
            prop_assert!((v - x).abs() <= width + 1e-12, "moved {} for width {}", (v - x).abs(), width);
        }
        let bytes = q.to_bytes();
        let back = QuantizedGradient::from_bytes(&bytes, g.len(), bits, 64).unwrap();
        prop_assert_eq!(back, q);
    }
}

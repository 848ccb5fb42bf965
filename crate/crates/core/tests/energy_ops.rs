//! Energy accounting checked against an independently written cost model
//! over randomized device physics.

use feddpq_core::energy::{generation_energy, round_energy, total_energy, EnergyBreakdown};
use feddpq_core::rng::stream;
use feddpq_core::{DeviceProfile, SystemConstants};
use rand::Rng;

fn consts() -> SystemConstants {
    SystemConstants {
        lipschitz: 1.0,
        grad_variance: 0.0,
        heterogeneity: vec![],
        param_norm_sq: 0.0,
        learning_rate: 0.01,
        grad_range_sq: vec![],
        initial_gap: 1.0,
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

fn profile(id: usize, cpu_hz: f64) -> DeviceProfile {
    DeviceProfile {
        id,
        cpu_hz,
        distance_m: 150.0,
        interference_w: 1.5e-8,
        bandwidth_hz: 1e6,
        class_counts: Vec::new(),
        data_share: 1.0,
    }
}

/// The same cost model written independently: times first, then joules from
/// watts, with the payload and dynamic power spelled out term by term.
fn oracle(
    cpu_hz: f64,
    c: &SystemConstants,
    rho: f64,
    bits: u32,
    power_w: f64,
    rate: f64,
    dim: usize,
    generated: u64,
) -> (f64, f64, f64) {
    let watts = c.eff_capacitance * cpu_hz * cpu_hz * cpu_hz;
    let train = watts * (c.batch_size as f64 * c.cycles_per_train_sample * (1.0 - rho) / cpu_hz);
    let payload = dim as f64 * f64::from(bits) + f64::from(c.overhead_bits);
    let comm = power_w * (payload / rate);
    let gen = watts * (generated as f64 * c.cycles_per_gen_sample / cpu_hz);
    (train, comm, gen)
}

#[test]
fn randomized_configs_match_the_oracle() {
    let c = consts();
    let mut rng = stream(17, 0, 0, "energy-configs");
    for id in 0..20usize {
        let cpu_hz = rng.random_range(1e7..5e7);
        let rho = rng.random_range(0.0..0.9);
        let bits = rng.random_range(1u32..17);
        let power_w = rng.random_range(0.005..0.2);
        let rate = rng.random_range(1e3..1e7);
        let dim = rng.random_range(10usize..5000);
        let generated = rng.random_range(0u64..1000);
        let p = profile(id, cpu_hz);
        let got = round_energy(&p, &c, rho, bits, power_w, rate, dim).unwrap();
        let gen = generation_energy(&p, &c, generated);
        let (train, comm, gen_j) = oracle(cpu_hz, &c, rho, bits, power_w, rate, dim, generated);
        assert!(((got.train_j - train) / train.max(1e-300)).abs() < 1e-9);
        assert!(((got.comm_j - comm) / comm).abs() < 1e-9);
        if generated > 0 {
            assert!(((gen.gen_j - gen_j) / gen_j).abs() < 1e-9);
        } else {
            assert_eq!(gen.gen_j, 0.0);
        }
    }
}

#[test]
fn training_cost_is_non_increasing_in_pruning() {
    let c = consts();
    let p = profile(0, 3e7);
    let mut last = f64::INFINITY;
    for step in 0..=10 {
        let rho = step as f64 / 10.0;
        let e = round_energy(&p, &c, rho, 8, 0.05, 1e5, 330).unwrap();
        assert!(e.train_j <= last, "rho={rho} raised training energy");
        last = e.train_j;
    }
}

#[test]
fn transmission_cost_is_non_decreasing_in_bits() {
    let c = consts();
    let p = profile(0, 3e7);
    let mut last = 0.0;
    for bits in 1..=16 {
        let e = round_energy(&p, &c, 0.2, bits, 0.05, 1e5, 330).unwrap();
        assert!(e.comm_j >= last, "bits={bits} lowered transmission energy");
        last = e.comm_j;
    }
}

#[test]
fn total_cost_combines_rounds_and_generation() {
    let c = consts();
    let devices: Vec<DeviceProfile> = (0..3).map(|i| profile(i, 2e7 + i as f64 * 1e7)).collect();
    let shares = [0.2, 0.3, 0.5];
    let round: Vec<EnergyBreakdown> = devices
        .iter()
        .map(|p| round_energy(p, &c, 0.1, 6, 0.05, 1e5, 330).unwrap())
        .collect();
    let gen: Vec<EnergyBreakdown> = devices
        .iter()
        .zip([5u64, 0, 12])
        .map(|(p, n)| generation_energy(p, &c, n))
        .collect();
    let rounds = 37.0;
    let got = total_energy(&round, &gen, &shares, rounds).unwrap();
    let want: f64 = rounds
        * round
            .iter()
            .zip(&shares)
            .map(|(e, &t)| t * (e.train_j + e.comm_j))
            .sum::<f64>()
        + gen.iter().map(|e| e.gen_j).sum::<f64>();
    assert!(((got - want) / want).abs() < 1e-12);
}

#[test]
fn misaligned_inputs_are_rejected() {
    let e = EnergyBreakdown::default();
    assert!(total_energy(&[e], &[e], &[0.5, 0.5], 1.0).is_err());
    assert!(total_energy(&[e, e], &[e], &[0.5, 0.5], 1.0).is_err());
    assert!(total_energy(&[e], &[e], &[1.0], -1.0).is_err());
}

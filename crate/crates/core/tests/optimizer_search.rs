//! Behavior of the BO block search and the coordinate-descent wrapper on
//! objectives with known minimizers.

use feddpq_core::optimizer::{
    bcd_optimize, bo_minimize, BcdOptions, BlockSpec, BoOptions, StrategyObjective,
    OBJECTIVE_PENALTY,
};
use feddpq_core::rng::stream;
use feddpq_core::types::{BitRange, Range, Strategy, StrategyBounds};

fn unit_block() -> BlockSpec {
    BlockSpec {
        lower: vec![0.0],
        upper: vec![1.0],
        integer: false,
    }
}

#[test]
fn quadratic_minimum_is_found_on_every_seed() {
    for seed in 0..10 {
        let mut rng = stream(seed, 0, 0, "bo-test");
        let mut evals = 0u64;
        let out = bo_minimize(
            &unit_block(),
            &mut |x| {
                evals += 1;
                (x[0] - 0.3) * (x[0] - 0.3)
            },
            30,
            None,
            &BoOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!(evals <= 30);
        assert!(
            (out.best_point[0] - 0.3).abs() < 0.05,
            "seed {seed}: best {}",
            out.best_point[0]
        );
    }
}

#[test]
fn budget_is_respected_and_points_never_repeat() {
    let mut rng = stream(5, 0, 0, "bo-test");
    let out = bo_minimize(
        &unit_block(),
        &mut |x| x[0].sin(),
        12,
        Some(&[0.7]),
        &BoOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.evaluations.len(), 12);
    assert_eq!(out.evaluations[0].0, vec![0.7]);
    for i in 0..out.evaluations.len() {
        for j in 0..i {
            assert_ne!(out.evaluations[i].0, out.evaluations[j].0);
        }
    }
    let min_seen = out
        .evaluations
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_value, min_seen);
}

#[test]
fn start_point_is_projected_into_the_box() {
    let block = BlockSpec {
        lower: vec![2.0],
        upper: vec![5.0],
        integer: true,
    };
    let mut rng = stream(6, 0, 0, "bo-test");
    let out = bo_minimize(
        &block,
        &mut |x| x[0],
        4,
        Some(&[9.4]),
        &BoOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.evaluations[0].0, vec![5.0]);
    for (p, _) in &out.evaluations {
        assert_eq!(p[0], p[0].round());
        assert!((2.0..=5.0).contains(&p[0]));
    }
}

#[test]
fn exhausted_lattice_ends_the_run_early() {
    let block = BlockSpec {
        lower: vec![1.0],
        upper: vec![6.0],
        integer: true,
    };
    let mut rng = stream(7, 0, 0, "bo-test");
    let out = bo_minimize(
        &block,
        &mut |x| (x[0] - 4.0).abs(),
        50,
        None,
        &BoOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.evaluations.len(), 6);
    assert_eq!(out.best_point, vec![4.0]);
    assert_eq!(out.best_value, 0.0);
}

#[test]
fn non_finite_values_become_the_penalty() {
    let mut rng = stream(8, 0, 0, "bo-test");
    let out = bo_minimize(
        &unit_block(),
        &mut |_| f64::NAN,
        5,
        None,
        &BoOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.best_value, OBJECTIVE_PENALTY);
}

#[test]
fn malformed_searches_are_rejected() {
    let mut rng = stream(9, 0, 0, "bo-test");
    assert!(bo_minimize(
        &unit_block(),
        &mut |x| x[0],
        1,
        None,
        &BoOptions::default(),
        &mut rng
    )
    .is_err());
    let bad = BlockSpec {
        lower: vec![1.0],
        upper: vec![0.0],
        integer: false,
    };
    assert!(
        bo_minimize(&bad, &mut |x| x[0], 4, None, &BoOptions::default(), &mut rng).is_err()
    );
}

fn bounds() -> StrategyBounds {
    StrategyBounds {
        aug_factor: Range::new(0.0, 1.0).unwrap(),
        prune_ratio: Range::new(0.0, 0.5).unwrap(),
        quant_bits: BitRange::new(2, 16).unwrap(),
        tx_power_w: Range::new(0.01, 0.1).unwrap(),
        target_error_prob: Range::new(0.01, 0.5).unwrap(),
    }
}

/// Separable bowl with its minimum strictly inside every block's box.
struct Bowl {
    pub count: u64,
}

impl StrategyObjective for Bowl {
    fn evaluate(&mut self, s: &Strategy) -> f64 {
        self.count += 1;
        let q = (s.target_error_prob - 0.2) * (s.target_error_prob - 0.2);
        let a: f64 = s.aug_factor.iter().map(|&x| (x - 0.3) * (x - 0.3)).sum();
        let r: f64 = s.prune_ratio.iter().map(|&x| (x - 0.15) * (x - 0.15)).sum();
        let b: f64 = s
            .quant_bits
            .iter()
            .map(|&x| {
                let d = x as f64 - 9.0;
                d * d
            })
            .sum();
        q + a + r + b
    }
}

#[test]
fn descent_on_a_separable_bowl_approaches_the_minimum() {
    let initial = Strategy::uniform(2, 0.4, 0.8, 0.45, 14);
    let mut objective = Bowl { count: 0 };
    let out = bcd_optimize(&initial, &mut objective, &bounds(), &BcdOptions::default(), 12)
        .unwrap();
    assert_eq!(out.strategy.quant_bits, vec![9, 9]);
    assert!((out.strategy.target_error_prob - 0.2).abs() < 0.05);
    for &x in &out.strategy.aug_factor {
        assert!((x - 0.3).abs() < 0.15, "aug {x}");
    }
    for &x in &out.strategy.prune_ratio {
        assert!((x - 0.15).abs() < 0.15, "prune {x}");
    }
    assert!(out.objective < 0.05, "objective {}", out.objective);
    assert!(out.iterations >= 1 && out.iterations <= BcdOptions::default().max_iters);
}

#[test]
fn accepted_updates_never_worsen_the_best_objective() {
    let initial = Strategy::uniform(2, 0.4, 0.8, 0.45, 14);
    let mut objective = Bowl { count: 0 };
    let out = bcd_optimize(&initial, &mut objective, &bounds(), &BcdOptions::default(), 3)
        .unwrap();
    let mut objective = Bowl { count: 0 };
    let start = objective.evaluate(&initial);
    let mut best = start;
    for row in &out.trace {
        if row.accepted {
            assert!(
                row.objective <= best + 1e-12,
                "sweep {} block {} accepted a worse value",
                row.iteration,
                row.block
            );
            best = best.min(row.objective);
        }
    }
    assert!((out.objective - best).abs() < 1e-12);
    assert!(out.objective <= start);
}

#[test]
fn zero_sweeps_return_the_scored_initial_strategy() {
    let initial = Strategy::uniform(2, 0.4, 0.8, 0.45, 14);
    let mut objective = Bowl { count: 0 };
    let opts = BcdOptions {
        max_iters: 0,
        ..BcdOptions::default()
    };
    let out = bcd_optimize(&initial, &mut objective, &bounds(), &opts, 3).unwrap();
    assert_eq!(out.strategy, initial);
    assert_eq!(out.iterations, 0);
    assert_eq!(objective.count, 1);
}

#[test]
fn loose_tolerance_stops_after_one_sweep() {
    let initial = Strategy::uniform(2, 0.4, 0.8, 0.45, 14);
    let mut objective = Bowl { count: 0 };
    let opts = BcdOptions {
        tolerance: f64::INFINITY,
        ..BcdOptions::default()
    };
    let out = bcd_optimize(&initial, &mut objective, &bounds(), &opts, 3).unwrap();
    assert_eq!(out.iterations, 1);
}

#[test]
fn descent_is_deterministic_in_the_seed() {
    let initial = Strategy::uniform(2, 0.4, 0.8, 0.45, 14);
    let a = bcd_optimize(&initial, &mut Bowl { count: 0 }, &bounds(), &BcdOptions::default(), 21)
        .unwrap();
    let b = bcd_optimize(&initial, &mut Bowl { count: 0 }, &bounds(), &BcdOptions::default(), 21)
        .unwrap();
    assert_eq!(a.strategy, b.strategy);
    assert_eq!(a.objective, b.objective);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn everywhere_infeasible_objectives_leave_the_strategy_alone() {
    struct Wall;
    impl StrategyObjective for Wall {
        fn evaluate(&mut self, _: &Strategy) -> f64 {
            f64::INFINITY
        }
    }
    let initial = Strategy::uniform(2, 0.4, 0.8, 0.45, 14);
    let out = bcd_optimize(&initial, &mut Wall, &bounds(), &BcdOptions::default(), 3).unwrap();
    assert_eq!(out.objective, OBJECTIVE_PENALTY);
}

//! Gaussian-process surrogate math against a hand-solved three-point fit.

use feddpq_core::optimizer::{probability_of_improvement, GpSurrogate};

// Points 0, 0.5, 1 with values 1, -0.5, 2 under a squared-exponential kernel
// with length scale 0.3 and no jitter; posterior solved by hand to 20
// significant digits.
fn fitted() -> GpSurrogate {
    GpSurrogate::fit(
        vec![vec![0.0], vec![0.5], vec![1.0]],
        &[1.0, -0.5, 2.0],
        0.3,
        0.0,
    )
    .unwrap()
}

#[test]
fn posterior_matches_the_hand_solution() {
    let gp = fitted();
    let (mean, var) = gp.posterior(&[0.25]);
    assert!((mean - 0.049564102683655636203).abs() < 1e-12, "{mean}");
    assert!((var - 0.19007077231249314413).abs() < 1e-12, "{var}");
    let (mean, var) = gp.posterior(&[0.8]);
    assert!((mean - 1.0574910628455237366).abs() < 1e-12, "{mean}");
    assert!((var - 0.17505667815823248191).abs() < 1e-12, "{var}");
    assert_eq!(gp.best(), -0.5);
}

#[test]
fn observations_are_interpolated() {
    let gp = fitted();
    for (x, v) in [(0.0, 1.0), (0.5, -0.5), (1.0, 2.0)] {
        let (mean, var) = gp.posterior(&[x]);
        assert!((mean - v).abs() < 1e-9, "mean at observation {x}: {mean}");
        assert!(var < 1e-9, "variance at observation {x}: {var}");
    }
}

#[test]
fn distant_queries_relax_to_the_prior() {
    let gp = fitted();
    let (mean, var) = gp.posterior(&[40.0]);
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn coincident_points_are_reported_as_singular() {
    let err = GpSurrogate::fit(
        vec![vec![0.3], vec![0.3]],
        &[1.0, 2.0],
        0.3,
        0.0,
    );
    assert!(err.is_err());
    assert!(GpSurrogate::fit(vec![], &[], 0.3, 1e-8).is_err());
    assert!(GpSurrogate::fit(vec![vec![0.1]], &[1.0], 0.0, 1e-8).is_err());
}

#[test]
fn improvement_probability_is_monotone_in_the_mean() {
    let mut last = 1.0;
    for i in 0..40 {
        let mean = -2.0 + i as f64 * 0.1;
        let p = probability_of_improvement(mean, 0.7, 0.0, 0.0);
        assert!(p <= last);
        assert!((0.0..=1.0).contains(&p));
        last = p;
    }
    assert!((probability_of_improvement(0.0, 1.0, 0.0, 0.0) - 0.5).abs() < 1e-12);
    // demanding a larger improvement can only lower the score
    let narrow = probability_of_improvement(1.0, 0.5, 0.0, 0.0);
    let wide = probability_of_improvement(1.0, 0.5, 0.0, 0.3);
    assert!(wide < narrow);
    assert_eq!(probability_of_improvement(0.0, 0.0, 0.1, 0.2), 0.0);
}

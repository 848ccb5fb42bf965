//! Constant calibration probed with quadratic losses whose smoothness and
//! dispersion constants are known in closed form.

use feddpq_core::analysis::{calibrate_constants, CalibrationTarget};
use rand_distr::{Distribution, StandardNormal};

/// Per-device loss `0.5 * a * ||w - b_u||^2`, so the device gradient is the
/// linear map `a * (w - b_u)`: the Lipschitz constant is exactly `a` and the
/// device-to-population gradient gap is the constant `a * (b_mean - b_u)`.
struct Quadratic {
    a: f64,
    centers: Vec<Vec<f64>>,
    shares: Vec<f64>,
    noise_std: f64,
}

impl Quadratic {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }
}

impl CalibrationTarget for Quadratic {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn device_count(&self) -> usize {
        self.centers.len()
    }

    fn shares(&self) -> Vec<f64> {
        self.shares.clone()
    }

    fn device_gradient(&self, device: usize, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.centers[device])
            .map(|(&x, &b)| self.a * (x - b))
            .collect()
    }

    fn minibatch_gradient(
        &self,
        device: usize,
        w: &[f64],
        rng: &mut dyn rand::RngCore,
    ) -> Vec<f64> {
        self.device_gradient(device, w)
            .into_iter()
            .map(|g| {
                let z: f64 = StandardNormal.sample(rng);
                g + self.noise_std * z
            })
            .collect()
    }
}

fn weighted_mean(centers: &[Vec<f64>], shares: &[f64]) -> Vec<f64> {
    let dim = centers[0].len();
    let mut mean = vec![0.0; dim];
    for (c, &t) in centers.iter().zip(shares) {
        for (m, &x) in mean.iter_mut().zip(c) {
            *m += t * x;
        }
    }
    mean
}

fn target() -> Quadratic {
    Quadratic {
        a: 3.0,
        centers: vec![vec![1.0, -2.0, 0.5], vec![-1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0]],
        shares: vec![0.5, 0.3, 0.2],
        noise_std: 0.0,
    }
}

#[test]
fn linear_gradients_recover_the_exact_constants() {
    let t = target();
    let est = calibrate_constants(&t, 6, 0.05, 7).unwrap();
    assert!((est.lipschitz - 3.0).abs() < 1e-9, "lipschitz {}", est.lipschitz);
    assert_eq!(est.grad_variance, 0.0);
    let mean = weighted_mean(&t.centers, &t.shares);
    for (u, c) in t.centers.iter().enumerate() {
        let expect: f64 = c
            .iter()
            .zip(&mean)
            .map(|(&b, &m)| {
                let d = t.a * (m - b);
                d * d
            })
            .sum();
        assert!(
            (est.heterogeneity[u] - expect).abs() < 1e-9,
            "device {u}: {} vs {expect}",
            est.heterogeneity[u]
        );
    }
    assert!(est.param_norm_sq > 0.0);
    for &r in &est.grad_range_sq {
        assert!(r.is_finite() && r >= 0.0);
    }
}

#[test]
fn identical_devices_have_no_heterogeneity() {
    let t = Quadratic {
        a: 1.5,
        centers: vec![vec![0.7, -0.4]; 4],
        shares: vec![0.25; 4],
        noise_std: 0.0,
    };
    let est = calibrate_constants(&t, 4, 0.1, 3).unwrap();
    assert!((est.lipschitz - 1.5).abs() < 1e-9);
    for &z in &est.heterogeneity {
        assert!(z < 1e-18);
    }
}

#[test]
fn minibatch_noise_is_picked_up_at_the_right_scale() {
    let mut t = target();
    t.noise_std = 0.2;
    let est = calibrate_constants(&t, 6, 0.05, 11).unwrap();
    // expected squared distance between noisy and clean gradient is dim * std^2
    let expect = t.dim() as f64 * t.noise_std * t.noise_std;
    assert!(
        est.grad_variance > 0.3 * expect && est.grad_variance < 3.0 * expect,
        "variance {} vs expected scale {expect}",
        est.grad_variance
    );
}

#[test]
fn probe_parameters_are_validated() {
    let t = target();
    assert!(calibrate_constants(&t, 1, 0.05, 7).is_err());
    assert!(calibrate_constants(&t, 4, 0.0, 7).is_err());
    assert!(calibrate_constants(&t, 4, f64::INFINITY, 7).is_err());
}

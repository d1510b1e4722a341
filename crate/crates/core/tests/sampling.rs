//! Statistical checks of the squashed Gaussian action distribution.

use rmixer_core::policy::{ActionDistribution, SamplingMode};
use rmixer_core::rng::SeededRng;
use rmixer_core::scalar::Scalar;
use rmixer_core::ActionVector;

fn dist(mean: f64, log_std: f64) -> ActionDistribution<f64> {
    ActionDistribution {
        mean: vec![mean],
        log_std: vec![log_std],
    }
}

/// Midpoint rule over (0, 1).
fn integrate(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    (0..n).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
}

fn density(d: &ActionDistribution<f64>, a: f64) -> f64 {
    d.log_density(&ActionVector::new(vec![a]).unwrap()).unwrap().exp()
}

#[test]
fn density_integrates_to_one() {
    for (m, s) in [(0.0, 0.0), (1.3, -0.7), (-2.0, 0.5), (0.4, -2.0)] {
        let d = dist(m, s);
        let total = integrate(|a| density(&d, a), 200_000);
        assert!((total - 1.0).abs() < 1e-2, "({m}, {s}): {total}");
    }
}

#[test]
fn sample_mean_matches_the_density() {
    for (m, s) in [(0.0, 0.0), (0.8, -0.5), (-1.5, 0.3)] {
        let d = dist(m, s);
        let expected = integrate(|a| a * density(&d, a), 200_000);
        let n = 100_000;
        let mean = (0..n)
            .map(|seed| d.sample(seed, SamplingMode::Stochastic).unwrap().0.as_slice()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - expected).abs() < 1e-2, "({m}, {s}): {mean} vs {expected}");
    }
    // symmetric case has mean exactly one half
    let d = dist(0.0, 0.0);
    assert!((integrate(|a| a * density(&d, a), 200_000) - 0.5).abs() < 1e-9);
}

#[test]
fn sampled_log_prob_is_the_density_at_the_sample() {
    let mut rng = SeededRng::new(8);
    let d = ActionDistribution {
        mean: rng.normals(6),
        log_std: rng.normals(6).into_iter().map(|v| 0.5 * v).collect(),
    };
    for seed in 0..200 {
        let (a, lp) = d.sample(seed, SamplingMode::Stochastic).unwrap();
        assert!((lp - d.log_density(&a).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn deterministic_mode_returns_the_squashed_mean() {
    let d = ActionDistribution::<f64> {
        mean: vec![-1.0, 0.0, 2.5],
        log_std: vec![0.0, -1.0, 1.0],
    };
    let (a, lp) = d.sample(123, SamplingMode::Deterministic).unwrap();
    for (x, m) in a.as_slice().iter().zip(&d.mean) {
        assert!((x - m.sigmoid()).abs() < 1e-15);
    }
    assert!((lp - d.log_density(&a).unwrap()).abs() < 1e-12);
}

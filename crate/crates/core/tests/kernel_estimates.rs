//! Statistical properties of the positive random feature estimator and of
//! its error bound.

use nodeformer::bench::{theorem_sweep, TheoremSweepConfig};
use nodeformer::features::{
    prf_map, sample_projection, softmax_kernel_estimate, theoretical_error_bound, ErrorBoundParams,
};
use nodeformer::rng;
use rand::RngCore;

/// Ratio of the empirical `1 − ε` error quantile to the unit-constant bound,
/// frozen from a calibration run (worst observed ratio 0.136 at τ=2, m=256).
const BOUND_CONSTANT: f64 = 0.2;

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Uniform point in the `d`-ball of radius `r`.
fn in_ball(r: f64, d: usize, g: &mut impl RngCore) -> Vec<f64> {
    let x: Vec<f64> = (0..d).map(|_| rng::standard_normal(g)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = r * rng::uniform(g).powf(1.0 / d as f64);
    x.iter().map(|v| v / norm * radius).collect()
}

#[test]
fn projection_entries_are_standard_normal() {
    let w = sample_projection(1, 100_000, 3).unwrap();
    let xs = w.weights().data();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn features_are_positive() {
    let proj = sample_projection(3, 64, 5).unwrap();
    for x in [[0.0, 0.0, 0.0], [4.0, -3.0, 2.0], [-10.0, 0.5, 7.0]] {
        assert!(prf_map(&x, &proj).unwrap().iter().all(|&v| v > 0.0));
    }
}

#[test]
fn zero_inputs_estimate_exactly_one() {
    let proj = sample_projection(2, 97, 0).unwrap();
    let est = softmax_kernel_estimate(&[0.0, 0.0], &[0.0, 0.0], &proj).unwrap();
    assert!((est - 1.0).abs() < 1e-12, "{est}");
}

#[test]
fn estimator_mean_over_projections() {
    let (x, y) = ([1.0, 0.0], [0.0, 1.0]);
    let draws: Vec<f64> = (0..200)
        .map(|s| softmax_kernel_estimate(&x, &y, &sample_projection(2, 1024, s).unwrap()).unwrap())
        .collect();
    let (mean, se) = mean_and_stderr(&draws);
    assert!(
        (mean - 1.0).abs() < 3.0 * se,
        "mean {mean}, standard error {se}"
    );

    let wide: Vec<f64> = (0..50)
        .map(|s| {
            softmax_kernel_estimate(&x, &y, &sample_projection(2, 4096, 1000 + s).unwrap()).unwrap()
        })
        .collect();
    let (mean, _) = mean_and_stderr(&wide);
    assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
}

#[test]
fn error_shrinks_with_feature_count() {
    let (x, y) = ([1.0, 0.0], [0.0, 1.0]);
    let err = |m: usize| {
        median(
            (0..100)
                .map(|s| {
                    let p = sample_projection(2, m, rng::derive_seed(s, &[m as u64])).unwrap();
                    (softmax_kernel_estimate(&x, &y, &p).unwrap() - 1.0).abs()
                })
                .collect(),
        )
    };
    let (small, large) = (err(64), err(4096));
    assert!(large < small, "m=4096 {large} vs m=64 {small}");
}

#[test]
fn bound_examples() {
    let unit = ErrorBoundParams {
        r: 1.0,
        tau: 1.0,
        m: 6f64.exp(),
        eps: 1.0,
    };
    assert!((theoretical_error_bound(&unit) - 1.0).abs() < 1e-12);
    let p = ErrorBoundParams::new(1.0, 0.5, 100.0, 0.1).unwrap();
    let q = ErrorBoundParams { m: 400.0, ..p };
    let ratio = theoretical_error_bound(&p) / theoretical_error_bound(&q);
    assert!((ratio - 2.0).abs() < 1e-12);
}

#[test]
fn error_quantile_stays_under_scaled_bound() {
    let (r, d, eps, trials) = (1.0, 4, 0.1, 10_000u64);
    for (tau, m) in [
        (1.0f64, 64usize),
        (1.0, 1024),
        (0.5, 64),
        (0.5, 1024),
        (2.0, 256),
    ] {
        let mut g = rng::rng(rng::derive_seed(2, &[tau.to_bits(), m as u64]));
        let s = 1.0 / f64::sqrt(tau);
        let errors: Vec<f64> = (0..trials)
            .map(|t| {
                let x = in_ball(r, d, &mut g);
                let y = in_ball(r, d, &mut g);
                let exact = (x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / tau).exp();
                let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
                let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
                let p = sample_projection(d, m, rng::derive_seed(2, &[t, m as u64])).unwrap();
                (softmax_kernel_estimate(&xs, &ys, &p).unwrap() - exact).abs()
            })
            .collect();
        let mut sorted = errors;
        sorted.sort_by(f64::total_cmp);
        let quantile = sorted[((1.0 - eps) * trials as f64) as usize];
        let bound = theoretical_error_bound(&ErrorBoundParams::new(r, tau, m as f64, eps).unwrap());
        assert!(
            quantile < BOUND_CONSTANT * bound,
            "tau {tau}, m {m}: quantile {quantile} vs {BOUND_CONSTANT} x {bound}"
        );
    }
}

#[test]
fn sweep_trends_in_m_and_tau() {
    let table = theorem_sweep(&TheoremSweepConfig {
        taus: vec![0.1, 0.25, 1.0],
        ms: vec![64, 256, 1024, 4096],
        trials: 200,
        ..TheoremSweepConfig::default()
    })
    .unwrap();
    let at = |tau, m| table.error(tau, m).unwrap();
    assert!(at(0.25, 4096) < at(0.25, 256) && at(0.25, 256) < at(0.25, 64));
    assert!(at(0.1, 1024) > at(1.0, 1024));
}

#[test]
fn sweep_at_zero_radius_is_exact() {
    let table = theorem_sweep(&TheoremSweepConfig {
        r: 0.0,
        taus: vec![0.5],
        ms: vec![64, 256],
        trials: 10,
        ..TheoremSweepConfig::default()
    })
    .unwrap();
    assert!(table.rows.iter().all(|row| row.median_error == 0.0));
}

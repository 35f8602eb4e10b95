//! Argmax of kernelized Gumbel weights against the exact softmax.

use nodeformer::bench::{gumbel_convergence_sweep, ConvergenceConfig, ConvergenceProblem};
use nodeformer::gumbel::total_variation;
use nodeformer::verify::five_way_problem;

#[test]
fn uniform_logits_stay_uniform_at_any_temperature() {
    let p = ConvergenceProblem::anti_aligned(0.6, &[0.5; 5], 4).unwrap();
    assert!(p.exact().iter().all(|&x| (x - 0.2).abs() < 1e-15));
    let table = gumbel_convergence_sweep(
        &p,
        &ConvergenceConfig {
            taus: vec![0.05, 0.25, 1.0, 4.0],
            m: 64,
            trials: 20_000,
            projections: 50,
            seed: 1,
        },
    )
    .unwrap();
    for row in &table.rows {
        assert!(
            row.tv_distance < 0.02,
            "tau {}: TV {}",
            row.tau,
            row.tv_distance
        );
    }
}

#[test]
fn few_features_converge_worse() {
    let p = five_way_problem();
    let median_tv = |m: usize| {
        let mut tvs: Vec<f64> = (0..10)
            .map(|seed| {
                let cfg = ConvergenceConfig {
                    taus: vec![0.05],
                    m,
                    trials: 50_000,
                    projections: 500,
                    seed,
                };
                gumbel_convergence_sweep(&p, &cfg).unwrap().rows[0].tv_distance
            })
            .collect();
        tvs.sort_by(f64::total_cmp);
        0.5 * (tvs[4] + tvs[5])
    };
    let (small, large) = (median_tv(16), median_tv(4096));
    assert!(small > large, "m=16 {small} vs m=4096 {large}");
}

#[test]
fn total_variation_is_half_l1() {
    assert_eq!(total_variation(&[0.5, 0.5], &[1.0, 0.0]), 0.5);
    assert_eq!(total_variation(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]), 0.0);
}

//! Gumbel(0, 1) draws and the Gumbel-Softmax relaxation.

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        Ok(Temperature(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `−log(−log(u))`.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Gumbel variates laid out `samples x nodes`, one row per sample index.
///
/// Draws generated by [`GumbelDraws::for_nodes`] are keyed by node identity:
/// the variate for node `id` in sample `k` is the `id`-th output word pair of
/// the ChaCha8 stream seeded by `derive_seed(seed, [k])`, so relabeling or
/// batching nodes never changes any node's noise.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelDraws {
    samples: usize,
    nodes: usize,
    values: Vec<f64>,
    seed: u64,
}

impl GumbelDraws {
    pub fn for_nodes(seed: u64, samples: usize, node_ids: &[usize]) -> Self {
        let mut values = Vec::with_capacity(samples * node_ids.len());
        for k in 0..samples {
            let mut stream = rng::rng(rng::derive_seed(seed, &[k as u64]));
            // each draw consumes two 32-bit words; skip the seek on runs
            let mut next = usize::MAX;
            for &id in node_ids {
                if id != next {
                    stream.set_word_pos(2 * id as u128);
                }
                values.push(gumbel_from_uniform(rng::open_uniform(&mut stream)));
                next = id + 1;
            }
        }
        GumbelDraws {
            samples,
            nodes: node_ids.len(),
            values,
            seed,
        }
    }

    /// Explicit draws, e.g. to share noise between two code paths.
    pub fn from_values(samples: usize, nodes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != samples * nodes {
            return Err(Error::invalid(format!(
                "expected {} Gumbel values, got {}",
                samples * nodes,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gumbel draws".into()));
        }
        Ok(GumbelDraws {
            samples,
            nodes,
            values,
            seed: 0,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Draws of sample `k`, one per node.
    pub fn sample(&self, k: usize) -> &[f64] {
        &self.values[k * self.nodes..(k + 1) * self.nodes]
    }
}

/// `count` i.i.d. Gumbel(0, 1) variates (a single sample over nodes `0..count`).
pub fn sample_gumbel(count: usize, seed: u64) -> Result<GumbelDraws> {
    if count == 0 {
        return Err(Error::invalid("sample_gumbel needs count >= 1"));
    }
    let ids: Vec<usize> = (0..count).collect();
    Ok(GumbelDraws::for_nodes(seed, 1, &ids))
}

/// `softmax((logits + g) / τ)`, max-shifted.
pub fn gumbel_softmax_weights(logits: &[f64], g: &[f64], tau: Temperature) -> Result<Vec<f64>> {
    if logits.len() != g.len() {
        return Err(Error::invalid(format!(
            "{} logits but {} Gumbel draws",
            logits.len(),
            g.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("empty logits"));
    }
    if logits.iter().chain(g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gumbel_softmax_weights input".into()));
    }
    let scaled: Vec<f64> = logits
        .iter()
        .zip(g)
        .map(|(l, gv)| (l + gv) / tau.get())
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Empirical frequency with which each index attains `max(logit + g)` over
/// `trials` independent Gumbel vectors. Ties go to the lower index.
pub fn argmax_distribution_check(
    logits: &[f64],
    tau: Temperature,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 || logits.is_empty() {
        return Err(Error::invalid("need at least one trial and one category"));
    }
    let mut counts = vec![0usize; logits.len()];
    let mut stream = rng::rng(seed);
    for _ in 0..trials {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, l) in logits.iter().enumerate() {
            let val = (l + gumbel_from_uniform(rng::open_uniform(&mut stream))) / tau.get();
            if val > best_val {
                best_val = val;
                best = i;
            }
        }
        counts[best] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / trials as f64)
        .collect())
}

/// Half the L1 distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let d = sample_gumbel(1_000_000, 42).unwrap();
        let mean = d.values().iter().sum::<f64>() / d.values().len() as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "{mean}");
        assert!(d.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inverse_transform_fixed_point() {
        assert!(gumbel_from_uniform((-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn draws_deterministic_and_keyed_by_node() {
        assert_eq!(sample_gumbel(50, 3).unwrap(), sample_gumbel(50, 3).unwrap());
        let all = GumbelDraws::for_nodes(9, 2, &[0, 1, 2, 3, 4]);
        let some = GumbelDraws::for_nodes(9, 2, &[3, 1]);
        for k in 0..2 {
            assert_eq!(some.sample(k)[0], all.sample(k)[3]);
            assert_eq!(some.sample(k)[1], all.sample(k)[1]);
        }
        assert_ne!(all.sample(0), all.sample(1));
    }

    #[test]
    fn zero_count_rejected() {
        assert!(sample_gumbel(0, 1).is_err());
        assert!(Temperature::new(0.0).is_err());
    }

    #[test]
    fn weights_edge_cases() {
        assert_eq!(
            gumbel_softmax_weights(&[3.0], &[0.2], t(0.5)).unwrap(),
            vec![1.0]
        );
        let w = gumbel_softmax_weights(&[1.0; 4], &[0.3; 4], t(0.7)).unwrap();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(gumbel_softmax_weights(&[f64::NAN, 0.0], &[0.0, 0.0], t(1.0)).is_err());
        assert!(gumbel_softmax_weights(&[0.0, 0.0], &[0.0], t(1.0)).is_err());
    }

    #[test]
    fn low_temperature_is_near_one_hot() {
        let g = sample_gumbel(6, 5).unwrap();
        let logits = [0.3, -1.2, 0.8, 0.1, 2.0, -0.4];
        let w = gumbel_softmax_weights(&logits, g.values(), t(0.01)).unwrap();
        assert!(w.iter().copied().fold(0.0, f64::max) > 0.999);
    }

    #[test]
    fn argmax_frequencies() {
        let f = argmax_distribution_check(&[0.0, 0.0], t(1.0), 100_000, 1).unwrap();
        assert!(
            (f[0] - 0.5).abs() < 0.01 && (f[1] - 0.5).abs() < 0.01,
            "{f:?}"
        );
        let f = argmax_distribution_check(&[2f64.ln(), 0.0], t(1.0), 100_000, 2).unwrap();
        assert!((f[0] - 2.0 / 3.0).abs() < 0.01, "{f:?}");
        assert_eq!(
            argmax_distribution_check(&[0.4], t(1.0), 10, 3).unwrap(),
            vec![1.0]
        );
    }
}

//! Property suite: oracle equivalence, gradient checks and reduced-scale
//! approximation sweeps, each reported as a named pass/fail check.

use std::fmt::Write as _;

use crate::attention::{
    kernelized_attention, kernelized_gumbel_attention_with_draws, Adjacency, RbActivation,
};
use crate::autodiff::Tape;
use crate::bench::{
    gumbel_convergence_sweep, theorem_sweep, ConvergenceConfig, ConvergenceProblem,
    TheoremSweepConfig,
};
use crate::data::Labels;
use crate::error::{Error, Result};
use crate::features::ProjectionMatrix;
use crate::gumbel::{GumbelDraws, Temperature};
use crate::losses::{total_loss, EdgePrior, SupervisedKind};
use crate::model::{
    edge_probability, network_forward, ForwardOptions, Model, ModelDims, Noise, SampleConfig,
};
use crate::oracle::{dense_edge_probability, dense_gumbel_attention, dense_softmax_attention};
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

/// Names accepted by [`VerifyOptions::only`].
pub const CHECKS: [&str; 6] = [
    "oracle",
    "gumbel-oracle",
    "edge-probability",
    "gradients",
    "theorem1",
    "theorem2",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyOptions {
    /// Run only these checks; all when empty.
    pub only: Vec<String>,
    /// Added to one entry of every dense oracle output, to prove the suite
    /// catches a broken reference.
    pub oracle_fault: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<18} {}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            );
        }
        s
    }
}

/// `n x d` Gaussian rows normalized to unit length.
pub fn unit_rows(n: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let mut t = Tensor::zeros(n, d);
    for i in 0..n {
        let row = t.row_mut(i);
        for x in row.iter_mut() {
            *x = rng::standard_normal(&mut r);
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    t
}

/// Fixed queries, keys and values for the oracle comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleProblem {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

impl OracleProblem {
    pub fn unit(n: usize, d: usize, seed: u64) -> Self {
        OracleProblem {
            q: unit_rows(n, d, derive_seed(seed, &[0])),
            k: unit_rows(n, d, derive_seed(seed, &[1])),
            v: unit_rows(n, d, derive_seed(seed, &[2])),
        }
    }
}

fn inject(mut t: Tensor, fault: f64) -> Tensor {
    if fault != 0.0 {
        let x = t.get(0, 0);
        t.set(0, 0, x + fault);
    }
    t
}

/// Max absolute deviation of kernelized softmax attention from the dense
/// oracle, one entry per projection seed `0..seeds`.
pub fn softmax_oracle_deviations(
    p: &OracleProblem,
    m: usize,
    seeds: u64,
    fault: f64,
) -> Result<Vec<f64>> {
    let dense = inject(dense_softmax_attention(&p.q, &p.k, &p.v)?, fault);
    (0..seeds)
        .map(|s| {
            let proj = ProjectionMatrix::sample(
                p.q.cols(),
                m,
                derive_seed(s, &[rng::stream::PROJECTION]),
            )?;
            Ok(kernelized_attention(&p.q, &p.k, &p.v, &proj)?.max_abs_diff(&dense))
        })
        .collect()
}

/// As [`softmax_oracle_deviations`] for the Gumbel operator, with the same
/// `samples x N` draws fed to both sides.
pub fn gumbel_oracle_deviations(
    p: &OracleProblem,
    m: usize,
    tau: f64,
    samples: usize,
    seeds: u64,
    fault: f64,
) -> Result<Vec<f64>> {
    let ids: Vec<usize> = (0..p.k.rows()).collect();
    (0..seeds)
        .map(|s| {
            let draws =
                GumbelDraws::for_nodes(derive_seed(s, &[rng::stream::GUMBEL]), samples, &ids);
            let dense = inject(
                dense_gumbel_attention(&p.q, &p.k, &p.v, &draws, Temperature::new(tau)?)?,
                fault,
            );
            let proj = ProjectionMatrix::sample(
                p.q.cols(),
                m,
                derive_seed(s, &[rng::stream::PROJECTION]),
            )?;
            Ok(
                kernelized_gumbel_attention_with_draws(&p.q, &p.k, &p.v, &proj, tau, &draws)?
                    .max_abs_diff(&dense),
            )
        })
        .collect()
}

/// Setup for a finite-difference check of the full training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckConfig {
    pub nodes: usize,
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: usize,
    pub heads: usize,
    pub m: usize,
    pub tau: f64,
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            nodes: 12,
            input: 5,
            hidden: 8,
            classes: 3,
            layers: 2,
            heads: 1,
            m: 16,
            tau: 0.25,
            samples: 2,
            step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: (String, usize),
}

/// `|a − b| / max(|a|, |b|, floor)`: relative error with an absolute floor for
/// coordinates whose gradient is near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Absolute floor in [`relative_error`] for gradient checks.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Every parameter of a small model with relational bias (order 2), edge
/// loss and frozen Gumbel noise, against central finite differences of the
/// total loss.
pub fn gradient_check(cfg: &GradientCheckConfig) -> Result<GradientCheck> {
    let mut r = rng::rng(derive_seed(cfg.seed, &[rng::stream::DATA]));
    let n = cfg.nodes;
    if n < 2 {
        return Err(Error::invalid("gradient check needs at least two nodes"));
    }
    let x = Tensor::from_vec(
        n,
        cfg.input,
        (0..n * cfg.input)
            .map(|_| rng::standard_normal(&mut r))
            .collect(),
    )?;
    let labels = Labels::Single((0..n).map(|i| i % cfg.classes).collect());
    let mut edges = Vec::new();
    for u in 0..n {
        edges.push((u, (u + 1) % n));
        edges.push(((u + 1) % n, u));
    }
    edges.push((0, n / 2));
    let adjacency = Adjacency::new(n, &edges, 2)?;
    let prior = EdgePrior::new(n, &edges)?;
    let mask: Vec<usize> = (0..n).step_by(2).collect();
    let sc = SampleConfig::new(cfg.samples, cfg.tau, cfg.m)?;
    let dims = ModelDims {
        input: cfg.input,
        hidden: cfg.hidden,
        classes: cfg.classes,
        layers: cfg.layers,
        heads: cfg.heads,
    };
    let mut model = Model::init(dims, cfg.m, cfg.seed)?;
    for (i, l) in model.params.layers.iter_mut().enumerate() {
        l.bias = Tensor::scalar(0.3 - 0.2 * i as f64);
    }
    let ids: Vec<usize> = (0..n).collect();
    let opts = ForwardOptions {
        sample: &sc,
        adjacency: Some(&adjacency),
        activation: RbActivation::Sigmoid,
        noise: Noise::Seeded(derive_seed(cfg.seed, &[rng::stream::GUMBEL])),
        node_ids: &ids,
    };
    let kind = SupervisedKind::CrossEntropy;
    let loss_at = |model: &Model| -> Result<f64> {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let state = network_forward(&mut tape, xv, &p, &model.projections, &opts)?;
        let (loss, _) = total_loss(&mut tape, &state, &labels, &mask, kind, Some(&prior), 1.0)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let state = network_forward(&mut tape, xv, &p, &model.projections, &opts)?;
    let (loss, _) = total_loss(&mut tape, &state, &labels, &mask, kind, Some(&prior), 1.0)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = p
        .values()
        .iter()
        .map(|&&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v).0, tape.shape(v).1))
        })
        .collect();

    let names = model.params.names();
    let mut out = GradientCheck {
        coordinates: 0,
        max_rel_error: 0.0,
        worst: (String::new(), 0),
    };
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = model.params.values()[t].data()[i];
            model.params.values_mut()[t].data_mut()[i] = orig + cfg.step;
            let up = loss_at(&model)?;
            model.params.values_mut()[t].data_mut()[i] = orig - cfg.step;
            let down = loss_at(&model)?;
            model.params.values_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = relative_error(grad.data()[i], numeric, GRADIENT_FLOOR);
            out.coordinates += 1;
            if err > out.max_rel_error || out.worst.0.is_empty() {
                out.max_rel_error = out.max_rel_error.max(err);
                out.worst = (names[t].clone(), i);
            }
        }
    }
    Ok(out)
}

/// Max deviation of the cached `π` of a deterministic one-layer pass from
/// the dense softmax over `τ`-scaled projected queries and keys, and the
/// largest gap of `Σ_v π_uv` from 1.
pub fn edge_probability_check(n: usize, m: usize, seed: u64) -> Result<(f64, f64)> {
    let tau = 0.5;
    let d = 4;
    let sc = SampleConfig::softmax(tau, m)?;
    let dims = ModelDims {
        input: d,
        hidden: d,
        classes: 2,
        layers: 1,
        heads: 1,
    };
    let model = Model::init(dims, m, seed)?;
    let x = unit_rows(n, d, derive_seed(seed, &[rng::stream::DATA]));
    let ids: Vec<usize> = (0..n).collect();
    let opts = ForwardOptions {
        sample: &sc,
        adjacency: None,
        activation: RbActivation::Sigmoid,
        noise: Noise::Off,
        node_ids: &ids,
    };
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let xv = tape.constant(x);
    let state = network_forward(&mut tape, xv, &p, &model.projections, &opts)?;
    let z0 = {
        let h = tape.value(p.w_in).clone();
        let pre = tape.value(xv).matmul(&h)?;
        let b = tape.value(p.b_in).clone();
        let mut z = pre;
        for i in 0..z.rows() {
            for (zv, bv) in z.row_mut(i).iter_mut().zip(b.data()) {
                let a = *zv + bv;
                *zv = if a > 0.0 { a } else { a.exp_m1() };
            }
        }
        z
    };
    let head = &p.layers[0].heads[0];
    let s = 1.0 / tau.sqrt();
    let q = z0.matmul(tape.value(head.wq))?.scale(s);
    let k = z0.matmul(tape.value(head.wk))?.scale(s);
    let dense = dense_edge_probability(&q, &k)?;
    let mut max_dev = 0.0f64;
    let mut max_sum_gap = 0.0f64;
    for u in 0..n {
        let mut row_sum = 0.0;
        for v in 0..n {
            let pi = edge_probability(&tape, &state, 0, u, v)?;
            row_sum += pi;
            max_dev = max_dev.max((pi - dense.get(u, v)).abs());
        }
        max_sum_gap = max_sum_gap.max((row_sum - 1.0).abs());
    }
    Ok((max_dev, max_sum_gap))
}

/// The anti-aligned five-way problem used for convergence checks.
pub fn five_way_problem() -> ConvergenceProblem {
    ConvergenceProblem::anti_aligned(0.6, &[0.0, 0.3, 0.6, 0.9, 1.2], 4).expect("valid problem")
}

fn selected(opts: &VerifyOptions, name: &str) -> bool {
    opts.only.is_empty() || opts.only.iter().any(|o| o == name)
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult {
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs the selected checks at reduced scale.
pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    if let Some(bad) = opts.only.iter().find(|o| !CHECKS.contains(&o.as_str())) {
        return Err(Error::invalid(format!(
            "unknown check `{bad}`; expected one of {}",
            CHECKS.join(", ")
        )));
    }
    let mut checks = Vec::new();
    let problem = OracleProblem::unit(32, 4, 0);
    if selected(opts, "oracle") {
        checks.push(check(
            "oracle",
            softmax_oracle_deviations(&problem, 4096, 5, opts.oracle_fault).map(|d| {
                let max = d.iter().copied().fold(0.0, f64::max);
                (max < 0.05, format!("max deviation {max:.4} (limit 0.05)"))
            }),
        ));
    }
    if selected(opts, "gumbel-oracle") {
        checks.push(check(
            "gumbel-oracle",
            gumbel_oracle_deviations(&problem, 4096, 1.0, 1, 5, opts.oracle_fault).map(|d| {
                let max = d.iter().copied().fold(0.0, f64::max);
                (max < 0.05, format!("max deviation {max:.4} (limit 0.05)"))
            }),
        ));
    }
    if selected(opts, "edge-probability") {
        checks.push(check(
            "edge-probability",
            edge_probability_check(16, 4096, 0).map(|(dev, gap)| {
                (
                    dev < 0.05 && gap < 1e-9,
                    format!(
                        "max deviation {dev:.4} (limit 0.05), row-sum gap {gap:.1e} (limit 1e-9)"
                    ),
                )
            }),
        ));
    }
    if selected(opts, "gradients") {
        checks.push(check(
            "gradients",
            gradient_check(&GradientCheckConfig::default()).map(|g| {
                (
                    g.max_rel_error < 1e-3,
                    format!(
                        "{} coordinates, max relative error {:.2e} (limit 1e-3, worst {}[{}])",
                        g.coordinates, g.max_rel_error, g.worst.0, g.worst.1
                    ),
                )
            }),
        ));
    }
    if selected(opts, "theorem1") {
        let cfg = TheoremSweepConfig {
            taus: vec![0.5],
            ..TheoremSweepConfig::default()
        };
        checks.push(check(
            "theorem1",
            theorem_sweep(&cfg).and_then(|t| {
                let slope = t.m_slope(0.5)?;
                Ok((
                    (slope + 0.5).abs() <= 0.15,
                    format!("error-vs-m slope {slope:.3} (band -0.5 ± 0.15)"),
                ))
            }),
        ));
    }
    if selected(opts, "theorem2") {
        let cfg = ConvergenceConfig {
            taus: vec![0.05],
            trials: 20_000,
            projections: 200,
            ..ConvergenceConfig::default()
        };
        checks.push(check(
            "theorem2",
            gumbel_convergence_sweep(&five_way_problem(), &cfg).map(|t| {
                let tv = t.rows[0].tv_distance;
                (tv < 0.05, format!("total variation {tv:.4} (limit 0.05)"))
            }),
        ));
    }
    Ok(VerifyReport { checks })
}

//! Adam, the epoch loop, evaluation metrics and best-validation selection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attention::{Adjacency, RbActivation};
use crate::autodiff::Tape;
use crate::data::{minibatch_partition, random_split, Graph, Labels, SplitTag};
use crate::error::{Error, Result};
use crate::losses::{total_loss, EdgePrior, SupervisedKind};
use crate::model::{
    edge_probabilities_var, network_forward, ForwardOptions, ForwardState, Model, ModelDims, Noise,
    SampleConfig,
};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    RocAuc,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "roc_auc" => Ok(Metric::RocAuc),
            _ => Err(Error::invalid(format!(
                "unknown metric `{s}` (expected accuracy or roc_auc)"
            ))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
        })
    }
}

/// Every hyperparameter of a run. The key=value names are the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Random-feature dimension.
    pub m: usize,
    pub tau: f64,
    /// Gumbel samples per forward pass.
    pub k: usize,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Nodes per mini-batch; at least `N` means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub use_relational_bias: bool,
    pub rb_order: usize,
    pub rb_activation: RbActivation,
    pub use_edge_loss: bool,
    pub deterministic: bool,
    pub metric: Metric,
    /// Clip the global gradient norm at 5.
    pub clip_grad: bool,
    pub resample_projections_per_step: bool,
    /// Evaluate with `K` Gumbel samples instead of the noise-free path.
    pub sampled_inference: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 2,
            hidden: 32,
            heads: 1,
            m: 30,
            tau: 0.25,
            k: 5,
            lambda: 1.0,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            batch_size: 100_000,
            seed: 0,
            use_relational_bias: true,
            rb_order: 2,
            rb_activation: RbActivation::Sigmoid,
            use_edge_loss: true,
            deterministic: false,
            metric: Metric::Accuracy,
            clip_grad: false,
            resample_projections_per_step: false,
            sampled_inference: false,
        }
    }
}

pub const GRAD_CLIP_NORM: f64 = 5.0;

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::invalid(format!(
            "{key}: expected true/false, got `{v}`"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse `{v}`")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 21] = [
        "layers",
        "hidden",
        "heads",
        "m",
        "tau",
        "k",
        "lambda",
        "lr",
        "weight_decay",
        "epochs",
        "batch_size",
        "seed",
        "use_relational_bias",
        "rb_order",
        "rb_activation",
        "use_edge_loss",
        "deterministic",
        "metric",
        "clip_grad",
        "resample_projections_per_step",
        "sampled_inference",
    ];

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "layers" => self.layers = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "m" => self.m = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "use_relational_bias" => self.use_relational_bias = parse_bool(key, v)?,
            "rb_order" => self.rb_order = parse_num(key, v)?,
            "rb_activation" => self.rb_activation = v.parse()?,
            "use_edge_loss" => self.use_edge_loss = parse_bool(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "metric" => self.metric = v.parse()?,
            "clip_grad" => self.clip_grad = parse_bool(key, v)?,
            "resample_projections_per_step" => {
                self.resample_projections_per_step = parse_bool(key, v)?
            }
            "sampled_inference" => self.sampled_inference = parse_bool(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "layers" => self.layers.to_string(),
            "hidden" => self.hidden.to_string(),
            "heads" => self.heads.to_string(),
            "m" => self.m.to_string(),
            "tau" => self.tau.to_string(),
            "k" => self.k.to_string(),
            "lambda" => self.lambda.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "use_relational_bias" => self.use_relational_bias.to_string(),
            "rb_order" => self.rb_order.to_string(),
            "rb_activation" => self.rb_activation.to_string(),
            "use_edge_loss" => self.use_edge_loss.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "metric" => self.metric.to_string(),
            "clip_grad" => self.clip_grad.to_string(),
            "resample_projections_per_step" => self.resample_projections_per_step.to_string(),
            "sampled_inference" => self.sampled_inference.to_string(),
            _ => return None,
        })
    }

    /// All fields as `key=value` lines in a fixed order.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.hidden == 0 || self.heads == 0 || self.m == 0 || self.k == 0 {
            return bad("hidden, heads, m and k must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.lambda >= 0.0) {
            return bad("weight_decay and lambda must be nonnegative".into());
        }
        if !(1..=2).contains(&self.rb_order) {
            return bad(format!("rb_order must be 1 or 2, got {}", self.rb_order));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        Ok(())
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            samples: self.k,
            tau: self.tau,
            features: self.m,
            deterministic: self.deterministic,
        }
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::invalid(format!(
                "line {}: expected key=value, got `{line}`",
                i + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// First and second moments for each parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One Adam update with bias correction. Weight decay is added to the
/// gradient (`g + wd·θ`).
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::invalid(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj + weight_decay * *w;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_auc needs both classes present"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() || labels.is_empty() {
        return Err(Error::invalid(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Metric of `logits` on the nodes `idx`.
pub fn score(logits: &Tensor, labels: &Labels, idx: &[usize], metric: Metric) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::invalid("metric over an empty split"));
    }
    let rows = logits.gather_rows(idx)?;
    match (metric, labels) {
        (Metric::Accuracy, Labels::Single(y)) => {
            let y: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            accuracy(&rows, &y)
        }
        (Metric::Accuracy, Labels::Multi(_)) => Err(Error::invalid(
            "accuracy is undefined for multi-label targets",
        )),
        (Metric::RocAuc, Labels::Single(y)) => {
            if rows.cols() != 2 {
                return Err(Error::invalid("roc_auc needs two classes"));
            }
            let scores: Vec<f64> = (0..rows.rows()).map(|i| rows.get(i, 1)).collect();
            let labels: Vec<bool> = idx.iter().map(|&i| y[i] == 1).collect();
            roc_auc(&scores, &labels)
        }
        (Metric::RocAuc, Labels::Multi(t)) => {
            let mut total = 0.0;
            let mut tasks = 0;
            for j in 0..t.cols() {
                let labels: Vec<bool> = idx.iter().map(|&i| t.get(i, j) > 0.5).collect();
                if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                    continue;
                }
                let scores: Vec<f64> = (0..rows.rows()).map(|i| rows.get(i, j)).collect();
                total += roc_auc(&scores, &labels)?;
                tasks += 1;
            }
            if tasks == 0 {
                return Err(Error::invalid(
                    "roc_auc: no task has both classes in this split",
                ));
            }
            Ok(total / tasks as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_sup: f64,
    pub loss_edge: f64,
    pub valid_metric: f64,
    pub test_metric: f64,
    /// Mean noise-free `π` over observed arcs after this epoch's updates.
    pub edge_pi: Option<f64>,
}

impl EpochRecord {
    pub fn metrics_line(&self) -> String {
        format!(
            "epoch={} loss_total={} loss_sup={} loss_edge={} valid_metric={} test_metric={}",
            self.epoch,
            self.loss_total,
            self.loss_sup,
            self.loss_edge,
            self.valid_metric,
            self.test_metric
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid: Option<f64>,
    pub best_test: Option<f64>,
    /// Mean `π` over observed arcs before any update.
    pub initial_edge_pi: Option<f64>,
}

impl RunRecord {
    pub fn final_edge_pi(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.edge_pi)
    }
}

/// The trained model with its configuration, as written to `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: TrainConfig,
    pub model: Model,
}

/// Graph-level structures shared by every epoch of a run.
struct Prepared {
    adjacency: Option<Adjacency>,
    prior: Option<EdgePrior>,
    kind: SupervisedKind,
    ids: Vec<usize>,
}

fn prepare(graph: &Graph, cfg: &TrainConfig) -> Result<Prepared> {
    let n = graph.nodes();
    let adjacency = if cfg.use_relational_bias {
        Some(Adjacency::new(n, &graph.edges, cfg.rb_order)?)
    } else {
        None
    };
    let prior = if graph.edges.is_empty() {
        None
    } else {
        Some(EdgePrior::new(n, &graph.edges)?)
    };
    Ok(Prepared {
        adjacency,
        prior,
        kind: SupervisedKind::for_labels(&graph.labels, graph.num_classes),
        ids: (0..n).collect(),
    })
}

fn dims_for(graph: &Graph, cfg: &TrainConfig) -> ModelDims {
    ModelDims {
        input: graph.feature_dim(),
        hidden: cfg.hidden,
        classes: graph.num_classes,
        layers: cfg.layers,
        heads: cfg.heads,
    }
}

/// Mean head-averaged `π` over `arcs`, averaged over layers.
fn mean_edge_pi(
    tape: &mut Tape,
    state: &ForwardState,
    arcs: &[(usize, usize)],
) -> Result<Option<f64>> {
    if arcs.is_empty() || state.heads.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for l in 0..state.heads.len() {
        let pi = edge_probabilities_var(tape, state, l, arcs)?;
        total += tape.value(pi).sum() / arcs.len() as f64;
    }
    Ok(Some(total / state.heads.len() as f64))
}

/// Full-graph inference: logits and mean observed-edge `π`.
fn infer(
    model: &Model,
    graph: &Graph,
    cfg: &TrainConfig,
    prep: &Prepared,
) -> Result<(Tensor, Option<f64>)> {
    let sc = cfg.sample_config();
    let noise = if cfg.sampled_inference {
        Noise::Seeded(rng::derive_seed(cfg.seed, &[stream::GUMBEL, u64::MAX]))
    } else {
        Noise::Off
    };
    let opts = ForwardOptions {
        sample: &sc,
        adjacency: prep.adjacency.as_ref(),
        activation: cfg.rb_activation,
        noise,
        node_ids: &prep.ids,
    };
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, false);
    let x = tape.constant(graph.features.clone());
    let state = network_forward(&mut tape, x, &params, &model.projections, &opts)?;
    let pi = match &prep.prior {
        Some(p) => mean_edge_pi(&mut tape, &state, p.arcs())?,
        None => None,
    };
    Ok((tape.value(state.logits).clone(), pi))
}

/// Metric of a trained model on the nodes tagged `split`.
pub fn evaluate(
    model: &Model,
    graph: &Graph,
    cfg: &TrainConfig,
    split: SplitTag,
    metric: Metric,
) -> Result<f64> {
    let idx = graph.indices(split);
    if idx.is_empty() {
        return Err(Error::invalid(format!(
            "split `{}` has no nodes",
            split.as_str()
        )));
    }
    let prep = prepare(graph, cfg)?;
    let (logits, _) = infer(model, graph, cfg, &prep)?;
    score(&logits, &graph.labels, &idx, metric)
}

/// The graph's split, or a seeded 50/25/25 split when it has no train nodes.
pub fn resolve_split(graph: &Graph, seed: u64) -> Result<Vec<SplitTag>> {
    if graph.split.contains(&SplitTag::Train) {
        Ok(graph.split.clone())
    } else {
        random_split(graph.nodes(), (0.5, 0.25, 0.25), seed)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub record: RunRecord,
}

pub fn train(graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(graph, cfg, |_| {})
}

/// Trains and calls `on_epoch` after every epoch. Returns the parameters of
/// the best-validation epoch (earliest on ties).
pub fn train_with(
    graph: &Graph,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let resplit;
    let graph = if graph.split.contains(&SplitTag::Train) {
        graph
    } else {
        let mut g = graph.clone();
        g.split = resolve_split(graph, cfg.seed)?;
        resplit = g;
        &resplit
    };
    let train_idx = graph.indices(SplitTag::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("graph has no training nodes"));
    }
    let valid_idx = graph.indices(SplitTag::Valid);
    let test_idx = graph.indices(SplitTag::Test);
    let n = graph.nodes();
    let prep = prepare(graph, cfg)?;
    let mut model = Model::init(dims_for(graph, cfg), cfg.m, cfg.seed)?;
    let names = model.params.names();
    let shapes: Vec<(usize, usize)> = model.params.values().iter().map(|t| t.shape()).collect();
    let mut adam = AdamState::new(&shapes);
    let sc = cfg.sample_config();
    let is_train: Vec<bool> = graph.split.iter().map(|&t| t == SplitTag::Train).collect();

    let mut record = RunRecord::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, record });
    }
    record.initial_edge_pi = infer(&model, graph, cfg, &prep)?.1;
    let mut best_model = model.clone();
    let eval = |idx: &[usize], logits: &Tensor| -> Result<f64> {
        if idx.is_empty() {
            Ok(f64::NAN)
        } else {
            score(logits, &graph.labels, idx, cfg.metric)
        }
    };

    for epoch in 1..=cfg.epochs {
        let batches = if cfg.batch_size >= n {
            vec![prep.ids.clone()]
        } else {
            minibatch_partition(
                n,
                cfg.batch_size,
                rng::derive_seed(cfg.seed, &[epoch as u64]),
            )?
            .batches
        };
        let mut sums = (0.0, 0.0, 0.0);
        let mut used = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let mask: Vec<usize> = (0..batch.len()).filter(|&i| is_train[batch[i]]).collect();
            if mask.is_empty() {
                continue;
            }
            if cfg.resample_projections_per_step {
                model.resample_projections(rng::derive_seed(
                    cfg.seed,
                    &[stream::PROJECTION, epoch as u64, b as u64],
                ))?;
            }
            let full = batch.len() == n;
            let adjacency = match &prep.adjacency {
                Some(a) if full => Some(a.clone()),
                Some(a) => Some(a.restrict(batch)?),
                None => None,
            };
            let prior = match (&prep.prior, cfg.use_edge_loss && cfg.lambda > 0.0) {
                (Some(p), true) if full => Some(p.clone()),
                (Some(p), true) => Some(p.restrict(batch)?),
                _ => None,
            };
            let labels = if full {
                graph.labels.clone()
            } else {
                graph.labels.subset(batch)?
            };
            let x = if full {
                graph.features.clone()
            } else {
                graph.features.gather_rows(batch)?
            };
            let opts = ForwardOptions {
                sample: &sc,
                adjacency: adjacency.as_ref(),
                activation: cfg.rb_activation,
                noise: Noise::Seeded(rng::derive_seed(
                    cfg.seed,
                    &[stream::GUMBEL, epoch as u64, b as u64],
                )),
                node_ids: batch,
            };
            let diverged = divergence(epoch, f64::NAN);
            let mut tape = Tape::new();
            let params = model.params.bind(&mut tape, true);
            let xv = tape.constant(x);
            let state = network_forward(&mut tape, xv, &params, &model.projections, &opts)
                .map_err(diverged)?;
            let (loss, breakdown) = total_loss(
                &mut tape,
                &state,
                &labels,
                &mask,
                prep.kind,
                prior.as_ref().filter(|p| !p.is_empty()),
                cfg.lambda,
            )
            .map_err(diverged)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: breakdown.total,
                });
            }
            tape.backward(loss).map_err(diverged)?;
            let mut grads: Vec<Tensor> = params
                .values()
                .iter()
                .map(|&&v| {
                    tape.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(tape.shape(v).0, tape.shape(v).1))
                })
                .collect();
            if cfg.clip_grad {
                let norm = grads
                    .iter()
                    .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > GRAD_CLIP_NORM {
                    let s = GRAD_CLIP_NORM / norm;
                    for g in &mut grads {
                        *g = g.scale(s);
                    }
                }
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut param_refs = model.params.values_mut();
            adam_step(
                &mut param_refs,
                &grad_refs,
                &names,
                &mut adam,
                cfg.lr,
                cfg.weight_decay,
            )
            .map_err(divergence(epoch, breakdown.total))?;
            sums.0 += breakdown.total;
            sums.1 += breakdown.supervised;
            sums.2 += breakdown.edge;
            used += 1;
        }
        let k = used.max(1) as f64;
        let (logits, edge_pi) =
            infer(&model, graph, cfg, &prep).map_err(divergence(epoch, sums.0 / k))?;
        let rec = EpochRecord {
            epoch,
            loss_total: sums.0 / k,
            loss_sup: sums.1 / k,
            loss_edge: sums.2 / k,
            valid_metric: eval(&valid_idx, &logits)?,
            test_metric: eval(&test_idx, &logits)?,
            edge_pi,
        };
        on_epoch(&rec);
        let better = match record.best_valid {
            None => true,
            Some(b) => rec.valid_metric > b || (b.is_nan() && !rec.valid_metric.is_nan()),
        };
        if better {
            record.best_epoch = Some(epoch);
            record.best_valid = Some(rec.valid_metric);
            record.best_test = Some(rec.test_metric);
            best_model = model.clone();
        }
        record.epochs.push(rec);
    }
    Ok(TrainOutcome {
        model: best_model,
        record,
    })
}

/// Maps a non-finite intermediate at `epoch` to a divergence error.
fn divergence(epoch: usize, loss: f64) -> impl Fn(Error) -> Error + Copy {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence { epoch, loss },
        other => other,
    }
}

/// Logits of the full graph on the inference path.
pub fn predict(model: &Model, graph: &Graph, cfg: &TrainConfig) -> Result<Tensor> {
    let prep = prepare(graph, cfg)?;
    Ok(infer(model, graph, cfg, &prep)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step() {
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[(1, 1)]);
        adam_step(&mut [&mut p], &[&g], &["w".into()], &mut st, 0.1, 0.0).unwrap();
        assert!((p.item() + 0.1).abs() < 1e-6, "{}", p.item());
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Tensor::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[(1, 2)]);
        adam_step(
            &mut [&mut p],
            &[&Tensor::zeros(1, 2)],
            &["w".into()],
            &mut st,
            0.1,
            0.0,
        )
        .unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_names_non_finite_gradient() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(&[(1, 1)]);
        let err = adam_step(
            &mut [&mut p],
            &[&Tensor::scalar(f64::NAN)],
            &["layer0.rb".into()],
            &mut st,
            0.1,
            0.0,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("layer0.rb"), "{err}");
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert_eq!(
            roc_auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap(),
            0.5
        );
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_null_distribution() {
        let mut r = rng::rng(5);
        let n = 100_000;
        let scores: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r)).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.01, "{auc}");
    }

    #[test]
    fn perfect_accuracy() {
        let logits = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("tau", "0.4").unwrap();
        cfg.set("use_edge_loss", "false").unwrap();
        cfg.set("metric", "roc_auc").unwrap();
        let mut back = TrainConfig::default();
        for (k, v) in parse_kv(&cfg.to_kv_string()).unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(cfg, back);
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("tau", "abc").is_err());
        assert!(parse_kv("just words").is_err());
    }
}

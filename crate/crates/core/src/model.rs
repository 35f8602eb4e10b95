//! The NodeFormer network: linear + ELU input embedding, `L` kernelized
//! all-pair message-passing layers with optional relational bias, and a
//! linear output head. Heads are averaged within each layer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_head, relational_bias_var, Adjacency, HeadState, RbActivation};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::ProjectionMatrix;
use crate::gumbel::GumbelDraws;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// Sampling hyperparameters of the attention operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Gumbel samples `K` averaged per forward pass.
    pub samples: usize,
    pub tau: f64,
    /// Random-feature dimension `m`.
    pub features: usize,
    /// Plain softmax attention (no Gumbel noise) at temperature `tau`.
    pub deterministic: bool,
}

impl SampleConfig {
    pub fn new(samples: usize, tau: f64, features: usize) -> Result<Self> {
        let sc = SampleConfig {
            samples,
            tau,
            features,
            deterministic: false,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn softmax(tau: f64, features: usize) -> Result<Self> {
        let sc = SampleConfig {
            samples: 1,
            tau,
            features,
            deterministic: true,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Deterministic softmax at unit temperature.
    pub fn ablation_dt(features: usize) -> Result<Self> {
        Self::softmax(1.0, features)
    }

    /// Deterministic softmax at the default temperature 0.25.
    pub fn ablation_tp(features: usize) -> Result<Self> {
        Self::softmax(0.25, features)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.features == 0 || !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "need K >= 1, m >= 1, tau > 0; got K={}, m={}, tau={}",
                self.samples, self.features, self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T> {
    pub heads: Vec<HeadParams<T>>,
    /// Relational-bias scalar `b`.
    pub bias: T,
}

/// All trainable parameters, generic over storage so the same layout holds
/// tensors, tape handles, gradients or optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub w_in: T,
    pub b_in: T,
    pub layers: Vec<LayerParams<T>>,
    pub w_out: T,
    pub b_out: T,
}

impl<T> ModelParams<T> {
    /// Parameters in a fixed order.
    pub fn values(&self) -> Vec<&T> {
        let mut out = vec![&self.w_in, &self.b_in];
        for l in &self.layers {
            for h in &l.heads {
                out.extend([&h.wq, &h.wk, &h.wv]);
            }
            out.push(&l.bias);
        }
        out.extend([&self.w_out, &self.b_out]);
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.w_in, &mut self.b_in];
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.extend([&mut h.wq, &mut h.wk, &mut h.wv]);
            }
            out.push(&mut l.bias);
        }
        out.extend([&mut self.w_out, &mut self.b_out]);
        out
    }

    /// Names aligned with [`ModelParams::values`].
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["input.weight".to_string(), "input.bias".to_string()];
        for (i, l) in self.layers.iter().enumerate() {
            for (j, _) in l.heads.iter().enumerate() {
                for w in ["wq", "wk", "wv"] {
                    out.push(format!("layer{i}.head{j}.{w}"));
                }
            }
            out.push(format!("layer{i}.rb"));
        }
        out.extend(["output.weight".to_string(), "output.bias".to_string()]);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            w_in: f(&self.w_in),
            b_in: f(&self.b_in),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadParams {
                            wq: f(&h.wq),
                            wk: f(&h.wk),
                            wv: f(&h.wv),
                        })
                        .collect(),
                    bias: f(&l.bias),
                })
                .collect(),
            w_out: f(&self.w_out),
            b_out: f(&self.b_out),
        }
    }
}

impl ModelParams<Tensor> {
    /// Weights uniform in `±1/√fan_in`; relational biases start at 0.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut r = rng::rng(rng::derive_seed(seed, &[stream::INIT]));
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| (2.0 * rng::uniform(&mut r) - 1.0) * bound)
                .collect();
            Tensor::from_vec(rows, cols, data).expect("sized")
        };
        let h = dims.hidden;
        let w_in = uniform(dims.input, h, dims.input);
        let b_in = uniform(1, h, dims.input);
        let layers = (0..dims.layers)
            .map(|_| LayerParams {
                heads: (0..dims.heads)
                    .map(|_| HeadParams {
                        wq: uniform(h, h, h),
                        wk: uniform(h, h, h),
                        wv: uniform(h, h, h),
                    })
                    .collect(),
                bias: Tensor::scalar(0.0),
            })
            .collect();
        let w_out = uniform(h, dims.classes, h);
        let b_out = uniform(1, dims.classes, h);
        Ok(ModelParams {
            w_in,
            b_in,
            layers,
            w_out,
            b_out,
        })
    }

    /// Each tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> ModelParams<Var> {
        self.map(|t| tape.leaf(t.clone(), requires_grad))
    }

    pub fn count(&self) -> usize {
        self.values().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: usize,
    pub heads: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.classes == 0 || self.heads == 0 {
            return Err(Error::invalid(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Parameters plus the fixed random projections, one per layer and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ModelParams<Tensor>,
    pub projections: Vec<Vec<ProjectionMatrix>>,
}

impl Model {
    pub fn init(dims: ModelDims, features: usize, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&dims, seed)?;
        let projections = sample_projections(&dims, features, seed)?;
        Ok(Model {
            dims,
            params,
            projections,
        })
    }

    pub fn resample_projections(&mut self, seed: u64) -> Result<()> {
        let m = self.features();
        self.projections = sample_projections(&self.dims, m, seed)?;
        Ok(())
    }

    pub fn features(&self) -> usize {
        self.projections
            .first()
            .and_then(|l| l.first())
            .map_or(0, ProjectionMatrix::features)
    }

    /// Forward pass with parameters as constants; returns the logits.
    pub fn predict(&self, x: &Tensor, opts: &ForwardOptions) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let state = network_forward(&mut tape, xv, &bound, &self.projections, opts)?;
        Ok(tape.value(state.logits).clone())
    }
}

fn sample_projections(dims: &ModelDims, m: usize, seed: u64) -> Result<Vec<Vec<ProjectionMatrix>>> {
    (0..dims.layers)
        .map(|l| {
            (0..dims.heads)
                .map(|h| {
                    let s = rng::derive_seed(seed, &[stream::PROJECTION, l as u64, h as u64]);
                    ProjectionMatrix::sample(dims.hidden, m, s)
                })
                .collect()
        })
        .collect()
}

/// Source of Gumbel noise for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    /// No noise: the deterministic softmax path.
    Off,
    /// Draws keyed by `(seed, layer, head, sample, node id)`.
    Seeded(u64),
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions<'a> {
    pub sample: &'a SampleConfig,
    /// Observed arcs over the batch, for the relational bias.
    pub adjacency: Option<&'a Adjacency>,
    pub activation: RbActivation,
    pub noise: Noise,
    /// Global identity of each row, used to key the Gumbel draws.
    pub node_ids: &'a [usize],
}

/// Cached per-layer state of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardState {
    pub nodes: usize,
    /// `heads[l][h]`.
    pub heads: Vec<Vec<HeadState>>,
    /// Output `Z^(l)` of each layer.
    pub outputs: Vec<Var>,
    pub logits: Var,
}

/// One message-passing layer: per head, project, attend, add the
/// relational bias; then average heads.
pub fn layer_forward(
    tape: &mut Tape,
    z: Var,
    lp: &LayerParams<Var>,
    projections: &[ProjectionMatrix],
    layer: usize,
    opts: &ForwardOptions,
) -> Result<(Var, Vec<HeadState>)> {
    let sc = opts.sample;
    sc.validate()?;
    let n = tape.shape(z).0;
    if opts.node_ids.len() != n {
        return Err(Error::invalid(format!(
            "{} node ids for {n} rows",
            opts.node_ids.len()
        )));
    }
    if projections.len() != lp.heads.len() {
        return Err(Error::invalid(format!(
            "{} projections for {} heads",
            projections.len(),
            lp.heads.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut states = Vec::with_capacity(lp.heads.len());
    for (h, (hp, proj)) in lp.heads.iter().zip(projections).enumerate() {
        let q = tape.matmul(z, hp.wq)?;
        let k = tape.matmul(z, hp.wk)?;
        let v = tape.matmul(z, hp.wv)?;
        let draws = match opts.noise {
            Noise::Seeded(seed) if !sc.deterministic => {
                let s = rng::derive_seed(seed, &[stream::GUMBEL, layer as u64, h as u64]);
                Some(GumbelDraws::for_nodes(s, sc.samples, opts.node_ids))
            }
            _ => None,
        };
        let (mut out, state) = attention_head(tape, q, k, v, proj, sc.tau, draws.as_ref())?;
        if let Some(adj) = opts.adjacency {
            let rb = relational_bias_var(tape, adj, v, lp.bias, opts.activation)?;
            out = tape.add(out, rb)?;
        }
        states.push(state);
        total = Some(match total {
            None => out,
            Some(t) => tape.add(t, out)?,
        });
    }
    let mut out = total.ok_or_else(|| Error::invalid("layer without heads"))?;
    if lp.heads.len() > 1 {
        out = tape.scale(out, 1.0 / lp.heads.len() as f64)?;
    }
    Ok((out, states))
}

/// Input embedding, message-passing layers and output head.
pub fn network_forward(
    tape: &mut Tape,
    x: Var,
    params: &ModelParams<Var>,
    projections: &[Vec<ProjectionMatrix>],
    opts: &ForwardOptions,
) -> Result<ForwardState> {
    if projections.len() != params.layers.len() {
        return Err(Error::invalid(format!(
            "{} projection sets for {} layers",
            projections.len(),
            params.layers.len()
        )));
    }
    let n = tape.shape(x).0;
    let h = tape.matmul(x, params.w_in)?;
    let h = tape.add_row(h, params.b_in)?;
    let mut z = tape.elu(h, 1.0)?;
    let mut heads = Vec::with_capacity(params.layers.len());
    let mut outputs = Vec::with_capacity(params.layers.len());
    for (l, (lp, projs)) in params.layers.iter().zip(projections).enumerate() {
        let (next, states) = layer_forward(tape, z, lp, projs, l, opts)?;
        z = next;
        heads.push(states);
        outputs.push(z);
    }
    let logits = tape.matmul(z, params.w_out)?;
    let logits = tape.add_row(logits, params.b_out)?;
    Ok(ForwardState {
        nodes: n,
        heads,
        outputs,
        logits,
    })
}

fn layer_heads<'s>(state: &'s ForwardState, layer: usize) -> Result<&'s [HeadState]> {
    state
        .heads
        .get(layer)
        .map(Vec::as_slice)
        .ok_or(Error::MissingCache(layer))
}

fn check_arc(state: &ForwardState, u: usize, v: usize) -> Result<()> {
    for x in [u, v] {
        if x >= state.nodes {
            return Err(Error::NodeOutOfRange {
                index: x,
                n: state.nodes,
            });
        }
    }
    Ok(())
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `π_uv` of layer `layer`, averaged over heads, from the cached log-features
/// and key sums in `O(m)` per head.
pub fn edge_probability(
    tape: &Tape,
    state: &ForwardState,
    layer: usize,
    u: usize,
    v: usize,
) -> Result<f64> {
    let heads = layer_heads(state, layer)?;
    check_arc(state, u, v)?;
    let mut total = 0.0;
    for hs in heads {
        let lq = tape.value(hs.query_log_features);
        let lk = tape.value(hs.key_log_features);
        let key_sums = tape.value(hs.key_log_sum).data();
        let lq_u = lq.row(u);
        let num = log_sum_exp(lq_u.iter().zip(lk.row(v)).map(|(a, b)| a + b));
        let den = log_sum_exp(lq_u.iter().zip(key_sums).map(|(a, b)| a + b));
        total += (num - den).exp();
    }
    Ok(total / heads.len() as f64)
}

/// `E x 1` node of `log π_uv`, with `π` averaged over heads, for every arc
/// `(u, v)`. Evaluated in log space so that vanishing probabilities stay finite.
pub fn edge_log_probabilities_var(
    tape: &mut Tape,
    state: &ForwardState,
    layer: usize,
    arcs: &[(usize, usize)],
) -> Result<Var> {
    let heads = layer_heads(state, layer)?.to_vec();
    if arcs.is_empty() {
        return Err(Error::invalid("no arcs to query"));
    }
    for &(u, v) in arcs {
        check_arc(state, u, v)?;
    }
    let src: Arc<[usize]> = arcs.iter().map(|a| a.0).collect();
    let dst: Arc<[usize]> = arcs.iter().map(|a| a.1).collect();
    let mut per_head = Vec::with_capacity(heads.len());
    for hs in &heads {
        let lq = tape.gather_rows(hs.query_log_features, src.clone())?;
        let lk = tape.gather_rows(hs.key_log_features, dst.clone())?;
        let pair = tape.add(lq, lk)?;
        let num = tape.log_sum_exp_rows(pair)?;
        let all_q = tape.add_row(hs.query_log_features, hs.key_log_sum)?;
        let den = tape.log_sum_exp_rows(all_q)?;
        let den = tape.gather_rows(den, src.clone())?;
        per_head.push(tape.sub(num, den)?);
    }
    if per_head.len() == 1 {
        return Ok(per_head[0]);
    }
    let stacked = tape.concat_cols(&per_head)?;
    let lse = tape.log_sum_exp_rows(stacked)?;
    tape.add_scalar(lse, -(per_head.len() as f64).ln())
}

/// `E x 1` node of head-averaged `π_uv` for every arc `(u, v)`.
pub fn edge_probabilities_var(
    tape: &mut Tape,
    state: &ForwardState,
    layer: usize,
    arcs: &[(usize, usize)],
) -> Result<Var> {
    let log_pi = edge_log_probabilities_var(tape, state, layer, arcs)?;
    tape.exp(log_pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(layers: usize, heads: usize) -> ModelDims {
        ModelDims {
            input: 5,
            hidden: 6,
            classes: 3,
            layers,
            heads,
        }
    }

    fn features(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng::rng(seed);
        Tensor::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng::standard_normal(&mut r)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn shapes_and_names() {
        let d = ModelDims {
            input: 5,
            hidden: 32,
            classes: 3,
            layers: 2,
            heads: 1,
        };
        let model = Model::init(d, 8, 1).unwrap();
        let sc = SampleConfig::new(2, 0.25, 8).unwrap();
        let ids: Vec<usize> = (0..10).collect();
        let opts = ForwardOptions {
            sample: &sc,
            adjacency: None,
            activation: RbActivation::Sigmoid,
            noise: Noise::Seeded(3),
            node_ids: &ids,
        };
        let logits = model.predict(&features(10, 5, 2), &opts).unwrap();
        assert_eq!(logits.shape(), (10, 3));
        let names = model.params.names();
        assert_eq!(names.len(), model.params.values().len());
        assert_eq!(names[2], "layer0.head0.wq");
    }

    #[test]
    fn identical_heads_match_single_head() {
        let one = Model::init(dims(1, 1), 8, 4).unwrap();
        let mut two = Model::init(dims(1, 2), 8, 4).unwrap();
        two.params.layers[0].heads = vec![one.params.layers[0].heads[0].clone(); 2];
        two.params.w_in = one.params.w_in.clone();
        two.params.b_in = one.params.b_in.clone();
        two.params.w_out = one.params.w_out.clone();
        two.params.b_out = one.params.b_out.clone();
        two.projections = vec![vec![one.projections[0][0].clone(); 2]];
        let sc = SampleConfig::softmax(0.5, 8).unwrap();
        let ids: Vec<usize> = (0..7).collect();
        let opts = ForwardOptions {
            sample: &sc,
            adjacency: None,
            activation: RbActivation::Sigmoid,
            noise: Noise::Off,
            node_ids: &ids,
        };
        let x = features(7, 5, 9);
        let a = one.predict(&x, &opts).unwrap();
        let b = two.predict(&x, &opts).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn zero_layers_is_an_mlp() {
        let model = Model::init(dims(0, 1), 8, 4).unwrap();
        let x = features(4, 5, 1);
        let sc = SampleConfig::new(5, 0.25, 8).unwrap();
        let ids: Vec<usize> = (0..4).collect();
        let opts = ForwardOptions {
            sample: &sc,
            adjacency: None,
            activation: RbActivation::Sigmoid,
            noise: Noise::Seeded(1),
            node_ids: &ids,
        };
        let p = &model.params;
        let mut h = x.matmul(&p.w_in).unwrap();
        for i in 0..4 {
            for (o, b) in h.row_mut(i).iter_mut().zip(p.b_in.row(0)) {
                *o += b;
                if *o < 0.0 {
                    *o = o.exp() - 1.0;
                }
            }
        }
        let mut expect = h.matmul(&p.w_out).unwrap();
        for i in 0..4 {
            for (o, b) in expect.row_mut(i).iter_mut().zip(p.b_out.row(0)) {
                *o += b;
            }
        }
        assert!(model.predict(&x, &opts).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let p = ModelParams::init(&dims(2, 2), 0).unwrap();
        assert!(p.w_in.data().iter().all(|w| w.abs() <= 1.0 / 5f64.sqrt()));
        assert!(p.layers[1].heads[1]
            .wq
            .data()
            .iter()
            .all(|w| w.abs() <= 1.0 / 6f64.sqrt()));
        assert!(p.layers.iter().all(|l| l.bias.item() == 0.0));
    }

    #[test]
    fn sample_config_validation() {
        assert!(SampleConfig::new(0, 0.25, 8).is_err());
        assert!(SampleConfig::new(1, 0.0, 8).is_err());
        assert!(SampleConfig::new(1, 0.25, 0).is_err());
        let dt = SampleConfig::ablation_dt(8).unwrap();
        assert!(dt.deterministic && dt.tau == 1.0);
        let tp = SampleConfig::ablation_tp(8).unwrap();
        assert!(tp.deterministic && tp.tau == 0.25);
    }
}

//! Kernelized all-pair attention and the relational bias over observed edges.
//!
//! Row `u` of the kernelized Gumbel attention is
//!
//! ```text
//! φ(q_u/√τ)ᵀ Σ_v e^{g_v/τ} φ(k_v/√τ) v_vᵀ  /  φ(q_u/√τ)ᵀ Σ_w e^{g_w/τ} φ(k_w/√τ)
//! ```
//!
//! The two sums are computed once and shared by every query, so a layer
//! costs `O(N·m·d)` and never materializes an `N x N` matrix. The Gumbel
//! factor is folded into the key log-features before exponentiation.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::{positive_features, prf_log_features, ProjectionMatrix, Shift};
use crate::gumbel::GumbelDraws;
use crate::tensor::Tensor;

/// Gumbel-free, temperature-scaled features of one head, kept so that edge
/// probabilities can be queried in `O(m)` after the forward pass.
#[derive(Clone, Copy, Debug)]
pub struct HeadState {
    /// `φ(q_u/√τ)` up to a per-row factor, `N x m`.
    pub query_features: Var,
    /// `φ(k_v/√τ)` up to a global factor, `N x m`.
    pub key_features: Var,
    /// Unshifted `log φ(q_u/√τ)` up to the constant `−½ log m`, `N x m`.
    pub query_log_features: Var,
    /// Unshifted `log φ(k_v/√τ)` up to the same constant, `N x m`.
    pub key_log_features: Var,
    /// `log Σ_w φ(k_w/√τ)` on the same scale, `1 x m`.
    pub key_log_sum: Var,
    /// `Σ_w φ(k_w/√τ)`, `1 x m`.
    pub key_sum: Var,
    /// `φ(q_u/√τ)ᵀ Σ_w φ(k_w/√τ)`, `N x 1`.
    pub denominators: Var,
}

fn check_qkv(tape: &Tape, q: Var, k: Var, v: Var) -> Result<()> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qs.1 != ks.1 {
        return Err(Error::ShapeMismatch {
            op: "attention q/k",
            left: qs,
            right: ks,
        });
    }
    if ks.0 != vs.0 {
        return Err(Error::ShapeMismatch {
            op: "attention k/v",
            left: ks,
            right: vs,
        });
    }
    if ks.0 == 0 {
        return Err(Error::invalid("attention over zero nodes"));
    }
    for x in [q, k, v] {
        if !tape.value(x).is_finite() {
            return Err(Error::NonFinite("attention input".into()));
        }
    }
    Ok(())
}

/// `(φqᵀ Σ φk vᵀ) / (φqᵀ Σ φk)` for already-mapped features.
fn aggregate(tape: &mut Tape, phi_q: Var, phi_k: Var, v: Var) -> Result<(Var, Var, Var)> {
    let phi_k_t = tape.transpose(phi_k)?;
    let kv = tape.matmul(phi_k_t, v)?;
    let key_sum = tape.col_sum(phi_k)?;
    let key_sum_t = tape.transpose(key_sum)?;
    let num = tape.matmul(phi_q, kv)?;
    let den = tape.matmul(phi_q, key_sum_t)?;
    let out = tape.div_col(num, den)?;
    Ok((out, key_sum, den))
}

/// One attention head on the tape. `draws` of `None` is the deterministic
/// (plain softmax-kernel) path; otherwise the output is averaged over the
/// samples in `draws`.
pub fn attention_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    proj: &ProjectionMatrix,
    tau: f64,
    draws: Option<&GumbelDraws>,
) -> Result<(Var, HeadState)> {
    check_qkv(tape, q, k, v)?;
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let n = tape.shape(k).0;
    let m = proj.features();
    let scale = 1.0 / tau.sqrt();
    let qs = tape.scale(q, scale)?;
    let ks = tape.scale(k, scale)?;
    let log_q = prf_log_features(tape, qs, proj)?;
    let log_k = prf_log_features(tape, ks, proj)?;
    let phi_q = positive_features(tape, log_q, m, Shift::PerRow)?;
    let phi_k = positive_features(tape, log_k, m, Shift::Global)?;

    let Some(draws) = draws else {
        let (out, key_sum, denominators) = aggregate(tape, phi_q, phi_k, v)?;
        let state = HeadState {
            query_features: phi_q,
            key_features: phi_k,
            query_log_features: log_q,
            key_log_features: log_k,
            key_log_sum: column_log_sum_exp(tape, log_k)?,
            key_sum,
            denominators,
        };
        return Ok((out, state));
    };

    if draws.nodes() != n || draws.samples() == 0 {
        return Err(Error::invalid(format!(
            "{} Gumbel draws per sample for {n} keys",
            draws.nodes()
        )));
    }
    let mut total: Option<Var> = None;
    for s in 0..draws.samples() {
        let g = Tensor::column(draws.sample(s).iter().map(|g| g / tau).collect());
        let g = tape.constant(g);
        let log_kg = tape.add_col(log_k, g)?;
        let phi_kg = positive_features(tape, log_kg, m, Shift::Global)?;
        let (out, _, _) = aggregate(tape, phi_q, phi_kg, v)?;
        total = Some(match total {
            None => out,
            Some(t) => tape.add(t, out)?,
        });
    }
    let mut out = total.expect("at least one sample");
    if draws.samples() > 1 {
        out = tape.scale(out, 1.0 / draws.samples() as f64)?;
    }
    let key_sum = tape.col_sum(phi_k)?;
    let key_sum_t = tape.transpose(key_sum)?;
    let denominators = tape.matmul(phi_q, key_sum_t)?;
    let state = HeadState {
        query_features: phi_q,
        key_features: phi_k,
        query_log_features: log_q,
        key_log_features: log_k,
        key_log_sum: column_log_sum_exp(tape, log_k)?,
        key_sum,
        denominators,
    };
    Ok((out, state))
}

fn column_log_sum_exp(tape: &mut Tape, x: Var) -> Result<Var> {
    let t = tape.transpose(x)?;
    let lse = tape.log_sum_exp_rows(t)?;
    tape.transpose(lse)
}

/// Kernelized softmax attention `softmax(QKᵀ)V` estimated with `proj`.
pub fn kernelized_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    proj: &ProjectionMatrix,
) -> Result<Tensor> {
    run_head(q, k, v, proj, 1.0, None)
}

/// Kernelized Gumbel-Softmax attention with explicit draws (one row of
/// `draws` per sample, one column per key).
pub fn kernelized_gumbel_attention_with_draws(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    proj: &ProjectionMatrix,
    tau: f64,
    draws: &GumbelDraws,
) -> Result<Tensor> {
    run_head(q, k, v, proj, tau, Some(draws))
}

/// Kernelized Gumbel-Softmax attention with draws keyed by node index
/// `0..N`. In deterministic mode no noise is drawn.
pub fn kernelized_gumbel_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    proj: &ProjectionMatrix,
    sc: &crate::model::SampleConfig,
    gumbel_seed: u64,
) -> Result<Tensor> {
    if sc.deterministic {
        return run_head(q, k, v, proj, sc.tau, None);
    }
    let ids: Vec<usize> = (0..k.rows()).collect();
    let draws = GumbelDraws::for_nodes(gumbel_seed, sc.samples, &ids);
    run_head(q, k, v, proj, sc.tau, Some(&draws))
}

fn run_head(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    proj: &ProjectionMatrix,
    tau: f64,
    draws: Option<&GumbelDraws>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let (out, _) = attention_head(&mut tape, qv, kv, vv, proj, tau, draws)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbActivation {
    #[default]
    Sigmoid,
    Identity,
}

impl std::str::FromStr for RbActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(RbActivation::Sigmoid),
            "identity" => Ok(RbActivation::Identity),
            _ => Err(Error::invalid(format!(
                "unknown rb_activation `{s}` (expected sigmoid or identity)"
            ))),
        }
    }
}

impl std::fmt::Display for RbActivation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RbActivation::Sigmoid => "sigmoid",
            RbActivation::Identity => "identity",
        })
    }
}

impl RbActivation {
    pub fn apply(self, b: f64) -> f64 {
        match self {
            RbActivation::Sigmoid => 1.0 / (1.0 + (-b).exp()),
            RbActivation::Identity => b,
        }
    }
}

/// Deduplicated arcs `(u, v)` meaning "row `u` receives from `v`", without
/// self-loops, over `n` nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    arcs: Arc<[(usize, usize)]>,
}

impl Adjacency {
    /// `order` 1 keeps the edges; `order` 2 is the reachability `A ∨ A²`.
    pub fn new(n: usize, edges: &[(usize, usize)], order: usize) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::invalid(format!(
                "adjacency order must be 1 or 2, got {order}"
            )));
        }
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::NodeOutOfRange { index: x, n });
                }
            }
            out[u].push(v);
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
        let mut arcs = Vec::new();
        for u in 0..n {
            if order == 1 {
                arcs.extend(out[u].iter().filter(|&&v| v != u).map(|&v| (u, v)));
            } else {
                let mut reach: BTreeSet<usize> = out[u].iter().copied().collect();
                for &v in &out[u] {
                    reach.extend(out[v].iter().copied());
                }
                reach.remove(&u);
                arcs.extend(reach.into_iter().map(|v| (u, v)));
            }
        }
        Ok(Adjacency {
            n,
            arcs: arcs.into(),
        })
    }

    pub fn empty(n: usize) -> Self {
        Adjacency {
            n,
            arcs: Arc::from(Vec::new()),
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn arcs(&self) -> &Arc<[(usize, usize)]> {
        &self.arcs
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Arcs with both endpoints in `nodes`, relabeled to positions in
    /// `nodes`. `nodes` must hold distinct ids.
    pub fn restrict(&self, nodes: &[usize]) -> Result<Adjacency> {
        let mut pos = vec![usize::MAX; self.n];
        for (i, &id) in nodes.iter().enumerate() {
            if id >= self.n {
                return Err(Error::NodeOutOfRange {
                    index: id,
                    n: self.n,
                });
            }
            pos[id] = i;
        }
        let mut arcs: Vec<(usize, usize)> = self
            .arcs
            .iter()
            .filter_map(|&(u, v)| {
                (pos[u] != usize::MAX && pos[v] != usize::MAX).then(|| (pos[u], pos[v]))
            })
            .collect();
        arcs.sort_unstable();
        Ok(Adjacency {
            n: nodes.len(),
            arcs: arcs.into(),
        })
    }
}

/// `act(b) · Σ_{v: (u,v) ∈ adj} v_v` on the tape; `b` is a `1 x 1` node.
pub fn relational_bias_var(
    tape: &mut Tape,
    adj: &Adjacency,
    v: Var,
    b: Var,
    activation: RbActivation,
) -> Result<Var> {
    let (rows, _) = tape.shape(v);
    if rows != adj.nodes() {
        return Err(Error::invalid(format!(
            "adjacency over {} nodes applied to {rows} rows",
            adj.nodes()
        )));
    }
    let summed = tape.propagate(v, adj.arcs.clone(), rows)?;
    let gate = match activation {
        RbActivation::Sigmoid => tape.sigmoid(b)?,
        RbActivation::Identity => b,
    };
    tape.scale_by(summed, gate)
}

/// Additive relational-bias term for `order`-hop adjacency of `edges`.
pub fn relational_bias(
    edges: &[(usize, usize)],
    v: &Tensor,
    b: f64,
    order: usize,
    activation: RbActivation,
) -> Result<Tensor> {
    let adj = Adjacency::new(v.rows(), edges, order)?;
    let gate = activation.apply(b);
    let mut out = Tensor::zeros(v.rows(), v.cols());
    for &(u, w) in adj.arcs.iter() {
        for (o, x) in out.row_mut(u).iter_mut().zip(v.row(w)) {
            *o += gate * x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::sample_projection;

    fn random(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = crate::rng::rng(seed);
        let data = (0..n * d)
            .map(|_| crate::rng::standard_normal(&mut r) * 0.5)
            .collect();
        Tensor::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn single_node_returns_its_value() {
        let p = sample_projection(3, 16, 1).unwrap();
        let q = random(1, 3, 2);
        let k = random(1, 3, 3);
        let v = Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let out = kernelized_attention(&q, &k, &v, &p).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-15);
        let draws = GumbelDraws::for_nodes(4, 3, &[0]);
        let out = kernelized_gumbel_attention_with_draws(&q, &k, &v, &p, 0.25, &draws).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn identical_keys_average_values() {
        let p = sample_projection(2, 8, 1).unwrap();
        let q = random(5, 2, 2);
        let k = Tensor::from_rows(&vec![vec![0.3, -0.1]; 5]).unwrap();
        let v = random(5, 3, 4);
        let mean = v.col_sums().scale(0.2);
        let out = kernelized_attention(&q, &k, &v, &p).unwrap();
        for u in 0..5 {
            for c in 0..3 {
                assert!((out.get(u, c) - mean.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn key_sum_matches_literal_sum() {
        let p = sample_projection(4, 32, 7).unwrap();
        let mut tape = Tape::new();
        let q = tape.constant(random(10, 4, 1));
        let k = tape.constant(random(10, 4, 2));
        let v = tape.constant(random(10, 2, 3));
        let (_, st) = attention_head(&mut tape, q, k, v, &p, 0.25, None).unwrap();
        let feats = tape.value(st.key_features);
        let sum = tape.value(st.key_sum);
        for j in 0..32 {
            let literal: f64 = (0..10).map(|i| feats.get(i, j)).sum();
            assert!((literal - sum.get(0, j)).abs() < 1e-10);
        }
    }

    #[test]
    fn relational_bias_formula() {
        let v = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0], vec![5.0, 1.0]]).unwrap();
        let out = relational_bias(&[(0, 1)], &v, 0.0, 1, RbActivation::Sigmoid).unwrap();
        assert_eq!(out.row(0), &[1.0, 1.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
        assert_eq!(out.row(2), &[0.0, 0.0]);
        let none = relational_bias(&[], &v, 3.0, 2, RbActivation::Sigmoid).unwrap();
        assert_eq!(none, Tensor::zeros(3, 2));
        let off = relational_bias(&[(0, 1)], &v, -800.0, 1, RbActivation::Sigmoid).unwrap();
        assert!(off.data().iter().all(|x| x.abs() < 1e-300));
        assert!(relational_bias(&[(0, 3)], &v, 0.0, 1, RbActivation::Sigmoid).is_err());
    }

    #[test]
    fn second_order_reachability() {
        // path 0 - 1 - 2 - 3 stored in both directions, plus a duplicate
        let e = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (0, 1)];
        let a1 = Adjacency::new(4, &e, 1).unwrap();
        assert_eq!(a1.len(), 6);
        let a2 = Adjacency::new(4, &e, 2).unwrap();
        let expect = vec![
            (0, 1),
            (0, 2),
            (1, 0),
            (1, 2),
            (1, 3),
            (2, 0),
            (2, 1),
            (2, 3),
            (3, 1),
            (3, 2),
        ];
        assert_eq!(a2.arcs().to_vec(), expect);
        assert!(Adjacency::new(4, &e, 3).is_err());
        let r = a2.restrict(&[3, 1, 2]).unwrap();
        assert_eq!(
            r.arcs().to_vec(),
            vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        );
    }
}

//! Supervised loss, edge-level regularization and their weighted sum.
//!
//! The edge term is the negative log-likelihood of observed arcs under the
//! layer-wise latent edge probabilities,
//! `−(1/(N·L)) Σ_l Σ_(u,v) (1/d_u) log π_uv^(l)`, where `d_u` is the number of
//! observed arcs leaving `u` so that `1/d_u` is a distribution over `v`.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::data::Labels;
use crate::error::{Error, Result};
use crate::model::{edge_log_probabilities_var, ForwardState};
use crate::tensor::Tensor;

/// Observed arcs with their empirical weights `1/d_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePrior {
    nodes: usize,
    arcs: Vec<(usize, usize)>,
    degree: Vec<usize>,
}

impl EdgePrior {
    pub fn new(nodes: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        let mut degree = vec![0; nodes];
        for &(u, v) in arcs {
            if u >= nodes || v >= nodes {
                return Err(Error::NodeOutOfRange {
                    index: u.max(v),
                    n: nodes,
                });
            }
            degree[u] += 1;
        }
        Ok(EdgePrior {
            nodes,
            arcs: arcs.to_vec(),
            degree,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn degree(&self, u: usize) -> usize {
        self.degree[u]
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Arcs inside `nodes`, relabeled to positions in `nodes`, with degrees
    /// recounted inside the subset.
    pub fn restrict(&self, nodes: &[usize]) -> Result<EdgePrior> {
        let mut pos = vec![usize::MAX; self.nodes];
        for (i, &id) in nodes.iter().enumerate() {
            if id >= self.nodes {
                return Err(Error::NodeOutOfRange {
                    index: id,
                    n: self.nodes,
                });
            }
            pos[id] = i;
        }
        let arcs: Vec<(usize, usize)> = self
            .arcs
            .iter()
            .filter_map(|&(u, v)| {
                (pos[u] != usize::MAX && pos[v] != usize::MAX).then(|| (pos[u], pos[v]))
            })
            .collect();
        EdgePrior::new(nodes.len(), &arcs)
    }

    fn weights(&self) -> Tensor {
        Tensor::column(
            self.arcs
                .iter()
                .map(|&(u, _)| 1.0 / self.degree[u] as f64)
                .collect(),
        )
    }
}

/// `−(1/(N·L)) Σ_l Σ_(u,v) (1/d_u) log π_uv^(l)` over all cached layers.
pub fn edge_regularization(
    tape: &mut Tape,
    state: &ForwardState,
    prior: &EdgePrior,
) -> Result<Var> {
    let layers = state.heads.len();
    if prior.nodes() != state.nodes {
        return Err(Error::invalid(format!(
            "edge prior over {} nodes for a batch of {}",
            prior.nodes(),
            state.nodes
        )));
    }
    if prior.is_empty() || layers == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let w = tape.constant(prior.weights());
    let mut total: Option<Var> = None;
    for l in 0..layers {
        let log_pi = edge_log_probabilities_var(tape, state, l, prior.arcs())?;
        let weighted = tape.mul(log_pi, w)?;
        let s = tape.sum(weighted)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let total = total.expect("at least one layer");
    tape.scale(total, -1.0 / (state.nodes * layers) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupervisedKind {
    /// Softmax cross-entropy over classes.
    CrossEntropy,
    /// Sigmoid cross-entropy over every output column against one-hot (or
    /// multi-hot) targets.
    BinaryCrossEntropy,
}

impl SupervisedKind {
    /// BCE for two-class and multi-label tasks, softmax otherwise.
    pub fn for_labels(labels: &Labels, num_classes: usize) -> Self {
        match labels {
            Labels::Multi(_) => SupervisedKind::BinaryCrossEntropy,
            Labels::Single(_) if num_classes == 2 => SupervisedKind::BinaryCrossEntropy,
            Labels::Single(_) => SupervisedKind::CrossEntropy,
        }
    }
}

fn targets(labels: &Labels, mask: &[usize], classes: usize) -> Result<Tensor> {
    match labels {
        Labels::Single(y) => {
            let mut t = Tensor::zeros(mask.len(), classes);
            for (i, &u) in mask.iter().enumerate() {
                if y[u] >= classes {
                    return Err(Error::invalid(format!(
                        "label {} out of range for {classes} outputs",
                        y[u]
                    )));
                }
                t.set(i, y[u], 1.0);
            }
            Ok(t)
        }
        Labels::Multi(t) => {
            if t.cols() != classes {
                return Err(Error::ShapeMismatch {
                    op: "multi-label targets",
                    left: t.shape(),
                    right: (mask.len(), classes),
                });
            }
            t.gather_rows(mask)
        }
    }
}

/// Mean loss over the nodes in `mask` (row indices of `logits`).
pub fn supervised_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &Labels,
    mask: &[usize],
    kind: SupervisedKind,
) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::invalid("supervised loss over an empty mask"));
    }
    let (n, c) = tape.shape(logits);
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = mask.iter().find(|&&u| u >= n) {
        return Err(Error::NodeOutOfRange { index: bad, n });
    }
    let y = targets(labels, mask, c)?;
    let idx: Arc<[usize]> = mask.into();
    let picked = tape.gather_rows(logits, idx)?;
    match kind {
        SupervisedKind::CrossEntropy => {
            if matches!(labels, Labels::Multi(_)) {
                return Err(Error::invalid("cross-entropy needs single-label targets"));
            }
            let logp = tape.log_softmax_rows(picked)?;
            let yv = tape.constant(y);
            let hit = tape.mul(logp, yv)?;
            let s = tape.sum(hit)?;
            tape.scale(s, -1.0 / mask.len() as f64)
        }
        SupervisedKind::BinaryCrossEntropy => {
            let not_y = y.map(|t| 1.0 - t);
            let pos = tape.log_sigmoid(picked)?;
            let neg_logits = tape.neg(picked)?;
            let neg = tape.log_sigmoid(neg_logits)?;
            let yv = tape.constant(y);
            let nyv = tape.constant(not_y);
            let a = tape.mul(pos, yv)?;
            let b = tape.mul(neg, nyv)?;
            let ab = tape.add(a, b)?;
            let s = tape.sum(ab)?;
            tape.scale(s, -1.0 / (mask.len() * c) as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub edge: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(supervised: f64, edge: f64, lambda: f64) -> Self {
        LossBreakdown {
            supervised,
            edge,
            total: supervised + lambda * edge,
            lambda,
        }
    }
}

/// `L_s + λ·L_e`, with the edge term omitted when `prior` is `None`.
pub fn total_loss(
    tape: &mut Tape,
    state: &ForwardState,
    labels: &Labels,
    mask: &[usize],
    kind: SupervisedKind,
    prior: Option<&EdgePrior>,
    lambda: f64,
) -> Result<(Var, LossBreakdown)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let sup = supervised_loss(tape, state.logits, labels, mask, kind)?;
    let sup_value = tape.value(sup).item();
    let Some(prior) = prior else {
        return Ok((sup, LossBreakdown::new(sup_value, 0.0, lambda)));
    };
    let edge = edge_regularization(tape, state, prior)?;
    let edge_value = tape.value(edge).item();
    let weighted = tape.scale(edge, lambda)?;
    let total = tape.add(sup, weighted)?;
    let breakdown = LossBreakdown {
        supervised: sup_value,
        edge: edge_value,
        total: tape.value(total).item(),
        lambda,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_loss(
        logits: Vec<Vec<f64>>,
        labels: Labels,
        mask: &[usize],
        kind: SupervisedKind,
    ) -> f64 {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_rows(&logits).unwrap());
        let loss = supervised_loss(&mut tape, l, &labels, mask, kind).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = SupervisedKind::CrossEntropy;
        let sure = scalar_loss(
            vec![vec![50.0, -50.0, -50.0]],
            Labels::Single(vec![0]),
            &[0],
            ce,
        );
        assert!(sure < 1e-40);
        let uniform = scalar_loss(vec![vec![0.3; 4]], Labels::Single(vec![2]), &[0], ce);
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        let rows = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![5.0, 5.0]];
        let a = scalar_loss(rows.clone(), Labels::Single(vec![0, 0, 1]), &[0], ce);
        let b = scalar_loss(rows.clone(), Labels::Single(vec![0, 0, 1]), &[1], ce);
        let ab = scalar_loss(rows, Labels::Single(vec![0, 0, 1]), &[0, 1], ce);
        assert!((ab - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_fails() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(2, 2));
        assert!(supervised_loss(
            &mut tape,
            l,
            &Labels::Single(vec![0, 1]),
            &[],
            SupervisedKind::CrossEntropy
        )
        .is_err());
    }

    #[test]
    fn binary_cross_entropy_matches_formula() {
        let x = [0.7, -1.3];
        let got = scalar_loss(
            vec![x.to_vec()],
            Labels::Single(vec![1]),
            &[0],
            SupervisedKind::BinaryCrossEntropy,
        );
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expect = -((1.0 - sig(x[0])).ln() + sig(x[1]).ln()) / 2.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn breakdown_arithmetic() {
        let b = LossBreakdown::new(0.5, 0.2, 1.0);
        assert!((b.total - 0.7).abs() < 1e-15);
        let b0 = LossBreakdown::new(0.5, 0.2, 0.0);
        assert_eq!(b0.total, 0.5);
        let b2 = LossBreakdown::new(0.5, 0.2, 2.0);
        assert!(((b2.total - b2.supervised) - 2.0 * (b.total - b.supervised)).abs() < 1e-15);
    }

    #[test]
    fn restrict_recounts_degrees() {
        let p = EdgePrior::new(4, &[(0, 1), (0, 2), (0, 3), (2, 0)]).unwrap();
        assert_eq!(p.degree(0), 3);
        let r = p.restrict(&[2, 0]).unwrap();
        assert_eq!(r.arcs(), &[(1, 0), (0, 1)]);
        assert_eq!(r.degree(1), 1);
        assert!(EdgePrior::new(2, &[(0, 2)]).is_err());
    }
}

//! Positive random features for the softmax kernel `exp(xᵀy)`.
//!
//! `φ(x) = exp(−‖x‖²/2) / √m · [exp(w₁ᵀx), …, exp(w_mᵀx)]` with i.i.d.
//! standard-normal rows `wᵢ`, so that `E[φ(x)ᵀφ(y)] = exp(xᵀy)` and every
//! estimate is strictly positive.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{dot, Tensor};

/// The `m x d` Gaussian projection defining a feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    weights: Tensor,
    seed: u64,
}

impl ProjectionMatrix {
    /// `m x d` i.i.d. standard normals drawn row-major from `ChaCha8(seed)`.
    pub fn sample(input_dim: usize, features: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || features == 0 {
            return Err(Error::invalid(format!(
                "projection needs positive dimensions, got d={input_dim}, m={features}"
            )));
        }
        let mut r = rng::rng(seed);
        let data = (0..input_dim * features)
            .map(|_| rng::standard_normal(&mut r))
            .collect();
        Ok(ProjectionMatrix {
            weights: Tensor::from_vec(features, input_dim, data)?,
            seed,
        })
    }

    pub fn from_weights(weights: Tensor, seed: u64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("empty projection"));
        }
        Ok(ProjectionMatrix { weights, seed })
    }

    /// Feature dimension `m`.
    pub fn features(&self) -> usize {
        self.weights.rows()
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

pub fn sample_projection(d: usize, m: usize, seed: u64) -> Result<ProjectionMatrix> {
    ProjectionMatrix::sample(d, m, seed)
}

fn check_dim(x: &[f64], proj: &ProjectionMatrix) -> Result<()> {
    if x.len() != proj.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "prf_map",
            left: (1, x.len()),
            right: proj.weights.shape(),
        });
    }
    Ok(())
}

/// `φ(x)` for a single vector.
pub fn prf_map(x: &[f64], proj: &ProjectionMatrix) -> Result<Vec<f64>> {
    check_dim(x, proj)?;
    let half_sq = 0.5 * dot(x, x);
    let norm = (proj.features() as f64).sqrt();
    Ok((0..proj.features())
        .map(|i| (dot(proj.weights.row(i), x) - half_sq).exp() / norm)
        .collect())
}

/// `φ(x)ᵀφ(y)`, an unbiased estimate of `exp(xᵀy)`.
pub fn softmax_kernel_estimate(x: &[f64], y: &[f64], proj: &ProjectionMatrix) -> Result<f64> {
    check_dim(y, proj)?;
    Ok(dot(&prf_map(x, proj)?, &prf_map(y, proj)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBoundParams {
    pub r: f64,
    pub tau: f64,
    pub m: f64,
    pub eps: f64,
}

impl ErrorBoundParams {
    pub fn new(r: f64, tau: f64, m: f64, eps: f64) -> Result<Self> {
        if !(r > 0.0 && tau > 0.0 && m >= 1.0 && eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid(format!(
                "need r > 0, tau > 0, m >= 1, 0 < eps < 1; got r={r}, tau={tau}, m={m}, eps={eps}"
            )));
        }
        Ok(ErrorBoundParams { r, tau, m, eps })
    }
}

/// `√(exp(6r/τ) / (m·ε))`, the high-probability bound on the kernel
/// estimation gap with unit constant.
///
/// The constructor rejects `ε = 1`; the raw formula is still usable via a
/// struct literal when a degenerate probability is wanted for arithmetic.
pub fn theoretical_error_bound(p: &ErrorBoundParams) -> f64 {
    ((6.0 * p.r / p.tau).exp() / (p.m * p.eps)).sqrt()
}

/// How the log-features are shifted before exponentiation.
///
/// Any uniform shift of the query side per row, or of the key side as a
/// whole, cancels in the attention ratio; shifting keeps `exp` in range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shift {
    /// Literal `φ`, no shift.
    None,
    /// Subtract each row's maximum (query side).
    PerRow,
    /// Subtract the maximum over the whole batch (key side).
    Global,
}

/// Unshifted log-features `wᵢᵀx − ‖x‖²/2` for every row of `x` (`N x m`).
pub fn prf_log_features(tape: &mut Tape, x: Var, proj: &ProjectionMatrix) -> Result<Var> {
    let (_, d) = tape.shape(x);
    if d != proj.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "prf_log_features",
            left: tape.shape(x),
            right: proj.weights.shape(),
        });
    }
    let omega_t = tape.constant(proj.weights.transpose());
    let proj_x = tape.matmul(x, omega_t)?;
    let sq = tape.mul(x, x)?;
    let sq = tape.row_sum(sq)?;
    let half_sq = tape.scale(sq, -0.5)?;
    tape.add_col(proj_x, half_sq)
}

/// `exp(log_features − shift) / √m`. The shift is a constant for autodiff.
pub fn positive_features(
    tape: &mut Tape,
    log_features: Var,
    m: usize,
    shift: Shift,
) -> Result<Var> {
    let shifted = match shift {
        Shift::None => log_features,
        Shift::Global => {
            let max = tape.value(log_features).max();
            tape.add_scalar(log_features, -max)?
        }
        Shift::PerRow => {
            let lf = tape.value(log_features);
            let neg_max: Vec<f64> = (0..lf.rows())
                .map(|i| -lf.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let c = tape.constant(Tensor::column(neg_max));
            tape.add_col(log_features, c)?
        }
    };
    let e = tape.exp(shifted)?;
    tape.scale(e, 1.0 / (m as f64).sqrt())
}

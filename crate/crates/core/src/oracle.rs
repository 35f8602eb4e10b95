//! Brute-force `O(N²)` references: explicit attention matrices, no random
//! features and no shared sums.

use crate::error::{Error, Result};
use crate::gumbel::{GumbelDraws, Temperature};
use crate::tensor::Tensor;

/// Largest `N` any oracle accepts.
pub const MAX_ORACLE_NODES: usize = 4096;

fn check(q: &Tensor, k: &Tensor, v: Option<&Tensor>) -> Result<()> {
    let n = q.rows();
    if n > MAX_ORACLE_NODES || k.rows() > MAX_ORACLE_NODES {
        return Err(Error::OracleTooLarge(n.max(k.rows())));
    }
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            op: "oracle q/k",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if let Some(v) = v {
        if v.rows() != k.rows() {
            return Err(Error::ShapeMismatch {
                op: "oracle k/v",
                left: k.shape(),
                right: v.shape(),
            });
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("oracle values".into()));
        }
    }
    if !q.is_finite() || !k.is_finite() {
        return Err(Error::NonFinite("oracle queries/keys".into()));
    }
    Ok(())
}

/// Row-softmax of `(QKᵀ + 1 gᵀ) / τ`.
fn weights(q: &Tensor, k: &Tensor, g: Option<&[f64]>, tau: f64) -> Result<Tensor> {
    let mut logits = q.matmul_nt(k)?;
    for u in 0..logits.rows() {
        let row = logits.row_mut(u);
        if let Some(g) = g {
            for (x, gv) in row.iter_mut().zip(g) {
                *x += gv;
            }
        }
        if tau != 1.0 {
            for x in row.iter_mut() {
                *x /= tau;
            }
        }
    }
    Ok(logits.softmax_rows())
}

/// `N x N` matrix of `softmax_v(q_uᵀk_v)`.
pub fn dense_edge_probability(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    check(q, k, None)?;
    weights(q, k, None, 1.0)
}

/// `Σ_v softmax_v(q_uᵀk_v) v_v`.
pub fn dense_softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    check(q, k, Some(v))?;
    weights(q, k, None, 1.0)?.matmul(v)
}

/// `Σ_v softmax_v((q_uᵀk_v + g_v)/τ) v_v`, averaged over the samples in `g`.
pub fn dense_gumbel_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    g: &GumbelDraws,
    tau: Temperature,
) -> Result<Tensor> {
    check(q, k, Some(v))?;
    if g.nodes() != k.rows() || g.samples() == 0 {
        return Err(Error::invalid(format!(
            "{} Gumbel draws per sample for {} keys",
            g.nodes(),
            k.rows()
        )));
    }
    let mut out = Tensor::zeros(q.rows(), v.cols());
    for s in 0..g.samples() {
        out.add_assign(&weights(q, k, Some(g.sample(s)), tau.get())?.matmul(v)?);
    }
    if g.samples() > 1 {
        out = out.scale(1.0 / g.samples() as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar-loop implementation.
    fn naive(q: &Tensor, k: &Tensor, v: &Tensor, g: &[f64], tau: f64) -> Tensor {
        let n = q.rows();
        let mut out = Tensor::zeros(n, v.cols());
        for u in 0..n {
            let mut s = vec![0.0; k.rows()];
            for j in 0..k.rows() {
                let mut d = 0.0;
                for c in 0..q.cols() {
                    d += q.get(u, c) * k.get(j, c);
                }
                s[j] = ((d + g[j]) / tau).exp();
            }
            let z: f64 = s.iter().sum();
            for j in 0..k.rows() {
                for c in 0..v.cols() {
                    let cur = out.get(u, c);
                    out.set(u, c, cur + s[j] / z * v.get(j, c));
                }
            }
        }
        out
    }

    fn fixture() -> (Tensor, Tensor, Tensor) {
        let q = Tensor::from_rows(&[
            vec![0.5, -0.2],
            vec![0.1, 0.9],
            vec![-0.7, 0.3],
            vec![0.0, 0.4],
        ])
        .unwrap();
        let k = Tensor::from_rows(&[
            vec![0.3, 0.3],
            vec![-0.6, 0.1],
            vec![0.8, -0.5],
            vec![0.2, 0.7],
        ])
        .unwrap();
        let v = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, -1.0],
            vec![-0.5, 0.5],
        ])
        .unwrap();
        (q, k, v)
    }

    #[test]
    fn matches_scalar_loop() {
        let (q, k, v) = fixture();
        let a = dense_softmax_attention(&q, &k, &v).unwrap();
        assert!(a.max_abs_diff(&naive(&q, &k, &v, &[0.0; 4], 1.0)) < 1e-12);
        let g = [0.3, -1.1, 0.7, 2.0];
        let draws = GumbelDraws::from_values(1, 4, g.to_vec()).unwrap();
        let b = dense_gumbel_attention(&q, &k, &v, &draws, Temperature::new(1.0).unwrap()).unwrap();
        assert!(b.max_abs_diff(&naive(&q, &k, &v, &g, 1.0)) < 1e-12);
        let c = dense_gumbel_attention(&q, &k, &v, &draws, Temperature::new(0.3).unwrap()).unwrap();
        assert!(c.max_abs_diff(&naive(&q, &k, &v, &g, 0.3)) < 1e-12);
    }

    #[test]
    fn zero_noise_unit_temperature_is_bit_identical() {
        let (q, k, v) = fixture();
        let draws = GumbelDraws::from_values(1, 4, vec![0.0; 4]).unwrap();
        let a = dense_softmax_attention(&q, &k, &v).unwrap();
        let b = dense_gumbel_attention(&q, &k, &v, &draws, Temperature::new(1.0).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trivial_cases() {
        let v = Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(dense_softmax_attention(&q, &q, &v).unwrap(), v);

        let q = Tensor::zeros(3, 2);
        let k = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![6.0]]).unwrap();
        let out = dense_softmax_attention(&q, &k, &v).unwrap();
        assert!(out.data().iter().all(|x| (x - 3.0).abs() < 1e-12));

        let p = dense_edge_probability(&k, &Tensor::ones(3, 2)).unwrap();
        assert!(p.data().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn closed_form_two_nodes() {
        let q = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![3f64.ln()], vec![0.0]]).unwrap();
        let p = dense_edge_probability(&q, &k).unwrap();
        assert!((p.get(0, 0) - 0.75).abs() < 1e-12 && (p.get(0, 1) - 0.25).abs() < 1e-12);
        for u in 0..2 {
            assert!((p.row(u).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn low_temperature_is_one_hot() {
        let (q, k, v) = fixture();
        let g = [0.1, 0.5, -0.2, 0.0];
        let draws = GumbelDraws::from_values(1, 4, g.to_vec()).unwrap();
        let out =
            dense_gumbel_attention(&q, &k, &v, &draws, Temperature::new(0.001).unwrap()).unwrap();
        let logits = q.matmul_nt(&k).unwrap();
        for u in 0..4 {
            let best = (0..4)
                .max_by(|&a, &b| {
                    (logits.get(u, a) + g[a])
                        .partial_cmp(&(logits.get(u, b) + g[b]))
                        .unwrap()
                })
                .unwrap();
            for c in 0..2 {
                assert!((out.get(u, c) - v.get(best, c)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn guards() {
        let big = Tensor::zeros(MAX_ORACLE_NODES + 1, 1);
        assert!(matches!(
            dense_softmax_attention(&big, &big, &big),
            Err(Error::OracleTooLarge(_))
        ));
        let mut q = Tensor::zeros(2, 1);
        q.set(0, 0, f64::NAN);
        assert!(dense_edge_probability(&q, &Tensor::zeros(2, 1)).is_err());
    }
}

//! Reverse-mode gradients against central finite differences.

use nodeformer::verify::{relative_error, GRADIENT_FLOOR};
use nodeformer::{Result, Tape, Tensor, Var};
use proptest::prelude::*;

const STEP: f64 = 1e-4;
/// The matrix-chain objective is quadratic in each entry, so any step is exact.
const QUADRATIC_STEP: f64 = 0.5;
const TOLERANCE: f64 = 1e-6;
const COMPOSITE_FLOOR: f64 = 1e-2;
const COMPOSITE_TOLERANCE: f64 = 1e-5;

/// Max relative error between the tape gradient of `f` at each leaf and a
/// five-point central difference of `f` in that leaf, with `floor` as the
/// smallest
/// denominator.
fn check(
    leaves: &[Tensor],
    step: f64,
    floor: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars).unwrap();
    tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = tape.grad(vars[li]).unwrap().clone();
        for j in 0..leaf.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let vs: Vec<Var> = leaves
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let mut x = x.clone();
                        if i == li {
                            x.data_mut()[j] += delta;
                        }
                        t.param(x)
                    })
                    .collect();
                let r = f(&mut t, &vs).unwrap();
                t.value(r).item()
            };
            let numeric = (8.0 * (eval(step) - eval(-step))
                - (eval(2.0 * step) - eval(-2.0 * step)))
                / (12.0 * step);
            worst = worst.max(relative_error(analytic.data()[j], numeric, floor));
        }
    }
    worst
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |d| Tensor::from_vec(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_chain(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 3)) {
        let err = check(&[a, b, c], QUADRATIC_STEP, GRADIENT_FLOOR, |t, v| {
            let ab = t.matmul(v[0], v[1])?;
            let abc = t.matmul(ab, v[2])?;
            let sq = t.mul(abc, abc)?;
            t.sum(sq)
        });
        prop_assert!(err < TOLERANCE, "relative error {err}");
    }

    #[test]
    fn kernelized_ratio(q in matrix(4, 3), k in matrix(4, 3), v in matrix(4, 2)) {
        let err = check(&[q, k, v], STEP, COMPOSITE_FLOOR, |t, x| {
            let eq = t.exp(x[0])?;
            let ek = t.exp(x[1])?;
            let ekt = t.transpose(ek)?;
            let kv = t.matmul(ekt, x[2])?;
            let num = t.matmul(eq, kv)?;
            let ks = t.col_sum(ek)?;
            let kst = t.transpose(ks)?;
            let den = t.matmul(eq, kst)?;
            let out = t.div_col(num, den)?;
            let e = t.elu(out, 1.0)?;
            t.sum(e)
        });
        prop_assert!(err < COMPOSITE_TOLERANCE, "relative error {err}");
    }

    #[test]
    fn log_space_and_gates(a in matrix(3, 5), w in matrix(3, 1)) {
        let err = check(&[a, w], STEP, COMPOSITE_FLOOR, |t, x| {
            let lse = t.log_sum_exp_rows(x[0])?;
            let ls = t.log_softmax_rows(x[0])?;
            let sig = t.sigmoid(x[1])?;
            let gated = t.mul_col(ls, sig)?;
            let lsig = t.log_sigmoid(x[1])?;
            let a = t.sum(gated)?;
            let b = t.mul(lse, lsig)?;
            let b = t.sum(b)?;
            t.add(a, b)
        });
        prop_assert!(err < COMPOSITE_TOLERANCE, "relative error {err}");
    }
}

#[test]
fn gather_and_propagate() {
    let x = Tensor::from_rows(&[vec![0.3, -0.2], vec![1.1, 0.4], vec![-0.7, 0.9]]).unwrap();
    let err = check(&[x], STEP, COMPOSITE_FLOOR, |t, v| {
        let g = t.gather_rows(v[0], [2usize, 0, 2].as_slice().into())?;
        let p = t.propagate(
            v[0],
            [(0usize, 1usize), (1, 2), (2, 0)].as_slice().into(),
            3,
        )?;
        let gg = t.mul(g, g)?;
        let pe = t.exp(p)?;
        let a = t.sum(gg)?;
        let b = t.sum(pe)?;
        t.add(a, b)
    });
    assert!(err < COMPOSITE_TOLERANCE, "relative error {err}");
}

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, GradCheckOptions};
use super::*;
use crate::error::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

fn assert_fd<F>(inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    let r = check_gradients(inputs, GradCheckOptions::default(), f).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn softmax_of_uniform_input() {
    let mut tape = Tape::new();
    let x = tape.constant(&Tensor::zeros(&[1, 4]));
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y), &[0.25, 0.25, 0.25, 0.25]);
}

#[test]
fn identity_matmul_returns_operand() {
    let m = rand_t(&[3, 3], 1);
    let mut tape = Tape::new();
    let i = tape.constant(&Tensor::eye(3));
    let mv = tape.constant(&m);
    let y = tape.matmul(i, mv).unwrap();
    assert_eq!(tape.value(y), m.data());
}

#[test]
fn cross_entropy_of_certain_correct_prediction_is_zero() {
    let mut tape = Tape::new();
    let logits = tape
        .constant_owned(vec![1, 3], vec![1000.0, 0.0, 0.0])
        .unwrap();
    let l = tape.cross_entropy(logits, &[0], 0.0).unwrap();
    assert_eq!(tape.scalar(l).unwrap(), 0.0);
}

#[test]
fn square_derivative_at_three() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::scalar(3.0).with_grad());
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[6.0]);
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::scalar(2.0).with_grad());
    let unused = tape.leaf(&Tensor::full(&[2], 5.0).with_grad());
    let c = tape.constant(&Tensor::scalar(7.0));
    let y = tape.mul(x, c).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(unused).unwrap(), &[0.0, 0.0]);
    assert!(g.get(c).is_none());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(&[2]).with_grad());
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    assert!(matches!(Tape::new().backward(x), Err(Error::Contract(_))));
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(&Tensor::zeros(&[2, 3]));
    let b = tape.constant(&Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_finite_results_are_raised() {
    let mut tape = Tape::new();
    let x = tape.constant_owned(vec![2], vec![1.0, -1.0]).unwrap();
    assert!(matches!(tape.log(x), Err(Error::Numeric { .. })));
    let z = tape.constant_owned(vec![1], vec![0.0]).unwrap();
    assert!(matches!(tape.log(z), Err(Error::Numeric { .. })));
    let nan = tape.constant_owned(vec![1, 2], vec![f64::NAN, 0.0]).unwrap();
    assert!(matches!(tape.softmax(nan), Err(Error::Numeric { .. })));
}

#[test]
fn masked_softmax_ignores_filled_entries() {
    let mut tape = Tape::new();
    let x = tape.constant(&rand_t(&[2, 4], 3));
    let m = tape
        .masked_fill(x, &[false, true, false, true, true, true, true, false], f64::NEG_INFINITY)
        .unwrap();
    let y = tape.softmax(m).unwrap();
    let v = tape.value(y);
    assert_eq!(v[1], 0.0);
    assert_eq!(v[3], 0.0);
    assert!((v[7] - 1.0).abs() < 1e-15);
    let all = tape
        .masked_fill(x, &[true; 8], f64::NEG_INFINITY)
        .unwrap();
    assert!(tape.softmax(all).is_err());
}

#[test]
fn softmax_rows_sum_to_one_and_layer_norm_centres() {
    let mut tape = Tape::new();
    let x = tape.constant(&Tensor::uniform(&[16, 9], -30.0, 30.0, &mut rng(4)));
    let y = tape.softmax(x).unwrap();
    for row in tape.value(y).chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let g = tape.constant(&Tensor::full(&[9], 1.0));
    let b = tape.constant(&Tensor::zeros(&[9]));
    let n = tape.layer_norm(x, g, b, 1e-5).unwrap();
    for row in tape.value(n).chunks(9) {
        assert!((row.iter().sum::<f64>() / 9.0).abs() < 1e-7);
    }
}

#[test]
fn finite_differences_matmul_family() {
    assert_fd(&[rand_t(&[3, 4], 1), rand_t(&[4, 5], 2)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        let w = t.constant(&rand_t(&[3, 5], 9));
        let y = t.mul(y, w)?;
        t.sum(y)
    });
    assert_fd(&[rand_t(&[3, 4], 3), rand_t(&[6, 4], 4)], |t, v| {
        let y = t.matmul_nt(v[0], v[1])?;
        let w = t.constant(&rand_t(&[3, 6], 8));
        let y = t.mul(y, w)?;
        t.sum(y)
    });
}

#[test]
fn finite_differences_elementwise() {
    assert_fd(&[rand_t(&[2, 3], 5), rand_t(&[2, 3], 6), rand_t(&[3], 7)], |t, v| {
        let a = t.add(v[0], v[1])?;
        let b = t.add_row(a, v[2])?;
        let c = t.mul(b, v[0])?;
        let d = t.scale(c, -1.7)?;
        t.mean(d)
    });
    let pos = Tensor::uniform(&[2, 3], 0.5, 2.0, &mut rng(8));
    assert_fd(&[pos], |t, v| {
        let l = t.log(v[0])?;
        t.sum(l)
    });
    // Keep relu inputs away from the kink.
    let mut r = rand_t(&[3, 3], 9);
    r.data_mut().iter_mut().for_each(|x| {
        if x.abs() < 0.1 {
            *x += 0.3
        }
    });
    assert_fd(&[r], |t, v| {
        let y = t.relu(v[0])?;
        let y = t.mul(y, y)?;
        t.sum(y)
    });
}

#[test]
fn finite_differences_softmax_layernorm_ce() {
    assert_fd(&[rand_t(&[3, 5], 10)], |t, v| {
        let s = t.softmax(v[0])?;
        let w = t.constant(&rand_t(&[3, 5], 11));
        let y = t.mul(s, w)?;
        t.sum(y)
    });
    assert_fd(&[rand_t(&[4, 6], 12), rand_t(&[6], 13), rand_t(&[6], 14)], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        let w = t.constant(&rand_t(&[4, 6], 15));
        let y = t.mul(y, w)?;
        t.sum(y)
    });
    for eps in [0.0, 0.1] {
        assert_fd(&[rand_t(&[4, 7], 16)], move |t, v| {
            t.cross_entropy(v[0], &[0, 3, 6, 2], eps)
        });
    }
}

#[test]
fn finite_differences_indexing_ops() {
    assert_fd(&[rand_t(&[5, 3], 17)], |t, v| {
        let e = t.embedding(v[0], &[4, 0, 4, 2])?;
        let g = t.gather_rows(e, &[3, 0, 0])?;
        let c = t.concat(&[e, g])?;
        let m = t.masked_fill(c, &[true, false, false].repeat(7), 0.0)?;
        let w = t.constant(&rand_t(&[7, 3], 18));
        let y = t.mul(m, w)?;
        t.sum(y)
    });
}

#[test]
fn finite_differences_attention() {
    let segs = [
        AttnSegment {
            q_start: 0,
            q_len: 3,
            k_start: 0,
            k_len: 4,
        },
        AttnSegment {
            q_start: 3,
            q_len: 2,
            k_start: 4,
            k_len: 2,
        },
    ];
    for causal in [false, true] {
        assert_fd(
            &[rand_t(&[5, 8], 19), rand_t(&[6, 8], 20), rand_t(&[6, 8], 21)],
            move |t, v| {
                let sel: &dyn KeySelector = if causal { &CausalKeys } else { &AllKeys };
                let o = t.attention(v[0], v[1], v[2], 2, &segs, sel)?;
                let w = t.constant(&rand_t(&[5, 8], 22));
                let y = t.mul(o, w)?;
                t.sum(y)
            },
        );
    }
}

#[test]
fn finite_differences_three_layer_mlp() {
    let mut r = rng(23);
    let inputs = vec![
        Tensor::xavier_uniform(&[6, 8], &mut r),
        Tensor::xavier_uniform(&[8, 8], &mut r),
        Tensor::xavier_uniform(&[8, 4], &mut r),
        Tensor::uniform(&[8], -0.1, 0.1, &mut r),
        Tensor::uniform(&[8], -0.1, 0.1, &mut r),
    ];
    let x = Tensor::uniform(&[5, 6], -1.0, 1.0, &mut r);
    let mlp = move |t: &mut Tape, v: &[Var]| {
        let xin = t.constant(&x);
        let h = t.matmul(xin, v[0])?;
        let h = t.add_row(h, v[3])?;
        let h = t.softmax(h)?;
        let h = t.matmul(h, v[1])?;
        let h = t.add_row(h, v[4])?;
        let h = t.layer_norm(h, v[4], v[3], 1e-5)?;
        let o = t.matmul(h, v[2])?;
        t.cross_entropy(o, &[0, 1, 2, 3, 1], 0.0)
    };
    let r = check_gradients(&inputs, GradCheckOptions::default(), mlp).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let a = tape.param(&rand_t(&[7, 5], 30));
        let b = tape.param(&rand_t(&[5, 5], 31));
        let y = tape.matmul(a, b).unwrap();
        let s = tape.softmax(y).unwrap();
        let l = tape.log(s).unwrap();
        let m = tape.mean(l).unwrap();
        let g = tape.backward(m).unwrap();
        (g.tensor(a).unwrap(), g.tensor(b).unwrap())
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert!(a1.bit_eq(&a2) && b1.bit_eq(&b2));
}

#[test]
fn inference_tape_refuses_backward() {
    let mut tape = Tape::inference();
    let x = tape.param(&Tensor::scalar(1.0));
    let y = tape.scale(x, 2.0).unwrap();
    assert_eq!(tape.value(y), &[2.0]);
    assert!(tape.backward(y).is_err());
}

proptest! {
    #[test]
    fn container_round_trip_is_bit_exact(
        values in proptest::collection::vec(proptest::num::f64::ANY, 1..40),
        rows in 1usize..4,
    ) {
        let cols = values.len();
        let mut data = Vec::new();
        for _ in 0..rows { data.extend_from_slice(&values); }
        let mut tensors = std::collections::BTreeMap::new();
        tensors.insert("a.weight".to_string(), Tensor::new(vec![rows, cols], data).unwrap());
        tensors.insert("b".to_string(), Tensor::scalar(values[0]));
        let meta = serde_json::json!({"step": 3});
        let mut buf = Vec::new();
        container::write_container(&mut buf, &meta, &tensors).unwrap();
        let (m2, t2) = container::read_container(buf.as_slice()).unwrap();
        prop_assert_eq!(m2, meta);
        prop_assert_eq!(t2.len(), 2);
        for (k, v) in &tensors {
            prop_assert!(t2[k].bit_eq(v));
        }
    }
}

#[test]
fn container_rejects_truncation_and_bad_magic() {
    let mut tensors = std::collections::BTreeMap::new();
    tensors.insert("w".to_string(), rand_t(&[2, 2], 40));
    let mut buf = Vec::new();
    container::write_container(&mut buf, &serde_json::json!({}), &tensors).unwrap();
    assert!(container::read_container(&buf[..buf.len() - 3]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(container::read_container(bad.as_slice()), Err(Error::Format(_))));
}

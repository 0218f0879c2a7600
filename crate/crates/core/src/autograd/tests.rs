use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    t(
        shape,
        &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
    )
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);

    let x = tape.constant(t(
        &[2, 3, 2],
        &[1.0, -2.0, 3.0, 0.5, 7.0, 1.0, 0.0, 2.0, 4.0, 4.0, 1.0, 9.0],
    ));
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = tape.matmul(x, eye).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    assert_eq!(tape.shape(y), &[2, 3, 2]);

    let p = tape.constant(Tensor::zeros(&[2, 3]));
    let q = tape.constant(Tensor::zeros(&[4, 5]));
    assert!(matches!(tape.matmul(p, q), Err(Error::Shape(_))));
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
    let z = tape.constant(Tensor::zeros(&[3]));
    let s = tape.add(x, z).unwrap();
    assert_eq!(tape.value(s), tape.value(x));

    let mut tape = Tape::new();
    let zeros = tape.constant(Tensor::zeros(&[2, 2]));
    let bias = tape.param(t(&[2], &[1.0, 2.0]));
    let y = tape.add_broadcast(zeros, bias).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0, 1.0, 2.0]);
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(bias).unwrap().data(), &[2.0, 2.0]);

    let mut tape = Tape::new();
    let x = tape.param(t(&[1], &[3.0]));
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);

    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.add_broadcast(a, b).is_err());
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(
        &[3, 2],
        &[0.0, 0.0, 1f64.ln(), 3f64.ln(), 5.0, MASK_LOGIT],
    ));
    let y = tape.softmax(x);
    let v = tape.value(y);
    assert_eq!(&v[..2], &[0.5, 0.5]);
    assert!(close(&v[2..4], &[0.25, 0.75], 1e-15));
    assert!(v[5] < 1e-300);
    assert_eq!(v[4], 1.0);
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[5.0, 5.0, 0.0, 2.0]));
    let gain = tape.constant(Tensor::full(&[2], 1.0));
    let bias = tape.constant(Tensor::zeros(&[2]));
    let y = tape.layer_norm(x, gain, bias, 1e-12).unwrap();
    assert!(close(tape.value(y), &[0.0, 0.0, -1.0, 1.0], 1e-9));

    let zero_gain = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(t(&[2], &[0.3, -0.7]));
    let y = tape.layer_norm(x, zero_gain, b, 1e-5).unwrap();
    assert_eq!(tape.value(y), &[0.3, -0.7, 0.3, -0.7]);
}

#[test]
fn gelu_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, 1.0, 10.0]));
    let y = tape.gelu(x);
    let v = tape.value(y);
    assert_eq!(v[0], 0.0);
    // Φ(1) = 0.841344746...
    assert!((v[1] - 0.841_344_746_068_543).abs() < 1e-12);
    assert!((v[2] - 10.0).abs() < 1e-9);
}

#[test]
fn embedding_examples() {
    let mut tape = Tape::new();
    let table = tape.param(t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
    let e = tape.embedding(table, &[0], &[1]).unwrap();
    assert_eq!(tape.value(e), &[0.1, 0.2]);
    assert!(matches!(
        tape.embedding(table, &[3], &[1]),
        Err(Error::OutOfRange { index: 3, size: 3 })
    ));

    let twice = tape.embedding(table, &[2, 2], &[2]).unwrap();
    let loss = tape.sum(twice);
    let g = tape.backward(loss).unwrap();
    assert_eq!(
        g.get(table).unwrap().data(),
        &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]
    );
}

#[test]
fn dropout_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
    for training in [true, false] {
        let y = tape.dropout(x, 0.0, training, 9).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }
    let y = tape.dropout(x, 0.5, false, 9).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    assert!(tape.dropout(x, 1.0, true, 9).is_err());

    let n = 1_000_000;
    let ones = tape.constant(Tensor::full(&[n], 1.0));
    let y = tape.dropout(ones, 0.5, true, 42).unwrap();
    let mean = tape.value(y).iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!(tape.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let uniform = tape.constant(t(&[2, 2], &[0.5, 0.5, 0.5, 0.5]));
    let l = tape
        .masked_cross_entropy(uniform, &[0, 1], &[1, 1], &[1.0, 1.0])
        .unwrap();
    assert!((tape.value(l)[0] - std::f64::consts::LN_2).abs() < 1e-15);

    let perfect = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let l = tape
        .masked_cross_entropy(perfect, &[0, 1], &[1, 1], &[1.0, 1.0])
        .unwrap();
    assert_eq!(tape.value(l)[0], 0.0);

    let p = tape.constant(t(&[3, 2], &[0.1, 0.9, 0.5, 0.5, 0.99, 0.01]));
    let l = tape
        .masked_cross_entropy(p, &[1, 0, 1], &[1, 1, 0], &[1.0, 1.0])
        .unwrap();
    let expected = (-(0.9f64).ln() - (0.5f64).ln()) / 2.0;
    assert!((tape.value(l)[0] - expected).abs() < 1e-15);
    assert!((expected - 0.399).abs() < 1e-3);

    assert!(tape
        .masked_cross_entropy(p, &[1, 0, 1], &[0, 0, 0], &[1.0, 1.0])
        .is_err());

    let zero = tape.constant(t(&[1, 2], &[1.0, 0.0]));
    let l = tape
        .masked_cross_entropy(zero, &[1], &[1], &[1.0, 1.0])
        .unwrap();
    assert!((tape.value(l)[0] + PROB_FLOOR.ln()).abs() < 1e-12);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2, 3], &[0.3, -1.0, 2.0, 0.0, 0.5, 0.5]));
    let y = tape.softmax(x);
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));

    let mut tape = Tape::new();
    let x = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let w = tape.param(t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]));
    let unused = tape.param(t(&[2], &[1.0, 1.0]));
    let xw = tape.matmul(x, w).unwrap();
    let loss = tape.sum(xw);
    let g = tape.backward(loss).unwrap();
    // d/dW sum(xW) = column sums of x broadcast across W's columns
    assert_eq!(g.get(w).unwrap().data(), &[9.0, 9.0, 12.0, 12.0]);
    assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    assert!(tape.backward(x).is_err());
    let tape = Tape::new();
    let mut other = Tape::new();
    let stray = other.constant(Tensor::scalar(1.0));
    let stray = other.scale(stray, 2.0);
    assert!(tape.backward(stray).is_err());
}

#[test]
fn finite_diff_examples() {
    let linear = |tape: &mut Tape, v: &[Var]| {
        let s = tape.scale(v[0], 3.0);
        Ok(tape.sum(s))
    };
    let r = finite_diff_check(linear, &[t(&[3], &[0.1, 0.2, 0.3])], 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-10, "{r:?}");

    let squares = |tape: &mut Tape, v: &[Var]| {
        let sq = tape.mul(v[0], v[0])?;
        Ok(tape.sum(sq))
    };
    let x = t(&[2], &[1.0, 2.0]);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = squares(&mut tape, &[xv]).unwrap();
    assert_eq!(
        tape.backward(loss).unwrap().get(xv).unwrap().data(),
        &[2.0, 4.0]
    );
    let r = finite_diff_check(squares, &[x], 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random(&[3, 4], &mut rng);
    let x = random(&[2, 3], &mut rng);
    let build = |tape: &mut Tape, wv: Var, which: u8| {
        let xv = tape.constant(x.clone());
        let h = tape.matmul(xv, wv).unwrap();
        let out = if which == 0 {
            tape.tanh(h)
        } else {
            tape.softmax(h)
        };
        tape.sum(out)
    };
    let grad_of = |a: f64, b: f64| {
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let l1 = build(&mut tape, wv, 0);
        let l2 = build(&mut tape, wv, 1);
        let l1 = tape.scale(l1, a);
        let l2 = tape.scale(l2, b);
        let l = tape.add(l1, l2).unwrap();
        tape.backward(l).unwrap().take(wv).unwrap()
    };
    let (g1, g2, g) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(2.5, -0.75));
    let combined: Vec<f64> = g1
        .data()
        .iter()
        .zip(g2.data())
        .map(|(a, b)| 2.5 * a - 0.75 * b)
        .collect();
    assert!(close(g.data(), &combined, 1e-12));
}

#[test]
fn ops_do_not_mutate_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 4], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let _ = tape.softmax(xv);
    let _ = tape.layer_norm(xv, g, b, 1e-5).unwrap();
    let _ = tape.gelu(xv);
    let _ = tape.dropout(xv, 0.3, true, 1).unwrap();
    let _ = tape.mask_rows(xv, vec![0.0, 1.0]).unwrap();
    assert_eq!(tape.value(xv), x.data());
}

/// Random inputs for one op, plus a closure building `sum(op(...) * probe)` so
/// every output coordinate contributes a distinct weight.
type LossFn = Box<dyn Fn(&mut Tape, &[Var]) -> crate::error::Result<Var>>;

fn op_loss(op: usize, dims: (usize, usize, usize), seed: u64) -> (Vec<Tensor>, LossFn) {
    let (a, b, c) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // probe weights bounded away from zero keep every coordinate's gradient resolvable
    let probe_for = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        let w: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0.5..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        t(shape, &w)
    };
    match op {
        0 => {
            let probe = probe_for(&[a, c], &mut rng);
            let params = vec![random(&[a, b], &mut rng), random(&[b, c], &mut rng)];
            (
                params,
                Box::new(move |tape, v| {
                    let y = tape.matmul(v[0], v[1])?;
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(y, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        1 => {
            let probe = probe_for(&[a, b], &mut rng);
            let params = vec![
                random(&[a, b], &mut rng),
                random(&[a, b], &mut rng),
                random(&[b], &mut rng),
            ];
            (
                params,
                Box::new(move |tape, v| {
                    let s = tape.sub(v[0], v[1])?;
                    let m = tape.mul(s, v[0])?;
                    let y = tape.add_broadcast(m, v[2])?;
                    let y = tape.scale(y, 0.7);
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(y, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        2 => {
            let probe = probe_for(&[a, b], &mut rng);
            let params = vec![random(&[a, b], &mut rng)];
            (
                params,
                Box::new(move |tape, v| {
                    let y = tape.softmax(v[0]);
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(y, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        3 => {
            // at width 2 the normalized output is almost constant in x
            let probe = probe_for(&[a, b.max(3)], &mut rng);
            let params = vec![
                random(&[a, b.max(3)], &mut rng),
                random(&[b.max(3)], &mut rng),
                random(&[b.max(3)], &mut rng),
            ];
            (
                params,
                Box::new(move |tape, v| {
                    let y = tape.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(y, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        4 => {
            let probe = probe_for(&[a, b], &mut rng);
            // gelu has a stationary point near -0.75
            let x: Vec<f64> = (0..a * b).map(|_| rng.gen_range(-0.4..1.5)).collect();
            let params = vec![t(&[a, b], &x)];
            (
                params,
                Box::new(move |tape, v| {
                    let g = tape.gelu(v[0]);
                    let y = tape.tanh(g);
                    let y = tape.mask_rows(y, (0..a).map(|i| (i % 2) as f64 + 0.5).collect())?;
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(y, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        5 => {
            let ids: Vec<u32> = (0..a * 2).map(|_| rng.gen_range(0..b as u32)).collect();
            let probe = probe_for(&[a, 2, c], &mut rng);
            let params = vec![random(&[b, c], &mut rng)];
            (
                params,
                Box::new(move |tape, v| {
                    let e = tape.embedding(v[0], &ids, &[a, 2])?;
                    let d = tape.dropout(e, 0.3, true, 11)?;
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(d, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        6 => {
            let heads = if c % 2 == 0 { 2 } else { 1 };
            let mut mask: Vec<u8> = (0..a * b).map(|_| rng.gen_range(0..2)).collect();
            for r in 0..a {
                mask[r * b] = 1;
            }
            let probe = probe_for(&[a, b, c], &mut rng);
            let params = vec![
                random(&[a, b, c], &mut rng),
                random(&[a, b, c], &mut rng),
                random(&[a, b, c], &mut rng),
            ];
            (
                params,
                Box::new(move |tape, v| {
                    let y = tape.attention(v[0], v[1], v[2], &mask, heads)?;
                    let p = tape.constant(probe.clone());
                    let y = tape.mul(y, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        7 => {
            let weights: Vec<f64> = (0..a * b).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probe = probe_for(&[a, c], &mut rng);
            let params = vec![random(&[a, b, c], &mut rng)];
            (
                params,
                Box::new(move |tape, v| {
                    let y = tape.weighted_sum(v[0], weights.clone())?;
                    let r = tape.reshape(y, &[a * c])?;
                    let p = tape.constant(Tensor::new(vec![a * c], probe.data().to_vec())?);
                    let y = tape.mul(r, p)?;
                    Ok(tape.sum(y))
                }),
            )
        }
        _ => {
            let labels: Vec<u8> = (0..a).map(|_| rng.gen_range(0..2)).collect();
            let mut mask: Vec<u8> = (0..a).map(|_| rng.gen_range(0..2)).collect();
            mask[0] = 1;
            let params = vec![random(&[a, 2], &mut rng)];
            (
                params,
                Box::new(move |tape, v| {
                    let p = tape.softmax(v[0]);
                    tape.masked_cross_entropy(p, &labels, &mask, &[1.0, 2.5])
                }),
            )
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_op_passes_gradcheck(op in 0usize..9, a in 1usize..=8, b in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let (params, f) = op_loss(op, (a, b, c), seed);
        let r = finite_diff_check(f, &params, 3e-5).unwrap();
        prop_assert!(r.max_rel_error < 1e-5, "op {} dims {:?}: {:?}", op, (a, b, c), r);
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>(), spread in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-spread..spread)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[rows, cols], &data));
        let y = tape.softmax(x);
        for row in tape.value(y).chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

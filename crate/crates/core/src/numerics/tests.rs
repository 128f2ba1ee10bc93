use proptest::prelude::{prop_assert, proptest};

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec())
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect())
}

fn eval(f: impl FnOnce(&mut Tape) -> Var) -> Tensor {
    let mut tape = Tape::new();
    let out = f(&mut tape);
    tape.value(out).clone()
}

#[test]
fn matmul_examples() {
    let b = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let eye = eval(|tp| {
        let i = tp.constant(Tensor::eye(2));
        let bv = tp.constant(b.clone());
        tp.matmul(i, bv).unwrap()
    });
    assert_eq!(eye, b);

    let out = eval(|tp| {
        let a = tp.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = tp.constant(t(&[2, 1], &[1.0, 1.0]));
        tp.matmul(a, c).unwrap()
    });
    assert_eq!(out.data(), &[3.0, 7.0]);

    let zero = eval(|tp| {
        let z = tp.constant(Tensor::zeros(&[3, 2]));
        let bv = tp.constant(b.clone());
        tp.matmul(z, bv).unwrap()
    });
    assert!(zero.data().iter().all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let c = tape.constant(Tensor::zeros(&[2, 3]));
    let msg = tape.matmul(a, c).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn conv1d_examples() {
    // 256 samples, kernel = stride = 5
    let out = eval(|tp| {
        let x = tp.constant(Tensor::zeros(&[1, 256]));
        let w = tp.constant(Tensor::ones(&[1, 1, 5]));
        tp.conv1d(x, w, 5, Padding::None).unwrap()
    });
    assert_eq!(out.shape(), &[1, 51]);

    let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0]);
    let out = eval(|tp| {
        let xv = tp.constant(x.clone());
        let w = tp.constant(t(&[2, 2, 1], &[1.0, 0.0, 0.0, 1.0]));
        tp.conv1d(xv, w, 1, Padding::None).unwrap()
    });
    assert_eq!(out, x);

    let out = eval(|tp| {
        let xv = tp.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = tp.constant(t(&[1, 1, 3], &[1.0, 1.0, 1.0]));
        tp.conv1d(xv, w, 1, Padding::Symmetric(1)).unwrap()
    });
    assert_eq!(out.data(), &[3.0, 6.0, 5.0]);

    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::zeros(&[1, 2]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 3]));
    assert!(matches!(
        tape.conv1d(xv, w, 1, Padding::None),
        Err(crate::Error::EmptyOutput { .. })
    ));
}

#[test]
fn conv_length_formula_exhaustive() {
    for k in [1usize, 2, 5, 10, 25] {
        for len in k..=512 {
            assert_eq!(
                conv_output_len(len, k, k, Padding::None),
                Some((len - k) / k + 1),
                "len {len} k {k}"
            );
        }
    }
}

#[test]
fn elementwise_examples() {
    assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(silu(0.0), 0.0);
    assert!((gelu(10.0) - 10.0).abs() < 1e-12);
    assert!(gelu(-10.0).abs() < 1e-12);
    assert_eq!(softplus(40.0), 40.0);
    assert!((softplus_inv(softplus(0.37)) - 0.37).abs() < 1e-12);
}

#[test]
fn broadcasting_add_and_mul() {
    let out = eval(|tp| {
        let a = tp.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tp.constant(t(&[3], &[10.0, 20.0, 30.0]));
        tp.add(a, b).unwrap()
    });
    assert_eq!(out.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let out = eval(|tp| {
        let a = tp.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tp.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        tp.mul(a, b).unwrap()
    });
    assert_eq!(out.shape(), &[2, 3, 2]);
    assert_eq!(out.at(&[1, 2, 1]), 12.0);
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.add(a, b).is_err());
}

#[test]
fn division_by_zero_propagates_infinity() {
    let out = eval(|tp| {
        let a = tp.constant(t(&[2], &[1.0, -1.0]));
        let b = tp.constant(t(&[2], &[0.0, 0.0]));
        tp.div(a, b).unwrap()
    });
    assert_eq!(out.data(), &[f64::INFINITY, f64::NEG_INFINITY]);
}

#[test]
fn layernorm_examples() {
    let ln = |x: Tensor, beta: f64| {
        let d = *x.shape().last().unwrap();
        eval(|tp| {
            let xv = tp.constant(x);
            let g = tp.constant(Tensor::ones(&[d]));
            let b = tp.constant(Tensor::full(&[d], beta));
            tp.layernorm(xv, g, b, 1e-5).unwrap()
        })
    };
    let out = ln(t(&[1, 4], &[2.0; 4]), 0.0);
    assert!(out.data().iter().all(|&v| v == 0.0));
    let out = ln(t(&[1, 2], &[1.0, -1.0]), 0.0);
    assert!((out.data()[0] - 1.0).abs() < 1e-5 && (out.data()[1] + 1.0).abs() < 1e-5);
    let out = ln(t(&[1, 3], &[0.5; 3]), 0.7);
    assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

#[test]
fn batchnorm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 1, 1], &[0.0, 2.0]));
    let g = tape.constant(Tensor::ones(&[1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let (y, stats) = tape.batchnorm1d(x, g, b, None, 1e-5).unwrap();
    let y = tape.value(y).data().to_vec();
    // population variance 1 → (x − 1)/√(1 + eps)
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y[0] + s).abs() < 1e-15 && (y[1] - s).abs() < 1e-15);
    let (mean, var) = stats.unwrap();
    assert_eq!(mean.data(), &[1.0]);
    assert_eq!(var.data(), &[2.0]); // unbiased

    // eval with initial statistics is the affine map up to eps
    let mut tape = Tape::new();
    let data = t(&[1, 2, 3], &[0.1, -0.4, 2.0, 1.0, 0.0, -3.0]);
    let x = tape.constant(data.clone());
    let g = tape.constant(Tensor::ones(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let (rm, rv) = (Tensor::zeros(&[2]), Tensor::ones(&[2]));
    let (y, stats) = tape.batchnorm1d(x, g, b, Some((&rm, &rv)), 1e-5).unwrap();
    assert!(stats.is_none());
    for (a, e) in tape.value(y).data().iter().zip(data.data()) {
        assert!((a - e).abs() < 1e-4 * e.abs().max(1.0));
    }
}

#[test]
fn softmax_examples() {
    let out = eval(|tp| {
        let x = tp.constant(Tensor::zeros(&[1, 7]));
        tp.softmax(x, 1)
    });
    assert!(out.data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    let out = eval(|tp| {
        let x = tp.constant(t(&[2], &[0.0, 3f64.ln()]));
        tp.softmax(x, 0)
    });
    assert!((out.data()[0] - 0.25).abs() < 1e-15 && (out.data()[1] - 0.75).abs() < 1e-15);
}

proptest! {
    #[test]
    fn softmax_normalized_and_shift_invariant(
        xs in proptest::collection::vec(-30.0f64..30.0, 1..20),
        c in -50.0f64..50.0,
    ) {
        let n = xs.len();
        let a = eval(|tp| { let x = tp.constant(Tensor::from_vec(&[n], xs.clone())); tp.softmax(x, 0) });
        let b = eval(|tp| {
            let x = tp.constant(Tensor::from_vec(&[n], xs.iter().map(|v| v + c).collect()));
            tp.softmax(x, 0)
        });
        prop_assert!((a.sum() - 1.0).abs() < 1e-6);
        prop_assert!(a.data().iter().all(|&v| v > 0.0));
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }
}

#[test]
fn softmax_over_middle_axis() {
    let mut rng = Rng::new(3);
    let x = random(&mut rng, &[2, 4, 3]);
    let out = eval(|tp| {
        let v = tp.constant(x.clone());
        tp.softmax(v, 1)
    });
    for i in 0..2 {
        for k in 0..3 {
            let s: f64 = (0..4).map(|j| out.at(&[i, j, k])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

/// Every primitive composed into one scalar, checked against finite differences.
#[test]
fn composed_graph_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let params = vec![
        ("x".to_string(), random(&mut rng, &[2, 3, 5])),
        ("conv_w".to_string(), random(&mut rng, &[4, 3, 2])),
        ("lin_w".to_string(), random(&mut rng, &[3, 4])),
        ("lin_b".to_string(), random(&mut rng, &[3])),
        ("gamma".to_string(), random(&mut rng, &[3])),
        ("beta".to_string(), random(&mut rng, &[3])),
        ("bn_g".to_string(), random(&mut rng, &[4])),
        ("bn_b".to_string(), random(&mut rng, &[4])),
        ("dw_w".to_string(), random(&mut rng, &[3, 3])),
        ("dw_b".to_string(), random(&mut rng, &[3])),
        ("m".to_string(), random(&mut rng, &[3, 2])),
        ("pos".to_string(), random(&mut rng, &[2]).map(|v| v.abs() + 0.5)),
    ];
    let report = grad_check(
        |tp, v| {
            let c = tp.conv1d(v[0], v[1], 2, Padding::Symmetric(1))?; // [2,4,3]
            let (c, _) = tp.batchnorm1d(c, v[6], v[7], None, 1e-5)?;
            let c = tp.gelu(c);
            let c = tp.transpose(c, 1, 2); // [2,3,4]
            let h = tp.linear(c, v[2], Some(v[3]))?; // [2,3,3]
            let h = tp.layernorm(h, v[4], v[5], 1e-5)?;
            let h = tp.silu(h);
            let h = tp.depthwise_conv_time(h, v[8], v[9])?;
            let r = tp.reverse(h, 1);
            let h = tp.add(h, r)?;
            let h = tp.softplus(h);
            let s = tp.softmax(h, 1);
            let h = tp.mul(h, s)?;
            let h = tp.tanh(h);
            let h2 = tp.reshape(h, &[6, 3])?;
            let mm = tp.matmul(h2, v[10])?; // [6,2]
            let e = tp.exp(mm);
            let l = tp.add(e, v[11])?;
            let l = tp.log(l);
            let d = tp.div(l, v[11])?;
            let sl = tp.slice(d, 0, 1, 4)?;
            let cat = tp.concat(&[sl, d], 0)?;
            let ls = tp.log_softmax(cat);
            let sm = tp.sum_axis(ls, 1, false);
            let sq = tp.mul(sm, sm)?;
            let out = tp.mean_all(sq);
            let n = tp.neg(out);
            let sub = tp.sub(n, out)?;
            Ok(tp.scale(sub, 0.25))
        },
        &params,
        1e-4,
    )
    .unwrap();
    for e in &report.entries {
        assert!(e.passed, "{} rel err {}", e.name, e.rel_error);
    }
}

#[test]
fn eval_mode_batchnorm_gradient() {
    let mut rng = Rng::new(2);
    let rm = random(&mut rng, &[3]);
    let rv = random(&mut rng, &[3]).map(|v| v * v + 0.2);
    let params = vec![
        ("x".to_string(), random(&mut rng, &[2, 3, 4])),
        ("g".to_string(), random(&mut rng, &[3])),
        ("b".to_string(), random(&mut rng, &[3])),
    ];
    let report = grad_check(
        |tp, v| {
            let (y, _) = tp.batchnorm1d(v[0], v[1], v[2], Some((&rm, &rv)), 1e-5)?;
            let y = tp.tanh(y);
            Ok(tp.sum_all(y))
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn non_participating_leaf_has_no_gradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(2.0));
    let b = tape.leaf(Tensor::scalar(5.0));
    let y = tape.mul(a, a).unwrap();
    let g = tape.backward(y);
    assert!(g.get(b).is_none());
    assert_eq!(g.get_or_zeros(&tape, b).item(), 0.0);
}

#[test]
fn shared_subexpression_accumulates() {
    // y = (a·a) + (a·a) → dy/da = 4a
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(1.5));
    let s = tape.mul(a, a).unwrap();
    let y = tape.add(s, s).unwrap();
    assert_eq!(tape.backward(y).get(a).unwrap().item(), 6.0);
}

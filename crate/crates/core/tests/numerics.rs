use approx_eq::close;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sun::numerics::{ops, finite_diff_check, Graph, NumericsError, ParamStore, Tensor, Var};

mod approx_eq {
    pub fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Scalar triple loop, independent of the row kernels.
fn matmul_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, p) = (x.shape()[0], x.shape()[1]);
    let q = w.shape()[1];
    let mut out = vec![0.0; n * q];
    for i in 0..n {
        for j in 0..q {
            let mut s = b.data()[j];
            for k in 0..p {
                s += x.data()[i * p + k] * w.data()[k * q + j];
            }
            out[i * q + j] = s;
        }
    }
    out
}

#[test]
fn affine_identity_and_hand_sum() {
    let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let out = ops::affine(&eye, &w, &Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);

    let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let w = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    let out = ops::affine(&x, &w, &Tensor::vector(vec![0.5])).unwrap();
    assert_eq!(out.data(), &[2.5]);
}

#[test]
fn affine_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_matrix(&mut rng, 3, 4);
    let w = random_matrix(&mut rng, 4, 2);
    let b = Tensor::vector(vec![0.25, -1.0]);
    let out = ops::affine(&x, &w, &b).unwrap();
    for (a, e) in out.data().iter().zip(matmul_oracle(&x, &w, &b)) {
        assert!(close(*a, e, 1e-12));
    }
}

#[test]
fn affine_shape_error_names_both_shapes() {
    let x = Tensor::zeros(vec![2, 3]);
    let w = Tensor::zeros(vec![4, 2]);
    let err = ops::affine(&x, &w, &Tensor::zeros(vec![2])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn sigmoid_fixtures() {
    let out = ops::sigmoid(&Tensor::vector(vec![0.0, 2.0, -2.0, 40.0, -40.0]));
    assert_eq!(out.data()[0], 0.5);
    // 1 / (1 + e^-2) evaluated in extended precision.
    assert!(close(out.data()[1], 0.880_797_077_977_882_3, 1e-15));
    assert!(close(out.data()[1] + out.data()[2], 1.0, 1e-15));
    assert!(out.data().iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn logsumexp_fixtures() {
    assert!(close(ops::logsumexp(&[0.0, 0.0]).unwrap(), std::f64::consts::LN_2, 1e-15));
    assert_eq!(ops::logsumexp(&[3.25]).unwrap(), 3.25);
    let big = ops::logsumexp(&[1000.0, 1000.0]).unwrap();
    assert!(big.is_finite());
    assert!(close(big, 1000.0 + std::f64::consts::LN_2, 1e-12));
    assert!(matches!(ops::logsumexp(&[]), Err(NumericsError::Domain { .. })));
}

#[test]
fn layer_norm_fixtures() {
    let c = Tensor::from_rows(&[vec![7.0, 7.0, 7.0]]).unwrap();
    assert_eq!(ops::layer_norm(&c, 1e-5).unwrap().data(), &[0.0, 0.0, 0.0]);

    let r = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
    let out = ops::layer_norm(&r, 1e-300).unwrap();
    assert!(close(out.data()[0], 1.0, 1e-12) && close(out.data()[1], -1.0, 1e-12));

    // mean 2, population variance 2/3
    let r = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let out = ops::layer_norm(&r, 1e-5).unwrap();
    let sd = (2.0f64 / 3.0 + 1e-5).sqrt();
    let expect = [-1.0 / sd, 0.0, 1.0 / sd];
    for (a, e) in out.data().iter().zip(expect) {
        assert!(close(*a, e, 1e-12));
    }
}

fn conv_fixture(width: usize, d: usize, o: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random_matrix(&mut rng, width * d, o);
    let b = Tensor::vector((0..o).map(|_| rng.random_range(-1.0..1.0)).collect());
    (k, b)
}

#[test]
fn conv_maxpool_zero_input_gives_bias() {
    let (k, b) = conv_fixture(3, 2, 4, 1);
    let out = ops::conv_maxpool(&Tensor::zeros(vec![5, 2]), &[(k, b.clone())], &[3]).unwrap();
    assert_eq!(out.data(), b.data());
}

#[test]
fn conv_maxpool_full_width_is_single_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(&mut rng, 4, 3);
    let (k, b) = conv_fixture(4, 3, 2, 3);
    let out = ops::conv_maxpool(&x, &[(k.clone(), b.clone())], &[4]).unwrap();
    let flat = Tensor::matrix(1, 12, x.data().to_vec()).unwrap();
    let direct = ops::affine(&flat, &k, &b).unwrap();
    for (a, e) in out.data().iter().zip(direct.data()) {
        assert!(close(*a, *e, 1e-12));
    }
}

#[test]
fn conv_maxpool_matches_window_enumeration() {
    let (n, d, o, w) = (5, 3, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_matrix(&mut rng, n, d);
    let (k, b) = conv_fixture(w, d, o, 5);
    let out = ops::conv_maxpool(&x, &[(k.clone(), b.clone())], &[w]).unwrap();
    for c in 0..o {
        let mut best = f64::NEG_INFINITY;
        for p in 0..=n - w {
            let mut s = b.data()[c];
            for r in 0..w {
                for j in 0..d {
                    s += x.data()[(p + r) * d + j] * k.data()[(r * d + j) * o + c];
                }
            }
            best = best.max(s);
        }
        assert!(close(out.data()[c], best, 1e-12));
    }
}

#[test]
fn conv_maxpool_concatenates_in_ascending_width_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_matrix(&mut rng, 6, 2);
    let k3 = conv_fixture(3, 2, 2, 7);
    let k5 = conv_fixture(5, 2, 2, 8);
    let both = ops::conv_maxpool(&x, &[k5.clone(), k3.clone()], &[5, 3]).unwrap();
    let only3 = ops::conv_maxpool(&x, &[k3], &[3]).unwrap();
    let only5 = ops::conv_maxpool(&x, &[k5], &[5]).unwrap();
    assert_eq!(&both.data()[..2], only3.data());
    assert_eq!(&both.data()[2..], only5.data());
}

#[test]
fn conv_maxpool_short_sequence_is_domain_error() {
    let (k, b) = conv_fixture(5, 2, 2, 9);
    let err = ops::conv_maxpool(&Tensor::zeros(vec![4, 2]), &[(k, b)], &[5]).unwrap_err();
    assert!(matches!(err, NumericsError::Domain { .. }));
}

#[test]
fn dropout_identity_cases() {
    let x = Tensor::vector((0..50).map(f64::from).collect());
    let (y, mask) = ops::dropout(&x, 0.0, 1, true).unwrap();
    assert_eq!(y.data(), x.data());
    assert!(mask.iter().all(|m| *m == 1.0));
    let (y, mask) = ops::dropout(&x, 0.7, 1, false).unwrap();
    assert_eq!(y.data(), x.data());
    assert!(mask.iter().all(|m| *m == 1.0));
    assert!(ops::dropout(&x, 1.0, 1, true).is_err());
    assert!(ops::dropout(&x, -0.1, 1, true).is_err());
}

#[test]
fn dropout_drop_fraction_within_three_sigma() {
    let n = 100_000;
    let x = Tensor::vector(vec![1.0; n]);
    let (y, mask) = ops::dropout(&x, 0.5, 42, true).unwrap();
    let dropped = mask.iter().filter(|m| **m == 0.0).count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((dropped - n as f64 * 0.5).abs() <= 3.0 * sigma, "dropped {dropped}");
    // survivors are scaled by 1 / (1 - rate)
    assert!(y.data().iter().all(|v| *v == 0.0 || *v == 2.0));
}

#[test]
fn cosine_fixtures() {
    let a = Tensor::vector(vec![1.0, 2.0]);
    assert!(close(ops::cosine_sim(&a, &a).unwrap(), 1.0, 1e-15));
    let e1 = Tensor::vector(vec![1.0, 0.0]);
    let e2 = Tensor::vector(vec![0.0, 1.0]);
    assert_eq!(ops::cosine_sim(&e1, &e2).unwrap(), 0.0);
    let b = Tensor::vector(vec![2.0, 1.0]);
    assert!(close(ops::cosine_sim(&a, &b).unwrap(), 0.8, 1e-15));
    let z = Tensor::vector(vec![0.0, 0.0]);
    assert!(matches!(ops::cosine_sim(&a, &z), Err(NumericsError::Domain { .. })));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, -2.0, 3.0]).with_grad());
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_detached_constant_gives_zero_param_grads() {
    let mut store = ParamStore::new(0);
    let w = store.xavier("w", 2, 2).unwrap();
    let mut g = Graph::with_params(&store);
    let _wv = g.param(w);
    let c = g.constant(Tensor::scalar(4.0));
    let grads = g.backward(c).unwrap();
    drop(g);
    grads.accumulate_into(&mut store);
    assert!(store.get(w).grad.as_ref().unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0]).with_grad());
    assert!(matches!(g.backward(x), Err(NumericsError::Contract(_))));
}

#[test]
fn repeated_accumulation_adds_up() {
    let mut store = ParamStore::new(0);
    let w = store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    for _ in 0..2 {
        let mut g = Graph::with_params(&store);
        let wv = g.param(w);
        let s = g.sum(wv);
        let grads = g.backward(s).unwrap();
        drop(g);
        grads.accumulate_into(&mut store);
    }
    assert_eq!(store.get(w).grad.as_deref(), Some(&[2.0, 2.0][..]));
    store.zero_grad();
    assert_eq!(store.get(w).grad.as_deref(), Some(&[0.0, 0.0][..]));
}

#[test]
fn sigmoid_composite_matches_central_differences() {
    let mut store = ParamStore::new(5);
    let w = store.xavier("w", 3, 1).unwrap();
    let x = Tensor::vector(vec![0.3, -1.2, 0.8]);
    let report = finite_diff_check::<NumericsError, _>(&store, 1e-5, |g| {
        let xv = g.constant(x.clone());
        let wv = g.param(w);
        let z = g.matmul(xv, wv)?;
        let s = g.sigmoid(z);
        Ok(g.sum(s))
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn linear_function_central_difference_is_exact() {
    let mut store = ParamStore::new(1);
    let w = store.insert("w", Tensor::vector(vec![0.5, -0.25, 1.5])).unwrap();
    let report = finite_diff_check::<NumericsError, _>(&store, 1e-5, |g| {
        let wv = g.param(w);
        let s = g.scale(wv, 3.0);
        Ok(g.sum(s))
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-9, "{report:?}");
}

/// Every differentiable op, checked in one composite on random inputs.
fn op_zoo(g: &mut Graph<'_>, ids: &[sun::numerics::ParamId]) -> Result<Var, NumericsError> {
    let x = g.param(ids[0]); // 6x4
    let w = g.param(ids[1]); // 4x4
    let b = g.param(ids[2]); // 4
    let k = g.param(ids[3]); // 12x3
    let kb = g.param(ids[4]); // 3
    let h = g.affine(x, w, b)?;
    let ln = g.layer_norm(h, 1e-5)?;
    let ge = g.gelu(ln);
    let t = g.tanh(ge);
    let sm = g.softmax_rows(t);
    let qk = g.matmul_nt(sm, x)?; // 6x6
    let cols = g.slice_cols(qk, 1, 4)?;
    let cat = g.concat_cols(&[cols, h])?; // 6x8
    let sp = g.span_means(cat, &[(0, 2), (1, 5)])?;
    let r = g.row(sp, 1)?;
    let pooled = g.conv_maxpool(x, k, kb, 3)?;
    let bc = g.broadcast_rows(pooled, 2)?;
    let gathered = g.gather_rows(bc, &[1, 0, 1])?;
    let m = g.mean(gathered);
    let sig = g.sigmoid(r);
    let a = g.slice_cols(sig, 0, 3)?;
    let cs = g.cosine_sim(a, pooled)?;
    let ex = g.exp(r);
    let cl = g.clamp(ex, 0.0, 2.0);
    let lse = g.logsumexp(cl);
    let prod = g.mul(a, pooled)?;
    let diff = g.sub(prod, pooled)?;
    let sh = g.add_scalar(diff, 0.5);
    let dr = g.mul_const(sh, vec![2.0, 0.0, 2.0])?;
    let idx = g.index(dr, 2)?;
    let parts = g.concat(&[cs, lse, m, idx])?;
    let s = g.sum(parts);
    let s2 = g.add(s, cs)?;
    Ok(g.scale(s2, 0.7))
}

#[test]
fn every_op_passes_finite_difference_check() {
    for seed in 0..5u64 {
        let mut store = ParamStore::new(seed);
        let ids = vec![
            store.uniform("x", vec![6, 4], 2.0).unwrap(),
            store.uniform("w", vec![4, 4], 2.0).unwrap(),
            store.uniform("b", vec![4], 2.0).unwrap(),
            store.uniform("k", vec![12, 3], 2.0).unwrap(),
            store.uniform("kb", vec![3], 2.0).unwrap(),
        ];
        let report = finite_diff_check(&store, 1e-5, |g| op_zoo(g, &ids)).unwrap();
        assert!(report.passes(1e-4), "seed {seed}: {:?}", report.worst());
    }
}

proptest! {
    #[test]
    fn layer_norm_rows_are_standardized(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..5)) {
        let t = Tensor::from_rows(&rows).unwrap();
        let eps = 1e-5;
        let out = ops::layer_norm(&t, eps).unwrap();
        for (row, orig) in out.data().chunks(4).zip(&rows) {
            let mean = row.iter().sum::<f64>() / 4.0;
            prop_assert!(mean.abs() <= 1e-9);
            let om = orig.iter().sum::<f64>() / 4.0;
            let ovar = orig.iter().map(|v| (v - om).powi(2)).sum::<f64>() / 4.0;
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            // exact value is ovar / (ovar + eps)
            prop_assert!((var - ovar / (ovar + eps)).abs() <= 1e-9);
        }
    }

    #[test]
    fn logsumexp_singleton_and_permutation(xs in prop::collection::vec(-50.0f64..50.0, 1..10), rot in 0usize..10) {
        prop_assert_eq!(ops::logsumexp(&xs[..1]).unwrap(), xs[0]);
        let mut ys = xs.clone();
        let len = ys.len();
        ys.rotate_left(rot % len);
        ys.reverse();
        let a = ops::logsumexp(&xs).unwrap();
        let b = ops::logsumexp(&ys).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(
        a in prop::collection::vec(-3.0f64..3.0, 3),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        alpha in 0.01f64..100.0,
        beta in 0.01f64..100.0,
    ) {
        let na: f64 = a.iter().map(|v| v * v).sum();
        let nb: f64 = b.iter().map(|v| v * v).sum();
        prop_assume!(na > 1e-6 && nb > 1e-6);
        let ta = Tensor::vector(a.clone());
        let tb = Tensor::vector(b.clone());
        let s = ops::cosine_sim(&ta, &tb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ops::cosine_sim(&tb, &ta).unwrap()).abs() <= 1e-12);
        let sa = Tensor::vector(a.iter().map(|v| v * alpha).collect());
        let sb = Tensor::vector(b.iter().map(|v| v * beta).collect());
        prop_assert!((s - ops::cosine_sim(&sa, &sb).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn dropout_is_reproducible(seed in any::<u64>(), rate in 0.0f64..0.95) {
        let x = Tensor::vector((0..64).map(|i| i as f64 - 30.0).collect());
        let (y1, m1) = ops::dropout(&x, rate, seed, true).unwrap();
        let (y2, m2) = ops::dropout(&x, rate, seed, true).unwrap();
        prop_assert_eq!(m1, m2);
        prop_assert_eq!(y1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        y2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

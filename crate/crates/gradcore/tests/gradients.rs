use gradcore::nn::{LayerNorm, Linear, Mlp, Mode};
use gradcore::{grad_check, Axis, OpKind, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i * m + j] += a.get2(i, p) * b.get2(p, j);
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.apply(OpKind::MatMul, &[va, vb]).unwrap();
        for (x, y) in tape.value(c).data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}

#[test]
fn linear_layer_gradients_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 4, 3, &mut rng);
    let x = random_matrix(&mut rng, 5, 4);
    let target = random_matrix(&mut rng, 5, 3);
    let report = grad_check(&mut store, EPS, 1e-6, |tape, store| {
        let xv = tape.constant(x.clone());
        let y = lin.forward(tape, store, xv, Mode::Train)?;
        let t = tape.constant(target.clone());
        tape.dot(y, t)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[6, 8, 3], &mut rng);
    let x = random_matrix(&mut rng, 4, 6);
    let report = grad_check(&mut store, EPS, 1e-4, |tape, store| {
        let xv = tape.constant(x.clone());
        let y = mlp.forward(tape, store, xv, Mode::Train)?;
        let sq = tape.mul(y, y)?;
        Ok(tape.mean(sq))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn three_layer_relu_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[5, 7, 7, 2], &mut rng);
    let x = random_matrix(&mut rng, 6, 5);
    let report = grad_check(&mut store, EPS, 1e-4, |tape, store| {
        let xv = tape.constant(x.clone());
        let y = mlp.forward(tape, store, xv, Mode::Train)?;
        let s = tape.sigmoid(y);
        Ok(tape.sum(s))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn softmax_cross_entropy_head_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "head", 4, 5, &mut rng);
    let x = random_matrix(&mut rng, 3, 4);
    let mut onehot = vec![0.0; 15];
    for (r, t) in [1usize, 4, 0].iter().enumerate() {
        onehot[r * 5 + t] = 1.0;
    }
    let onehot = Tensor::matrix(3, 5, onehot).unwrap();
    for log_route in [false, true] {
        let report = grad_check(&mut store, EPS, 1e-4, |tape, store| {
            let xv = tape.constant(x.clone());
            let logits = lin.forward(tape, store, xv, Mode::Train)?;
            let logp = if log_route {
                tape.log_softmax_rows(logits)?
            } else {
                let p = tape.softmax(logits, Axis::Cols)?;
                tape.log(p)
            };
            let t = tape.constant(onehot.clone());
            let picked = tape.mul(logp, t)?;
            let s = tape.sum(picked);
            Ok(tape.scale(s, -1.0 / 3.0))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

/// Exercises every differentiable op once through a finite-difference check.
#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let a = store.add("a", random_matrix(&mut rng, 3, 4));
    let b = store.add("b", random_matrix(&mut rng, 4, 4));
    let table = store.add("table", random_matrix(&mut rng, 5, 4));
    let mem = store.add("mem", random_matrix(&mut rng, 6, 4));
    let ln = LayerNorm::new(&mut store, "ln", 4);
    let bias = store.add("bias", random_matrix(&mut rng, 1, 4).reshape(vec![4]).unwrap());
    let report = grad_check(&mut store, EPS, 1e-4, |tape, store| {
        let a = tape.param(store, a);
        let b = tape.param(store, b);
        let ab = tape.matmul(a, b)?;
        let bias = tape.param(store, bias);
        let ab = tape.add_bias(ab, bias)?;
        let ln = ln.forward(tape, store, ab, Mode::Train)?;
        let sm = tape.softmax(ln, Axis::Rows)?;
        let table = tape.param(store, table);
        let e = tape.embedding(table, &[4, 0, 4])?;
        let prod = tape.mul(sm, e)?;
        let sp = tape.softplus(prod);
        let diff = tape.sub(sp, a)?;
        let t = tape.transpose(diff)?;
        let cat = tape.concat(&[t, t], Axis::Cols)?; // 4x6
        let sl = tape.slice_cols(cat, 1, 4)?; // 4x4
        let norm = tape.l2_normalize_rows(sl);
        let extra = tape_constant_rows(tape);
        let stacked = tape.concat(&[norm, extra], Axis::Rows)?; // 6x4
        let q3 = first_rows(tape, stacked, 3)?;
        let memv = tape.param(store, mem);
        let scores = tape.grouped_dot(q3, memv, 2)?; // 3x2
        let p = tape.softmax_rows(scores)?;
        let comb = tape.grouped_combine(p, memv, 2)?; // 3x4
        let ex = tape.exp(comb);
        let lg = tape.log(ex);
        let ng = tape.neg(lg);
        let sc = tape.scale(ng, 0.7);
        let rl = tape.relu(sc);
        let sig = tape.sigmoid(sc);
        let tot = tape.add(rl, sig)?;
        let m = tape.mean(tot);
        let d = tape.dot(comb, comb)?;
        let s = tape.add(m, d)?;
        Ok(tape.sum(s))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn tape_constant_rows(tape: &mut Tape) -> gradcore::Var {
    tape.constant(Tensor::matrix(2, 4, vec![0.5, -0.5, 0.25, 1.0, 0.0, 0.1, -0.2, 0.3]).unwrap())
}

fn first_rows(tape: &mut Tape, x: gradcore::Var, n: usize) -> gradcore::Result<gradcore::Var> {
    let t = tape.transpose(x)?;
    let cols = tape.value(t).cols();
    let picker: Vec<f64> = (0..cols * n)
        .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
        .collect();
    let picker = tape.constant(Tensor::matrix(cols, n, picker).unwrap());
    let sel = tape.matmul(t, picker)?;
    tape.transpose(sel)
}

#[test]
fn replayed_tape_gives_bit_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 4, 2], &mut rng);
        let x = random_matrix(&mut rng, 2, 3);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = mlp.forward(&mut tape, &store, xv, Mode::Train).unwrap();
        let s = tape.softmax_rows(y).unwrap();
        let l = tape.log(s);
        let l = tape.sum(l);
        tape.backward(l).unwrap().accumulate_into(&mut store);
        store
            .ids()
            .flat_map(|id| store.grad(id).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 4, values).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        for row in tape.value(y).data().chunks(4) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn layer_norm_standardises_rows(values in proptest::collection::vec(-10.0f64..10.0, 8)) {
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 8, values).unwrap());
        let g = tape.constant(Tensor::filled(&[8], 1.0));
        let b = tape.constant(Tensor::zeros(&[8]));
        let y = tape.apply(OpKind::LayerNorm, &[x, g, b]).unwrap();
        let row = tape.value(y).data();
        let mu = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
        prop_assert!(mu.abs() < 1e-7);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}

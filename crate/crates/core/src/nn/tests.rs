use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::kernels::sigmoid;
use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_lstm(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.add("l.w_ih", random_tensor(rng, &[4 * hidden, input], 0.6)).unwrap();
    p.add("l.w_hh", random_tensor(rng, &[4 * hidden, hidden], 0.6)).unwrap();
    p.add("l.b", random_tensor(rng, &[4 * hidden], 0.3)).unwrap();
    p
}

/// Independent single-step LSTM written out gate by gate.
fn oracle_step(p: &ParameterSet, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w_ih = p.by_name("l.w_ih").unwrap();
    let w_hh = p.by_name("l.w_hh").unwrap();
    let b = p.by_name("l.b").unwrap();
    let hid = h.len();
    let pre = |row: usize| -> f64 {
        let mut s = b.data()[row];
        for (k, xv) in x.iter().enumerate() {
            s += w_ih.data()[row * x.len() + k] * xv;
        }
        for (k, hv) in h.iter().enumerate() {
            s += w_hh.data()[row * hid + k] * hv;
        }
        s
    };
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for j in 0..hid {
        let i = sig(pre(j));
        let f = sig(pre(hid + j));
        let g = pre(2 * hid + j).tanh();
        let o = sig(pre(3 * hid + j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn weights(p: &ParameterSet) -> LstmWeights<'_> {
    LstmWeights {
        w_ih: p.by_name("l.w_ih").unwrap(),
        w_hh: p.by_name("l.w_hh").unwrap(),
        b: p.by_name("l.b").unwrap(),
    }
}

#[test]
fn lstm_zero_weights_give_zero_outputs() {
    let mut p = ParameterSet::new();
    p.add("l.w_ih", Tensor::zeros(&[20, 3])).unwrap();
    p.add("l.w_hh", Tensor::zeros(&[20, 5])).unwrap();
    p.add("l.b", Tensor::zeros(&[20])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[6, 3], 5.0);
    let out = lstm_forward(weights(&p), &x, &[0.0; 5], &[0.0; 5]).unwrap();
    assert!(out.outputs.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_matches_single_step_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = random_lstm(&mut rng, 3, 5);
    let x = random_tensor(&mut rng, &[4, 3], 1.0);
    let h0: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
    let c0: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
    let out = lstm_forward(weights(&p), &x, &h0, &c0).unwrap();

    let (mut h, mut c) = (h0.clone(), c0.clone());
    for t in 0..4 {
        let (hn, cn) = oracle_step(&p, x.row(t), &h, &c);
        for (a, b) in out.outputs.row(t).iter().zip(&hn) {
            assert!((a - b).abs() < 1e-12);
        }
        h = hn;
        c = cn;
    }
    for (a, b) in out.c_final.iter().zip(&c) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(out.h_final, out.outputs.row(3).to_vec());

    // sequence length one is exactly one cell application
    let one = lstm_forward(weights(&p), &x.head_rows(1), &h0, &c0).unwrap();
    let (h1, _) = oracle_step(&p, x.row(0), &h0, &c0);
    for (a, b) in one.outputs.row(0).iter().zip(&h1) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn lstm_rejects_bad_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_lstm(&mut rng, 3, 5);
    let x = random_tensor(&mut rng, &[4, 4], 1.0);
    assert!(lstm_forward(weights(&p), &x, &[0.0; 5], &[0.0; 5]).is_err());
}

#[test]
fn affine_tanh_examples() {
    let w0 = Tensor::zeros(&[3, 2]);
    let b0 = Tensor::zeros(&[3]);
    assert_eq!(affine_tanh(&w0, &b0, &[1.0, -2.0]).unwrap(), vec![0.0; 3]);

    let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = affine_tanh(&eye, &Tensor::zeros(&[2]), &[1e-3, -5e-4]).unwrap();
    assert!((y[0] - 1e-3).abs() < 1e-6 && (y[1] + 5e-4).abs() < 1e-6);

    let w = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
    let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
    let y = affine_tanh(&w, &b, &[0.25, 0.25]).unwrap();
    assert!((y[0] - 0.761594).abs() < 1e-6);

    assert!(affine_tanh(&w, &b, &[1.0]).is_err());
}

#[test]
fn film_examples() {
    let h = [0.3, -1.2, 4.0];
    assert_eq!(film_modulate(&h, &[1.0; 3], &[0.0; 3]).unwrap(), h.to_vec());
    assert_eq!(
        film_modulate(&h, &[0.0; 3], &[0.5, 0.6, 0.7]).unwrap(),
        vec![0.5, 0.6, 0.7]
    );
    assert_eq!(
        film_modulate(&[1.0, 2.0], &[2.0, 0.5], &[-1.0, 1.0]).unwrap(),
        vec![1.0, 2.0]
    );
    assert!(film_modulate(&[1.0, 2.0], &[1.0], &[0.0, 0.0]).is_err());
}

#[test]
fn softmax_cross_entropy_examples() {
    let (l, _) = softmax_cross_entropy(&[0.3, 0.3, 0.3], 1).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-12);
    assert!((l - 1.098612).abs() < 1e-6);

    let (l, g) = softmax_cross_entropy(&[1000.0, 0.0, 0.0], 0).unwrap();
    assert!(l.abs() < 1e-12 && l.is_finite());
    assert!(g.iter().all(|v| v.is_finite()));

    let (l, g) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
    let e = std::f64::consts::E;
    let expected = -(e.powi(3) / (e + e * e + e.powi(3))).ln();
    assert!((l - expected).abs() < 1e-12);
    assert!((l - 0.407606).abs() < 1e-6);
    // gradient is softmax minus one-hot
    assert!((g.iter().sum::<f64>()).abs() < 1e-12);
    assert!(g[2] < 0.0 && g[0] > 0.0);

    assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_normalized(v in prop::collection::vec(-15.0f64..15.0, 3)) {
        let p = softmax_rows(&Tensor::from_vec(&[1, 3], v).unwrap());
        let s: f64 = p.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(p.data().iter().all(|&x| x > 0.0 && x < 1.0));
    }
}

#[test]
fn scalar_chain_derivative() {
    let mut p = ParameterSet::new();
    let w = p.add("a.w", Tensor::from_vec(&[1, 1], vec![0.5]).unwrap()).unwrap();
    let b = p.add("a.b", Tensor::zeros(&[1])).unwrap();
    let unused = p.add("unused", Tensor::filled(&[3], 2.0)).unwrap();
    let mut g = Graph::new(&p);
    let x = g.input(Tensor::row_vector(vec![1.0]));
    let y = g.affine(x, AffineIds { w, b }, Activation::Tanh).unwrap();
    let grads = g.backward(y).unwrap();
    let expected = 1.0 - 0.5f64.tanh().powi(2);
    assert!((grads.get(w).data()[0] - expected).abs() < 1e-12);
    assert!((expected - 0.786448).abs() < 1e-6);
    assert_eq!(grads.get(unused).data(), &[0.0; 3]);
}

#[test]
fn backward_requires_recorded_scalar() {
    let p = ParameterSet::new();
    let mut other = Graph::new(&p);
    let v = other.input(Tensor::row_vector(vec![1.0, 2.0]));
    // a fresh graph has no node for `v`
    let empty = Graph::new(&p);
    assert!(matches!(empty.backward(v), Err(crate::Error::Usage(_))));
    // non-scalar node
    assert!(matches!(other.backward(v), Err(crate::Error::Usage(_))));
}

fn assert_gradcheck(p: &ParameterSet, loss: impl Fn(&ParameterSet) -> (f64, Gradients)) {
    let (_, analytic) = loss(p);
    let report = check_gradients(p, &analytic, |q| loss(q).0, 40, 1e-4, 11);
    assert!(
        report.max_rel_err < 1e-4,
        "max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn gradcheck_lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = random_lstm(&mut rng, 3, 5);
    p.add("head.w", random_tensor(&mut rng, &[3, 5], 0.8)).unwrap();
    p.add("head.b", random_tensor(&mut rng, &[3], 0.2)).unwrap();
    let x = random_tensor(&mut rng, &[6, 3], 1.0);
    let labels = [0, 2, 1, 1, 0, 2];
    assert_gradcheck(&p, |q| {
        let mut g = Graph::new(q);
        let xi = g.input(x.clone());
        let h = g.lstm(xi, LstmIds::lookup(q, "l").unwrap()).unwrap();
        let z = g
            .affine(h, AffineIds::lookup(q, "head").unwrap(), Activation::Identity)
            .unwrap();
        let l = g.softmax_cross_entropy(z, &labels).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    });
}

#[test]
fn gradcheck_affine_tanh_and_film() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = ParameterSet::new();
    p.add("fc.w", random_tensor(&mut rng, &[4, 3], 0.8)).unwrap();
    p.add("fc.b", random_tensor(&mut rng, &[4], 0.2)).unwrap();
    p.add("gen.w", random_tensor(&mut rng, &[8, 2], 0.8)).unwrap();
    p.add("gen.b", random_tensor(&mut rng, &[8], 0.2)).unwrap();
    p.add("head.w", random_tensor(&mut rng, &[3, 4], 0.8)).unwrap();
    p.add("head.b", random_tensor(&mut rng, &[3], 0.2)).unwrap();
    let x = random_tensor(&mut rng, &[5, 3], 1.0);
    let cond_static = random_tensor(&mut rng, &[1, 2], 1.0);
    let cond_seq = random_tensor(&mut rng, &[5, 2], 1.0);
    let labels = [1, 0, 2, 2, 1];
    for cond in [&cond_static, &cond_seq] {
        assert_gradcheck(&p, |q| {
            let mut g = Graph::new(q);
            let xi = g.input(x.clone());
            let ci = g.input(cond.clone());
            let h = g
                .affine(xi, AffineIds::lookup(q, "fc").unwrap(), Activation::Tanh)
                .unwrap();
            let gb = g
                .affine(ci, AffineIds::lookup(q, "gen").unwrap(), Activation::Identity)
                .unwrap();
            let m = g.film(h, gb, 1.0).unwrap();
            let z = g
                .affine(m, AffineIds::lookup(q, "head").unwrap(), Activation::Identity)
                .unwrap();
            let l = g.softmax_cross_entropy(z, &labels).unwrap();
            (g.value(l).data()[0], g.backward(l).unwrap())
        });
    }
}

#[test]
fn gradcheck_cosine_concat_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = ParameterSet::new();
    p.add("enc.w", random_tensor(&mut rng, &[6, 3], 0.8)).unwrap();
    p.add("enc.b", random_tensor(&mut rng, &[6], 0.2)).unwrap();
    p.add("head.w", random_tensor(&mut rng, &[2, 13], 0.8)).unwrap();
    p.add("head.b", random_tensor(&mut rng, &[2], 0.2)).unwrap();
    p.add("cls.w", random_tensor(&mut rng, &[3, 6], 0.8)).unwrap();
    p.add("cls.b", random_tensor(&mut rng, &[3], 0.2)).unwrap();
    let x = random_tensor(&mut rng, &[5, 3], 1.0);
    let enroll = random_tensor(&mut rng, &[1, 6], 1.0);
    let labels = [1, 0, 0, 1, 1];
    assert_gradcheck(&p, |q| {
        let mut g = Graph::new(q);
        let xi = g.input(x.clone());
        let e = g.input(enroll.clone());
        let d = g
            .affine(xi, AffineIds::lookup(q, "enc").unwrap(), Activation::Tanh)
            .unwrap();
        let cos = g.cosine(d, e).unwrap();
        let cat = g.concat(&[e, cos, d]).unwrap();
        let z = g
            .affine(cat, AffineIds::lookup(q, "head").unwrap(), Activation::Identity)
            .unwrap();
        let l = g.softmax_cross_entropy(z, &labels).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    });
    // pooled classification route
    assert_gradcheck(&p, |q| {
        let mut g = Graph::new(q);
        let xi = g.input(x.clone());
        let d = g
            .affine(xi, AffineIds::lookup(q, "enc").unwrap(), Activation::Tanh)
            .unwrap();
        let pooled = g.mean_rows(d).unwrap();
        let z = g
            .affine(pooled, AffineIds::lookup(q, "cls").unwrap(), Activation::Identity)
            .unwrap();
        let l = g.softmax_cross_entropy(z, &[2]).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    });
}

#[test]
fn initializer_is_deterministic_and_bounded() {
    let mut a = Initializer::new(42);
    let mut b = Initializer::new(42);
    let wa = a.weight(8, 16);
    assert_eq!(wa, b.weight(8, 16));
    assert!(wa.data().iter().all(|v| v.abs() <= 0.25));
    let mut c = Initializer::new(43);
    assert_ne!(wa, c.weight(8, 16));
}

#[test]
fn sigmoid_kernel_agrees_with_formula() {
    for z in [-3.0, -0.1, 0.0, 2.5] {
        assert!((sigmoid(z) - 1.0 / (1.0 + (-z as f64).exp())).abs() < 1e-15);
    }
}

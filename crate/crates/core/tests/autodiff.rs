use dpscale_core::autodiff::{forward_per_example, Forward, ParamTree, Tape, Var};
use dpscale_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

struct Mlp;

impl Forward<f64> for Mlp {
    fn record(&self, t: &mut Tape<'_, f64>, x: Var, labels: &[usize]) -> Result<Var> {
        let h = t.dense(x, "w1", Some("b1"))?;
        let h = t.tanh(h);
        let o = t.dense(h, "w2", Some("b2"))?;
        t.cross_entropy(o, labels)
    }
}

fn mlp_params(rng: &mut ChaCha8Rng, d: usize, h: usize, k: usize) -> ParamTree {
    let mut p = ParamTree::new();
    p.insert("w1", randn(rng, &[h, d], 0.8), true).unwrap();
    p.insert("b1", randn(rng, &[h], 0.3), true).unwrap();
    p.insert("w2", randn(rng, &[k, h], 0.8), true).unwrap();
    p.insert("b2", randn(rng, &[k], 0.3), true).unwrap();
    p
}

struct ConvNet;

impl Forward<f64> for ConvNet {
    fn record(&self, t: &mut Tape<'_, f64>, x: Var, labels: &[usize]) -> Result<Var> {
        let h = t.conv2d(x, "cw", Some("cb"), 1, 1)?;
        let h = t.group_norm(h, "gamma", "beta", 2, 1e-5)?;
        let h = t.relu(h);
        let h = t.max_pool2d(h, 2, 2)?;
        let h = t.conv2d(h, "cw2", None, 2, 0)?;
        let h = t.tanh(h);
        let h = t.flatten(h);
        let o = t.dense(h, "fw", Some("fb"))?;
        t.cross_entropy(o, labels)
    }
}

fn conv_params(rng: &mut ChaCha8Rng) -> ParamTree {
    let mut p = ParamTree::new();
    p.insert("cw", randn(rng, &[4, 2, 3, 3], 0.5), true).unwrap();
    p.insert("cb", randn(rng, &[4], 0.2), true).unwrap();
    p.insert("gamma", Tensor::from_fn(&[4], |i| 1.0 + 0.1 * i as f64), true).unwrap();
    p.insert("beta", randn(rng, &[4], 0.2), true).unwrap();
    p.insert("cw2", randn(rng, &[3, 4, 2, 2], 0.5), true).unwrap();
    p.insert("fw", randn(rng, &[3, 3], 0.5), true).unwrap();
    p.insert("fb", randn(rng, &[3], 0.2), true).unwrap();
    p
}

/// Exercises the elementwise and reduction rules: loss = mean(tanh(y)·y) + sum(2y + relu(y)).
struct Elementwise;

impl Forward<f64> for Elementwise {
    fn record(&self, t: &mut Tape<'_, f64>, x: Var, _labels: &[usize]) -> Result<Var> {
        let y = t.dense(x, "w", Some("b"))?;
        let a = t.tanh(y);
        let m = t.mul(a, y)?;
        let m = t.mean_per_example(m);
        let s = t.scale(y, 2.0);
        let r = t.relu(y);
        let s = t.add(s, r)?;
        let s = t.sum_per_example(s);
        t.add(m, s)
    }
}

fn losses(model: &dyn Forward<f64>, p: &ParamTree, x: &Tensor, labels: &[usize]) -> Tensor {
    forward_per_example(model, p, x.clone(), labels).unwrap().0
}

/// Central differences of example `i`'s loss, flattened in trainable order.
fn fd_grad(model: &dyn Forward<f64>, p: &ParamTree, x: &Tensor, labels: &[usize], i: usize) -> Vec<f64> {
    let h = 1e-5;
    let base = p.flatten_trainable();
    let mut out = Vec::with_capacity(base.len());
    let mut q = p.clone();
    for j in 0..base.len() {
        let mut v = base.clone();
        v[j] += h;
        q.unflatten_trainable(&v).unwrap();
        let up = losses(model, &q, x, labels).data()[i];
        v[j] -= 2.0 * h;
        q.unflatten_trainable(&v).unwrap();
        let down = losses(model, &q, x, labels).data()[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn check_against_fd(model: &dyn Forward<f64>, p: &ParamTree, x: &Tensor, labels: &[usize]) {
    let (_, graph) = forward_per_example(model, p, x.clone(), labels).unwrap();
    let per = graph.per_example_grads().unwrap();
    for (i, g) in per.iter().enumerate() {
        let fd = fd_grad(model, p, x, labels, i);
        let err = rel_err(&g.flatten_trainable(), &fd);
        assert!(err < 1e-6, "example {i}: relative error {err:e}");
    }
}

fn check_fast_paths(model: &dyn Forward<f64>, p: &ParamTree, x: &Tensor, labels: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, graph) = forward_per_example(model, p, x.clone(), labels).unwrap();
    let per = graph.per_example_grads().unwrap();

    let norms = graph.per_example_grad_norms().unwrap();
    for (n, g) in norms.data().iter().zip(&per) {
        assert!((n - g.norm()).abs() <= 1e-10 * (1.0 + g.norm()), "{n} vs {}", g.norm());
    }

    let w: Vec<f64> = (0..labels.len()).map(|_| rng.random_range(-1.0..2.0)).collect();
    let fast = graph.weighted_backward(&w).unwrap();
    let mut slow = p.zeros_like_trainable();
    for (wi, g) in w.iter().zip(&per) {
        slow.axpy(*wi, g).unwrap();
    }
    assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-10);

    // In-loss decay: gradient of ℓᵢ + λ/2‖θ‖² is gᵢ + λθ.
    let lam = 0.3;
    let dn = graph.per_example_grad_norms_with_decay(lam).unwrap();
    for (n, g) in dn.data().iter().zip(&per) {
        let mut gd = g.clone();
        for param in p.trainable() {
            gd.value_mut(&param.name).unwrap().axpy(lam, &param.value).unwrap();
        }
        assert!((n - gd.norm()).abs() <= 1e-10 * (1.0 + gd.norm()));
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = mlp_params(&mut rng, 5, 6, 3);
    let x = randn(&mut rng, &[4, 5], 1.0);
    check_against_fd(&Mlp, &p, &x, &[0, 2, 1, 2]);
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = conv_params(&mut rng);
    let x = randn(&mut rng, &[3, 2, 6, 6], 1.0);
    check_against_fd(&ConvNet, &p, &x, &[0, 1, 2]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = ParamTree::new();
    p.insert("w", randn(&mut rng, &[4, 3], 1.0), true).unwrap();
    p.insert("b", randn(&mut rng, &[4], 0.5), true).unwrap();
    let x = randn(&mut rng, &[5, 3], 1.0);
    check_against_fd(&Elementwise, &p, &x, &[0; 5]);
}

#[test]
fn fast_paths_match_naive_oracle() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let p = mlp_params(&mut rng, 4, 7, 3);
        let x = randn(&mut rng, &[6, 4], 2.0);
        check_fast_paths(&Mlp, &p, &x, &[0, 1, 2, 0, 1, 2], seed);

        let p = conv_params(&mut rng);
        let x = randn(&mut rng, &[4, 2, 6, 6], 1.0);
        check_fast_paths(&ConvNet, &p, &x, &[2, 1, 0, 0], seed);
    }
}

#[test]
fn frozen_parameters_are_left_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = conv_params(&mut rng);
    for name in ["cw", "cb", "gamma"] {
        p.set_trainable(name, false).unwrap();
    }
    let x = randn(&mut rng, &[3, 2, 6, 6], 1.0);
    let labels = [1, 0, 2];
    let (_, graph) = forward_per_example(&ConvNet, &p, x.clone(), &labels).unwrap();
    let g = graph.weighted_backward(&[1.0; 3]).unwrap();
    assert!(g.get("cw").is_none() && g.get("gamma").is_none());
    assert!(g.get("beta").is_some());
    check_fast_paths(&ConvNet, &p, &x, &labels, 9);
    check_against_fd(&ConvNet, &p, &x, &labels);
}

#[test]
fn single_example_matches_batch_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = mlp_params(&mut rng, 3, 4, 2);
    let x = randn(&mut rng, &[1, 3], 1.0);
    let (losses, graph) = forward_per_example(&Mlp, &p, x, &[1]).unwrap();
    assert_eq!(losses.shape(), &[1]);
    let batch = graph.weighted_backward(&[1.0]).unwrap();
    let per = graph.per_example_grads().unwrap();
    assert!(batch.max_abs_diff(&per[0]).unwrap() == 0.0);
    let n = graph.per_example_grad_norms().unwrap();
    assert!((n.data()[0] - batch.norm()).abs() < 1e-12);
}

#[test]
fn duplicated_rows_give_identical_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = mlp_params(&mut rng, 3, 4, 2);
    let row = randn(&mut rng, &[1, 3], 1.0);
    let x = Tensor::from_fn(&[3, 3], |i| row.data()[i % 3]);
    let l = losses(&Mlp, &p, &x, &[1, 1, 1]);
    assert_eq!(l.data()[0], l.data()[1]);
    assert_eq!(l.data()[1], l.data()[2]);
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = conv_params(&mut rng);
    let x = randn(&mut rng, &[2, 2, 6, 6], 1.0);
    let (l, graph) = forward_per_example(&ConvNet, &p, x, &[0, 1]).unwrap();
    assert_eq!(graph.replay().unwrap(), l);
}

#[test]
fn saturated_logits_have_vanishing_norms() {
    let mut p = ParamTree::new();
    p.insert("w1", Tensor::identity(2), true).unwrap();
    p.insert("b1", Tensor::zeros(&[2]), true).unwrap();
    p.insert("w2", Tensor::from_f64(&[2, 2], &[200.0, 0.0, 0.0, 200.0]).unwrap(), true).unwrap();
    p.insert("b2", Tensor::zeros(&[2]), true).unwrap();
    let x = Tensor::from_f64(&[2, 2], &[5.0, -5.0, -5.0, 5.0]).unwrap();
    let (_, graph) = forward_per_example(&Mlp, &p, x, &[0, 1]).unwrap();
    for n in graph.per_example_grad_norms().unwrap().data() {
        assert!(*n < 1e-12, "{n}");
    }
}

#[test]
fn logistic_regression_matches_closed_form() {
    struct Logistic;
    impl Forward<f64> for Logistic {
        fn record(&self, t: &mut Tape<'_, f64>, x: Var, labels: &[usize]) -> Result<Var> {
            let o = t.dense(x, "w", Some("b"))?;
            t.cross_entropy(o, labels)
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = ParamTree::new();
    // Two-class softmax with a zero second row is binary logistic regression on row 0.
    let w0 = randn(&mut rng, &[5], 1.0);
    let w = Tensor::from_fn(&[2, 5], |i| if i < 5 { w0.data()[i] } else { 0.0 });
    p.insert("w", w, true).unwrap();
    p.insert("b", Tensor::from_f64(&[2], &[0.25, 0.0]).unwrap(), true).unwrap();
    let x = randn(&mut rng, &[8, 5], 1.5);
    let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let (l, graph) = forward_per_example(&Logistic, &p, x.clone(), &labels).unwrap();
    for i in 0..8 {
        let z: f64 = x.row(i).iter().zip(w0.data()).map(|(a, b)| a * b).sum::<f64>() + 0.25;
        // Class 0 has logit z, class 1 has logit 0.
        let expected = if labels[i] == 0 { (1.0 + (-z).exp()).ln() } else { (1.0 + z.exp()).ln() };
        assert!((l.data()[i] - expected).abs() < 1e-12);
        let sig = 1.0 / (1.0 + (-z).exp());
        let dz = if labels[i] == 0 { sig - 1.0 } else { sig };
        let g = &graph.per_example_grads().unwrap()[i];
        for j in 0..5 {
            assert!((g.value("w").unwrap().data()[j] - dz * x.row(i)[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn reused_parameter_is_rejected() {
    struct Twice;
    impl Forward<f64> for Twice {
        fn record(&self, t: &mut Tape<'_, f64>, x: Var, _labels: &[usize]) -> Result<Var> {
            let a = t.dense(x, "w", None)?;
            let b = t.dense(a, "w", None)?;
            Ok(t.sum_per_example(b))
        }
    }
    let mut p = ParamTree::new();
    p.insert("w", Tensor::identity(2), true).unwrap();
    let r = forward_per_example(&Twice, &p, Tensor::zeros(&[1, 2]), &[0]);
    assert!(matches!(r, Err(dpscale_core::Error::ParamReused(_))));
}

//! Oracles shared by the integration tests: finite-difference gradient
//! checks and the closed-form ridge zero-shot baseline.

#![allow(dead_code)]

use std::collections::BTreeMap;

use claster::clustering::ClusterModel;
use claster::dataset::LabeledDataset;
use claster::neural::{
    add_weight_penalty, regularized_cross_entropy, semantic_softmax, Classifier, ClassifierShape, Mlp,
    ParamSet,
};
use claster::representation::{claster_representation, omega_backward, VisualSemanticPoint};
use claster::vecmath;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn nudged<P: ParamSet + Clone>(p: &P, index: usize, delta: f64) -> P {
    let mut out = p.clone();
    let mut seen = 0;
    out.visit_mut(&mut |_, _, d| {
        if index >= seen && index < seen + d.len() {
            d[index - seen] += delta;
        }
        seen += d.len();
    });
    out
}

/// Max relative error between `analytic` and central differences of `f`
/// over every parameter of `p`.
pub fn param_fd_error<P: ParamSet + Clone>(p: &P, analytic: &P, f: impl Fn(&P) -> f64) -> f64 {
    let a = analytic.flatten();
    (0..p.num_params())
        .map(|i| {
            let n = (f(&nudged(p, i, FD_STEP)) - f(&nudged(p, i, -FD_STEP))) / (2.0 * FD_STEP);
            rel_err(a[i], n)
        })
        .fold(0.0, f64::max)
}

/// Max relative error between `analytic` and central differences of `f` in `x`.
pub fn input_fd_error(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += FD_STEP;
            lo[i] -= FD_STEP;
            rel_err(analytic[i], (f(&hi) - f(&lo)) / (2.0 * FD_STEP))
        })
        .fold(0.0, f64::max)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Every parameter, biases included, drawn from U(-1, 1). Zero biases would
/// put downstream pre-activations exactly on the rectifier kink.
fn randomized<P: ParamSet>(mut p: P, rng: &mut ChaCha8Rng) -> P {
    p.visit_mut(&mut |_, _, d| d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0)));
    p
}

/// Parameter and input gradients of a random MLP under `L = u·f(x)`.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i, h, o) = (rng.random_range(1..6), rng.random_range(1..8), rng.random_range(1..6));
    let mlp = randomized(Mlp::random(i, h, o, &mut rng), &mut rng);
    let x = normal_vec(&mut rng, i);
    let u = normal_vec(&mut rng, o);
    let (grads, dx) = mlp.gradient(&x, &u).unwrap();
    let p_err = param_fd_error(&mlp, &grads, |m| vecmath::dot(&u, &m.forward(&x).unwrap()));
    let x_err = input_fd_error(&x, &dx, |x| vecmath::dot(&u, &mlp.forward(x).unwrap()));
    p_err.max(x_err)
}

/// Same check for the convolutional classifier head.
pub fn classifier_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ClassifierShape {
        input_len: rng.random_range(2..7),
        kernel: [1, 3, 5][rng.random_range(0..3)],
        conv_channels: rng.random_range(1..4),
        hidden: rng.random_range(1..6),
        output: rng.random_range(1..4),
    };
    let net = randomized(Classifier::random(shape, &mut rng).unwrap(), &mut rng);
    let x = normal_vec(&mut rng, shape.input_len);
    let u = normal_vec(&mut rng, shape.output);
    let (grads, dx) = net.gradient(&x, &u).unwrap();
    let p_err = param_fd_error(&net, &grads, |n| vecmath::dot(&u, &n.forward(&x).unwrap()));
    let x_err = input_fd_error(&x, &dx, |x| vecmath::dot(&u, &net.forward(x).unwrap()));
    p_err.max(x_err)
}

/// Cross-entropy through the semantic softmax with respect to `V(ω)`, and
/// the Frobenius regularizer with respect to the weights.
pub fn loss_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (classes, dim) = (rng.random_range(2..7), rng.random_range(1..6));
    let emb = normal_vec(&mut rng, classes * dim);
    let v = normal_vec(&mut rng, dim);
    let t = rng.random_range(0..classes);
    let ce = |v: &[f64]| {
        let p = semantic_softmax(&emb, dim, v).unwrap();
        regularized_cross_entropy(&p, t, &emb, dim, 0.0, 0.0).unwrap().loss
    };
    let p = semantic_softmax(&emb, dim, &v).unwrap();
    let g = regularized_cross_entropy(&p, t, &emb, dim, 0.0, 0.0).unwrap().grad_projected;
    let ce_err = input_fd_error(&v, &g, ce);

    let lambda = rng.random_range(0.0..1.0);
    let net = Mlp::random(dim, 3, classes, &mut rng);
    let mut reg_grad = net.zeros_like();
    add_weight_penalty(&mut reg_grad, &net, 2.0 * lambda);
    let reg = |n: &Mlp| {
        regularized_cross_entropy(&p, t, &emb, dim, n.weight_sq_norm(), lambda).unwrap().loss
    };
    ce_err.max(param_fd_error(&net, &reg_grad, reg))
}

/// Pull-back of `∂L/∂ω` to `∂L/∂ψ`, including the cluster weights.
pub fn omega_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = rng.random_range(1..4);
    let k = rng.random_range(1..6);
    let model = ClusterModel::new((0..k).map(|_| normal_vec(&mut rng, 2 * half)).collect()).unwrap();
    let psi = normal_vec(&mut rng, 2 * half);
    let u = normal_vec(&mut rng, 2 * half);
    let rep_of = |p: &[f64]| {
        claster_representation(&model, VisualSemanticPoint::new(&p[..half], &p[half..]).unwrap()).unwrap()
    };
    let analytic = omega_backward(&model, &rep_of(&psi), &u).unwrap();
    input_fd_error(&psi, &analytic, |p| vecmath::dot(&u, &rep_of(p).omega))
}

/// Least-squares map `[a, 1] → x` fit on `train_idx` (ridge `mu` on the
/// non-bias coefficients), then cosine nearest neighbor of each unseen
/// instance among the projected unseen embeddings. Mean per-class accuracy.
pub fn ridge_zsl_accuracy(ds: &LabeledDataset, train_idx: &[usize], mu: f64) -> f64 {
    let d_s = ds.embeddings.dim();
    let emb = |label: &str, c: usize| {
        if c == d_s {
            1.0
        } else {
            ds.embeddings.get(label).unwrap()[c]
        }
    };
    let a = DMatrix::from_fn(train_idx.len(), d_s + 1, |r, c| emb(&ds.instances[train_idx[r]].class_label, c));
    let x = DMatrix::from_fn(train_idx.len(), ds.d_v, |r, c| ds.instances[train_idx[r]].features[c]);
    let mut gram = a.transpose() * &a;
    for i in 0..d_s {
        gram[(i, i)] += mu;
    }
    let w = gram.try_inverse().expect("invertible gram matrix") * a.transpose() * x;
    let unseen = ds.split.unseen();
    let protos: Vec<Vec<f64>> = unseen
        .iter()
        .map(|l| (DMatrix::from_fn(1, d_s + 1, |_, c| emb(l, c)) * &w).iter().copied().collect())
        .collect();
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for i in ds.unseen_indices() {
        let inst = &ds.instances[i];
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, p) in protos.iter().enumerate() {
            let s = vecmath::cosine(&inst.features, p).unwrap();
            if s > best_sim {
                best = j;
                best_sim = s;
            }
        }
        let e = tally.entry(inst.class_label.as_str()).or_default();
        e.1 += 1;
        if unseen[best] == inst.class_label {
            e.0 += 1;
        }
    }
    tally.values().map(|(c, t)| *c as f64 / *t as f64).sum::<f64>() / tally.len() as f64
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

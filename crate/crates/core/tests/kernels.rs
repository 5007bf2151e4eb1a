//! Per-operation gradient checks and algebraic properties of the kernels.

use proptest::prelude::*;
use qtn_core::kernels::{
    batch_norm, concat_channels, conv2d, conv2d_forward, finite_diff_check, max_pool_2x2, max_pool_2x2_backward,
    max_unpool_2x2, max_unpool_2x2_backward, relu, softmax_channels, softmax_channels_forward, split_channels,
    BatchNormConfig, Mode, RunningStats,
};
use qtn_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar probe `sum(r * y)` so every output element gets its own weight.
fn dot(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn with(shape: Shape, flat: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, flat.to_vec()).unwrap()
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs = Shape::new(2, 3, 6, 5);
    let ws = Shape::new(4, 3, 3, 3);
    let x = random(&mut rng, xs);
    let w = random(&mut rng, ws);
    let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random(&mut rng, Shape::new(2, 4, 6, 5));

    let (_, ctx) = conv2d(x.clone(), &w, Some(&b)).unwrap();
    let g = ctx.backward(&w, &r, true).unwrap();

    let f = |p: &[f64]| dot(&r, &conv2d_forward(&with(xs, p), &w, Some(&b)).unwrap());
    let rep = finite_diff_check(f, x.data(), g.input.as_ref().unwrap().data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "input {rep:?}");

    let f = |p: &[f64]| dot(&r, &conv2d_forward(&x, &with(ws, p), Some(&b)).unwrap());
    let rep = finite_diff_check(f, w.data(), g.weight.data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "weight {rep:?}");

    let f = |p: &[f64]| dot(&r, &conv2d_forward(&x, &w, Some(p)).unwrap());
    let rep = finite_diff_check(f, &b, g.bias.as_ref().unwrap(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "bias {rep:?}");
}

#[test]
fn batch_norm_train_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = Shape::new(3, 2, 4, 3);
    let x = random(&mut rng, s);
    let gamma = vec![1.3, -0.7];
    let beta = vec![0.2, 0.5];
    let r = random(&mut rng, s);
    let cfg = BatchNormConfig::default();
    let run = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
        let mut stats = RunningStats::identity(2);
        batch_norm(x, g, b, Mode::Train, &mut stats, cfg).unwrap()
    };
    let (_, ctx) = run(&x, &gamma, &beta);
    let g = ctx.backward(&r).unwrap();

    let rep = finite_diff_check(|p| dot(&r, &run(&with(s, p), &gamma, &beta).0), x.data(), g.input.data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "input {rep:?}");
    let rep = finite_diff_check(|p| dot(&r, &run(&x, p, &beta).0), &gamma, &g.gamma, STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "gamma {rep:?}");
    let rep = finite_diff_check(|p| dot(&r, &run(&x, &gamma, p).0), &beta, &g.beta, STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "beta {rep:?}");
}

#[test]
fn relu_and_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Shape::new(2, 4, 3, 3);
    // keep relu inputs away from the kink
    let x = Tensor::from_vec(
        s,
        (0..s.len())
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect(),
    )
    .unwrap();
    let r = random(&mut rng, s);

    let (_, ctx) = relu(&x);
    let g = ctx.backward(r.clone());
    let rep = finite_diff_check(|p| dot(&r, &relu(&with(s, p)).0), x.data(), g.data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "relu {rep:?}");

    let (_, ctx) = softmax_channels(&x);
    let g = ctx.backward(&r).unwrap();
    let rep = finite_diff_check(|p| dot(&r, &softmax_channels_forward(&with(s, p))), x.data(), g.data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "softmax {rep:?}");
}

#[test]
fn pool_unpool_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = Shape::new(2, 2, 4, 6);
    // distinct values so the argmax is stable under the probe step
    let mut vals: Vec<f64> = (0..s.len()).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::from_vec(s, vals).unwrap();
    let ps = Shape::new(2, 2, 2, 3);
    let r = random(&mut rng, ps);
    let (_, idx) = max_pool_2x2(&x).unwrap();
    let g = max_pool_2x2_backward(&r, &idx).unwrap();
    let rep = finite_diff_check(|p| dot(&r, &max_pool_2x2(&with(s, p)).unwrap().0), x.data(), g.data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "pool {rep:?}");

    let y = random(&mut rng, ps);
    let ru = random(&mut rng, s);
    let g = max_unpool_2x2_backward(&ru, &idx).unwrap();
    let rep = finite_diff_check(|p| dot(&ru, &max_unpool_2x2(&with(ps, p), &idx).unwrap()), y.data(), g.data(), STEP, None).unwrap();
    assert!(rep.max_rel_error < TOL, "unpool {rep:?}");

    let a = random(&mut rng, Shape::new(2, 1, 2, 2));
    let b = random(&mut rng, Shape::new(2, 3, 2, 2));
    let cat = concat_channels(&a, &b).unwrap();
    let (a2, b2) = split_channels(&cat, 1).unwrap();
    assert_eq!((a2, b2), (a, b));
}

fn tensor_strategy(shape: Shape, lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(lo..hi, shape.len()).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(
        x in tensor_strategy(Shape::new(1, 2, 5, 4), -1.0, 1.0),
        y in tensor_strategy(Shape::new(1, 2, 5, 4), -1.0, 1.0),
        w in tensor_strategy(Shape::new(3, 2, 3, 3), -1.0, 1.0),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv2d_forward(&with(x.shape(), &mix), &w, None).unwrap();
        let cx = conv2d_forward(&x, &w, None).unwrap();
        let cy = conv2d_forward(&y, &w, None).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() <= 1e-10);
        }
    }

    #[test]
    fn softmax_is_a_simplex(x in tensor_strategy(Shape::new(2, 4, 3, 2), -50.0, 50.0)) {
        let p = softmax_channels_forward(&x);
        for b in 0..2 {
            for j in 0..6 {
                let s: f64 = (0..4).map(|c| p.plane(b, c)[j]).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!((0..4).all(|c| p.plane(b, c)[j] >= 0.0));
            }
        }
    }

    #[test]
    fn pooling_the_unpooled_tensor_is_exact(x in tensor_strategy(Shape::new(2, 3, 6, 4), 0.0, 1.0)) {
        let (pooled, idx) = max_pool_2x2(&x).unwrap();
        let up = max_unpool_2x2(&pooled, &idx).unwrap();
        let (again, _) = max_pool_2x2(&up).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&again), bits(&pooled));
        // unpooling keeps each window max in place and zeroes the rest
        prop_assert_eq!(up.data().iter().filter(|&&v| v != 0.0).count(), pooled.data().iter().filter(|&&v| v != 0.0).count());
    }
}

#[test]
fn negative_window_max_is_not_recovered() {
    // zeros written by unpooling outrank a negative maximum
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![-3.0, -1.0, -2.0, -4.0]).unwrap();
    let (pooled, idx) = max_pool_2x2(&x).unwrap();
    let (again, _) = max_pool_2x2(&max_unpool_2x2(&pooled, &idx).unwrap()).unwrap();
    assert_eq!(pooled.data(), &[-1.0]);
    assert_eq!(again.data(), &[0.0]);
}

//! Reverse-mode gradients against central finite differences in f64.

use ndarray::{Array2, Array3};
use rand::Rng;
use spend_core::rng::substream;
use spend_core::Error;
use spend_nnet::layers::{
    concat_backward, concat_forward, conv_backward, conv_forward, maxpool_backward,
    maxpool_forward, relu_backward, upsample_backward, upsample_forward, Conv,
};
use spend_nnet::{ModelConfig, Net};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely: central
/// differences of an O(1) loss carry ~1e-11 of rounding noise.
const FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random3(seed: u64, dim: (usize, usize, usize)) -> Array3<f64> {
    let mut rng = substream(seed, &[]);
    Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}

fn random2(seed: u64, dim: (usize, usize)) -> Array2<f64> {
    let mut rng = substream(seed, &[]);
    Array2::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}

fn random_conv(seed: u64, o: usize, i: usize, k: usize) -> Conv<f64> {
    let mut rng = substream(seed, &[]);
    let mut c = Conv::zeros(o, i, k);
    c.w.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    c.b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    c
}

/// Checks `grad` against central differences of `f` at `x` (perturbed in
/// place). Returns the largest relative error.
fn check_input<F>(x: &mut Array3<f64>, grad: &Array3<f64>, f: F) -> f64
where
    F: Fn(&Array3<f64>) -> f64,
{
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let orig = x.as_slice().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + STEP;
        let up = f(x);
        x.as_slice_mut().unwrap()[idx] = orig - STEP;
        let down = f(x);
        x.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(grad.as_slice().unwrap()[idx], numeric));
    }
    worst
}

#[test]
fn conv_gradients_3x3_and_1x1() {
    for (k, h, w) in [(3, 5, 6), (1, 4, 3), (3, 2, 3)] {
        let conv = random_conv(1, 3, 2, k);
        let mut x = random3(2, (2, h, w));
        let probe = random3(3, (3, h, w));
        let loss = |conv: &Conv<f64>, x: &Array3<f64>| (conv_forward(conv, x.view()) * &probe).sum();

        let mut grad = Conv::zeros(3, 2, k);
        let dx = conv_backward(&conv, x.view(), probe.view(), &mut grad, true).unwrap();
        let worst_x = check_input(&mut x, &dx, |x| loss(&conv, x));
        assert!(worst_x < TOL, "k={k} input: {worst_x}");

        let mut c = conv.clone();
        let mut worst_w = 0.0f64;
        for idx in 0..c.w.len() {
            let orig = c.w.as_slice().unwrap()[idx];
            c.w.as_slice_mut().unwrap()[idx] = orig + STEP;
            let up = loss(&c, &x);
            c.w.as_slice_mut().unwrap()[idx] = orig - STEP;
            let down = loss(&c, &x);
            c.w.as_slice_mut().unwrap()[idx] = orig;
            worst_w = worst_w.max(rel_err(grad.w.as_slice().unwrap()[idx], (up - down) / (2.0 * STEP)));
        }
        for o in 0..3 {
            let orig = c.b[o];
            c.b[o] = orig + STEP;
            let up = loss(&c, &x);
            c.b[o] = orig - STEP;
            let down = loss(&c, &x);
            c.b[o] = orig;
            worst_w = worst_w.max(rel_err(grad.b[o], (up - down) / (2.0 * STEP)));
        }
        assert!(worst_w < TOL, "k={k} params: {worst_w}");
    }
}

#[test]
fn relu_gradient() {
    let mut x = random3(4, (2, 4, 4));
    let probe = random3(5, (2, 4, 4));
    let relu = |x: &Array3<f64>| x.mapv(|v| v.max(0.0));
    let dx = relu_backward(relu(&x).view(), probe.clone());
    let worst = check_input(&mut x, &dx, |x| (relu(x) * &probe).sum());
    assert!(worst < TOL, "{worst}");
}

#[test]
fn maxpool_gradient() {
    let mut x = random3(6, (2, 4, 6));
    let probe = random3(7, (2, 2, 3));
    let (_, arg) = maxpool_forward(x.view());
    let dx = maxpool_backward(probe.view(), &arg);
    let worst = check_input(&mut x, &dx, |x| (maxpool_forward(x.view()).0 * &probe).sum());
    assert!(worst < TOL, "{worst}");
}

#[test]
fn upsample_gradient() {
    let mut x = random3(8, (2, 3, 2));
    let probe = random3(9, (2, 6, 4));
    let dx = upsample_backward(probe.view());
    let worst = check_input(&mut x, &dx, |x| (upsample_forward(x.view()) * &probe).sum());
    assert!(worst < TOL, "{worst}");
}

#[test]
fn concat_gradient() {
    let mut a = random3(10, (2, 3, 3));
    let b = random3(11, (3, 3, 3));
    let probe = random3(12, (5, 3, 3));
    let (da, db) = concat_backward(probe.view(), 2);
    let worst = check_input(&mut a, &da, |a| (concat_forward(a.view(), b.view()) * &probe).sum());
    assert!(worst < TOL, "{worst}");
    let mut b2 = b.clone();
    let worst = check_input(&mut b2, &db, |b| (concat_forward(a.view(), b.view()) * &probe).sum());
    assert!(worst < TOL, "{worst}");
}

fn small_net(seed: u64) -> Net<f64> {
    let cfg = ModelConfig {
        depth: 1,
        base_channels: 2,
        seed,
        ..ModelConfig::default()
    };
    let mut net = Net::<f64>::init(&cfg).unwrap();
    // nonzero biases so every bias gradient is exercised away from zero
    let mut rng = substream(seed, &[99]);
    for l in &mut net.layers {
        l.b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    net
}

#[test]
fn whole_network_parameter_gradients() {
    let net = small_net(21);
    let inputs = vec![random2(22, (8, 8)), random2(23, (8, 8))];
    let targets = vec![random2(24, (8, 8)), random2(25, (8, 8))];
    let (_, grads) = net.loss_and_grad(&inputs, &targets).unwrap();
    let loss = |n: &Net<f64>| n.mse(&inputs, &targets).unwrap();

    let mut probe = net.clone();
    for (li, g) in grads.iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in 0..g.w.len() {
            let orig = probe.layers[li].w.as_slice().unwrap()[idx];
            probe.layers[li].w.as_slice_mut().unwrap()[idx] = orig + STEP;
            let up = loss(&probe);
            probe.layers[li].w.as_slice_mut().unwrap()[idx] = orig - STEP;
            let down = loss(&probe);
            probe.layers[li].w.as_slice_mut().unwrap()[idx] = orig;
            worst = worst.max(rel_err(g.w.as_slice().unwrap()[idx], (up - down) / (2.0 * STEP)));
        }
        for idx in 0..g.b.len() {
            let orig = probe.layers[li].b[idx];
            probe.layers[li].b[idx] = orig + STEP;
            let up = loss(&probe);
            probe.layers[li].b[idx] = orig - STEP;
            let down = loss(&probe);
            probe.layers[li].b[idx] = orig;
            worst = worst.max(rel_err(g.b[idx], (up - down) / (2.0 * STEP)));
        }
        assert!(worst < TOL, "layer {li}: {worst}");
    }
}

#[test]
fn whole_network_input_gradient() {
    let net = small_net(31);
    let mut x = random2(32, (8, 8)).insert_axis(ndarray::Axis(0));
    let t = random2(33, (8, 8));
    let (y, tape) = net.forward_tape(x.index_axis(ndarray::Axis(0), 0)).unwrap();
    let dy = (&y - &t).mapv(|v| 2.0 * v / 64.0);
    let mut grads = net.zeros_like();
    let dx = net.backward(&tape, dy.view(), &mut grads).insert_axis(ndarray::Axis(0));
    let worst = check_input(&mut x, &dx, |x| {
        let y = net.forward(x.index_axis(ndarray::Axis(0), 0)).unwrap();
        (&y - &t).mapv(|v| v * v).mean().unwrap()
    });
    assert!(worst < TOL, "{worst}");
}

#[test]
fn exact_targets_give_zero_loss_and_gradients() {
    let net = small_net(41);
    let inputs = vec![random2(42, (8, 8))];
    let targets = net.forward_batch(&inputs).unwrap();
    let (loss, grads) = net.loss_and_grad(&inputs, &targets).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| g.w.iter().chain(g.b.iter()).all(|&v| v == 0.0)));
}

#[test]
fn doubling_the_residual_quadruples_the_loss() {
    let net = small_net(51);
    let inputs = vec![random2(52, (8, 8)), random2(53, (8, 8))];
    let targets = vec![random2(54, (8, 8)), random2(55, (8, 8))];
    let outputs = net.forward_batch(&inputs).unwrap();
    let doubled: Vec<Array2<f64>> = outputs
        .iter()
        .zip(&targets)
        .map(|(y, t)| y - &((y - t) * 2.0))
        .collect();
    let (l1, _) = net.loss_and_grad(&inputs, &targets).unwrap();
    let (l2, _) = net.loss_and_grad(&inputs, &doubled).unwrap();
    assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2, "{l1} {l2}");
}

#[test]
fn non_finite_intermediate_names_the_layer() {
    let mut net = small_net(61);
    net.layers[3].b[0] = f64::NAN;
    let inputs = vec![random2(62, (8, 8))];
    match net.loss_and_grad(&inputs, &inputs) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("layer 3"), "{msg}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

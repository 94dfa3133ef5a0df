//! Central finite-difference checks for every layer's backward pass and for
//! whole networks, step 1e-6, relative tolerance 1e-4.

use ndarray::{Array1, Array4, Array5};
use orim_core::basis::{Family, MomentSpec};
use orim_gcnn::layers::{
    softmax_cross_entropy, ChannelAffine, Dense, GroupConv, LiftConv, Map4, MaxPool2, Pad, Relu,
};
use orim_gcnn::model::{build_model, LayerGrads, ModelConfig, Variant};
use orim_gcnn::transition::OrimTransition;
use orim_gcnn::group::{Group, GroupKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Central finite difference of `f` at `x[i]`.
fn central_fd(f: &mut dyn FnMut(&[f64]) -> f64, x: &mut [f64], i: usize) -> f64 {
    let keep = x[i];
    x[i] = keep + STEP;
    let plus = f(x);
    x[i] = keep - STEP;
    let minus = f(x);
    x[i] = keep;
    (plus - minus) / (2.0 * STEP)
}

/// Assert `analytic` matches finite differences of `f` at the probed indices.
fn assert_grad_matches(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &mut [f64],
    analytic: &[f64],
    probe_stride: usize,
    label: &str,
) {
    assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0;
    for i in (0..x.len()).step_by(probe_stride.max(1)) {
        let fd = central_fd(f, x, i);
        let denom = analytic[i].abs().max(fd.abs()).max(1.0);
        let err = (analytic[i] - fd).abs() / denom;
        if err > worst {
            worst = err;
        }
        assert!(
            err <= TOL,
            "{label}: index {i}, analytic {}, fd {fd}, rel err {err}",
            analytic[i]
        );
    }
    // Keep the worst case visible when running with --nocapture.
    eprintln!("{label}: worst relative error {worst:.3e}");
}

fn random_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// Weighted sum of all outputs: a scalar loss whose output gradient is the
/// weight vector itself.
fn projected(out: &Map4, weights: &[f64]) -> f64 {
    out.iter().zip(weights).map(|(a, b)| a * b).sum()
}

#[test]
fn lift_conv_filters_and_input_pass_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let group = Group::new(GroupKind::P4);
    let lift = LiftConv::new(group, 3, 2, 2, Pad::Same, &mut rng);
    let input_flat = random_vec(&mut rng, 6 * 6 * 2);
    let weights = random_vec(&mut rng, 6 * 6 * 4 * 2);
    let mut filt_flat = lift.filters.as_slice().unwrap().to_vec();

    let input = Map4::from_shape_vec((6, 6, 1, 2), input_flat.clone()).unwrap();
    let (_, cache) = lift.forward(&input).unwrap();
    let upstream = Map4::from_shape_vec((6, 6, 4, 2), weights.clone()).unwrap();
    let (grad_in, grad_filters) = lift.backward(&cache, &upstream);

    let mut by_filters = |p: &[f64]| {
        let mut l = lift.clone();
        l.filters = Array4::from_shape_vec((3, 3, 2, 2), p.to_vec()).unwrap();
        projected(&l.forward(&input).unwrap().0, &weights)
    };
    assert_grad_matches(
        &mut by_filters,
        &mut filt_flat,
        grad_filters.as_slice().unwrap(),
        1,
        "lift filters",
    );

    let mut by_input = |p: &[f64]| {
        let x = Map4::from_shape_vec((6, 6, 1, 2), p.to_vec()).unwrap();
        projected(&lift.forward(&x).unwrap().0, &weights)
    };
    let mut input_probe = input_flat;
    assert_grad_matches(
        &mut by_input,
        &mut input_probe,
        grad_in.as_slice().unwrap(),
        3,
        "lift input",
    );
}

#[test]
fn group_conv_filters_and_input_pass_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(37);
    let group = Group::new(GroupKind::P4);
    let gconv = GroupConv::new(group, 3, 2, 2, Pad::Valid, &mut rng);
    let input_flat = random_vec(&mut rng, 5 * 5 * 4 * 2);
    let weights = random_vec(&mut rng, 3 * 3 * 4 * 2);
    let mut filt_flat = gconv.filters.as_slice().unwrap().to_vec();

    let input = Map4::from_shape_vec((5, 5, 4, 2), input_flat.clone()).unwrap();
    let (out, cache) = gconv.forward(&input).unwrap();
    assert_eq!(out.dim(), (3, 3, 4, 2));
    let upstream = Map4::from_shape_vec((3, 3, 4, 2), weights.clone()).unwrap();
    let (grad_in, grad_filters) = gconv.backward(&cache, &upstream);

    let mut by_filters = |p: &[f64]| {
        let mut l = gconv.clone();
        l.filters = Array5::from_shape_vec((3, 3, 4, 2, 2), p.to_vec()).unwrap();
        projected(&l.forward(&input).unwrap().0, &weights)
    };
    assert_grad_matches(
        &mut by_filters,
        &mut filt_flat,
        grad_filters.as_slice().unwrap(),
        2,
        "group conv filters",
    );

    let mut by_input = |p: &[f64]| {
        let x = Map4::from_shape_vec((5, 5, 4, 2), p.to_vec()).unwrap();
        projected(&gconv.forward(&x).unwrap().0, &weights)
    };
    let mut input_probe = input_flat;
    assert_grad_matches(
        &mut by_input,
        &mut input_probe,
        grad_in.as_slice().unwrap(),
        3,
        "group conv input",
    );
}

#[test]
fn affine_relu_pool_and_dense_pass_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(41);

    // Channel affine: parameters and input.
    let mut affine = ChannelAffine::new(3);
    for c in 0..3 {
        affine.scale[c] = 0.7 + 0.3 * c as f64;
        affine.shift[c] = 0.1 * c as f64 - 0.05;
    }
    let x_flat = random_vec(&mut rng, 4 * 4 * 4 * 3);
    let weights = random_vec(&mut rng, 4 * 4 * 4 * 3);
    let x = Map4::from_shape_vec((4, 4, 4, 3), x_flat.clone()).unwrap();
    let (_, cache) = affine.forward(&x).unwrap();
    let upstream = Map4::from_shape_vec((4, 4, 4, 3), weights.clone()).unwrap();
    let (grad_in, grad_scale, grad_shift) = affine.backward(&cache, &upstream);
    let mut params: Vec<f64> = affine
        .scale
        .iter()
        .chain(affine.shift.iter())
        .cloned()
        .collect();
    let analytic: Vec<f64> = grad_scale.iter().chain(grad_shift.iter()).cloned().collect();
    let mut by_params = |p: &[f64]| {
        let mut a = ChannelAffine::new(3);
        a.scale = Array1::from_vec(p[..3].to_vec());
        a.shift = Array1::from_vec(p[3..].to_vec());
        projected(&a.forward(&x).unwrap().0, &weights)
    };
    assert_grad_matches(&mut by_params, &mut params, &analytic, 1, "affine params");
    let mut by_input = |p: &[f64]| {
        let xi = Map4::from_shape_vec((4, 4, 4, 3), p.to_vec()).unwrap();
        projected(&affine.forward(&xi).unwrap().0, &weights)
    };
    let mut x_probe = x_flat.clone();
    assert_grad_matches(
        &mut by_input,
        &mut x_probe,
        grad_in.as_slice().unwrap(),
        5,
        "affine input",
    );

    // ReLU, inputs bounded away from the kink.
    let relu_flat: Vec<f64> = random_vec(&mut rng, 4 * 4 * 4 * 2)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    let xr = Map4::from_shape_vec((4, 4, 4, 2), relu_flat.clone()).unwrap();
    let wr = random_vec(&mut rng, 4 * 4 * 4 * 2);
    let (_, cache) = Relu.forward(&xr);
    let upstream = Map4::from_shape_vec((4, 4, 4, 2), wr.clone()).unwrap();
    let grad_in = Relu.backward(&cache, &upstream);
    let mut by_relu = |p: &[f64]| {
        let xi = Map4::from_shape_vec((4, 4, 4, 2), p.to_vec()).unwrap();
        projected(&Relu.forward(&xi).0, &wr)
    };
    let mut xr_probe = relu_flat;
    assert_grad_matches(
        &mut by_relu,
        &mut xr_probe,
        grad_in.as_slice().unwrap(),
        3,
        "relu input",
    );

    // Max pool: distinct values so the argmax is stable under the FD step.
    let pool_flat: Vec<f64> = (0..6 * 6 * 4 * 2)
        .map(|i| (i as f64 * 0.37).sin() + 0.001 * i as f64)
        .collect();
    let xp = Map4::from_shape_vec((6, 6, 4, 2), pool_flat.clone()).unwrap();
    let wp = random_vec(&mut rng, 3 * 3 * 4 * 2);
    let (_, cache) = MaxPool2.forward(&xp).unwrap();
    let upstream = Map4::from_shape_vec((3, 3, 4, 2), wp.clone()).unwrap();
    let grad_in = MaxPool2.backward(&cache, &upstream);
    let mut by_pool = |p: &[f64]| {
        let xi = Map4::from_shape_vec((6, 6, 4, 2), p.to_vec()).unwrap();
        projected(&MaxPool2.forward(&xi).unwrap().0, &wp)
    };
    let mut xp_probe = pool_flat;
    assert_grad_matches(
        &mut by_pool,
        &mut xp_probe,
        grad_in.as_slice().unwrap(),
        3,
        "pool input",
    );

    // Dense: weight, bias, input.
    let dense = Dense::new(12, 5, &mut rng);
    let dx = random_vec(&mut rng, 12);
    let dw = random_vec(&mut rng, 5);
    let xd = Array1::from_vec(dx.clone());
    let (_, cache) = dense.forward(xd.view()).unwrap();
    let upstream = Array1::from_vec(dw.clone());
    let (grad_in, grad_w, grad_b) = dense.backward(&cache, upstream.view());
    let mut params: Vec<f64> = dense
        .weight
        .iter()
        .chain(dense.bias.iter())
        .cloned()
        .collect();
    let analytic: Vec<f64> = grad_w.iter().chain(grad_b.iter()).cloned().collect();
    let mut by_dense = |p: &[f64]| {
        let mut d = dense.clone();
        d.weight = ndarray::Array2::from_shape_vec((5, 12), p[..60].to_vec()).unwrap();
        d.bias = Array1::from_vec(p[60..].to_vec());
        let (y, _) = d.forward(xd.view()).unwrap();
        y.iter().zip(&dw).map(|(a, b)| a * b).sum()
    };
    assert_grad_matches(&mut by_dense, &mut params, &analytic, 1, "dense params");
    let mut by_dense_input = |p: &[f64]| {
        let xi = Array1::from_vec(p.to_vec());
        let (y, _) = dense.forward(xi.view()).unwrap();
        y.iter().zip(&dw).map(|(a, b)| a * b).sum()
    };
    let mut dx_probe = dx;
    assert_grad_matches(
        &mut by_dense_input,
        &mut dx_probe,
        grad_in.as_slice().unwrap(),
        1,
        "dense input",
    );
}

#[test]
fn softmax_cross_entropy_gradient_matches() {
    let mut rng = ChaCha20Rng::seed_from_u64(43);
    let mut logits = random_vec(&mut rng, 10);
    let label = 3;
    let x = Array1::from_vec(logits.clone());
    let (_, grad) = softmax_cross_entropy(x.view(), label);
    let mut f = |p: &[f64]| {
        let xi = Array1::from_vec(p.to_vec());
        softmax_cross_entropy(xi.view(), label).0
    };
    assert_grad_matches(
        &mut f,
        &mut logits,
        grad.as_slice().unwrap(),
        1,
        "softmax cross entropy",
    );
}

#[test]
fn transition_passes_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(47);
    let spec = MomentSpec::new(Family::PseudoZernike, 3).unwrap();
    let head = OrimTransition::new(spec, 8, 3, false).unwrap();
    let x_flat = random_vec(&mut rng, 8 * 8 * 4 * 3);
    let weights = random_vec(&mut rng, head.feature_len());
    let x = Map4::from_shape_vec((8, 8, 4, 3), x_flat.clone()).unwrap();
    let (_, cache) = head.forward(&x).unwrap();
    let upstream = Array1::from_vec(weights.clone());
    let grad_in = head.backward(&cache, &upstream);
    let mut f = |p: &[f64]| {
        let xi = Map4::from_shape_vec((8, 8, 4, 3), p.to_vec()).unwrap();
        let (features, _) = head.forward(&xi).unwrap();
        features.iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let mut x_probe = x_flat;
    assert_grad_matches(
        &mut f,
        &mut x_probe,
        grad_in.as_slice().unwrap(),
        1,
        "transition input",
    );
}

#[test]
fn normalized_transition_passes_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(49);
    let spec = MomentSpec::new(Family::PseudoZernike, 3).unwrap();
    let head = OrimTransition::new(spec, 8, 2, false)
        .unwrap()
        .with_normalize(true);
    let x_flat = random_vec(&mut rng, 8 * 8 * 4 * 2);
    let weights = random_vec(&mut rng, head.feature_len());
    let x = Map4::from_shape_vec((8, 8, 4, 2), x_flat.clone()).unwrap();
    let (_, cache) = head.forward(&x).unwrap();
    let upstream = Array1::from_vec(weights.clone());
    let grad_in = head.backward(&cache, &upstream);
    let mut f = |p: &[f64]| {
        let xi = Map4::from_shape_vec((8, 8, 4, 2), p.to_vec()).unwrap();
        let (features, _) = head.forward(&xi).unwrap();
        features.iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let mut x_probe = x_flat;
    assert_grad_matches(
        &mut f,
        &mut x_probe,
        grad_in.as_slice().unwrap(),
        1,
        "normalized transition input",
    );
}

#[test]
fn two_layer_toy_net_end_to_end_gradient() {
    use orim_gcnn::transition::ThetaMaxFlatten;
    let mut rng = ChaCha20Rng::seed_from_u64(53);
    let group = Group::new(GroupKind::P4);
    let lift = LiftConv::new(group, 3, 1, 2, Pad::Same, &mut rng);
    let dense = Dense::new(6 * 6 * 2, 4, &mut rng);
    let image_flat = random_vec(&mut rng, 36);
    let label = 2;

    let run = |filters: &[f64], weight: &[f64], bias: &[f64]| -> f64 {
        let mut l = lift.clone();
        l.filters = Array4::from_shape_vec((3, 3, 1, 2), filters.to_vec()).unwrap();
        let mut d = dense.clone();
        d.weight = ndarray::Array2::from_shape_vec((4, 72), weight.to_vec()).unwrap();
        d.bias = Array1::from_vec(bias.to_vec());
        let x = Map4::from_shape_vec((6, 6, 1, 1), image_flat.clone()).unwrap();
        let (a, _) = l.forward(&x).unwrap();
        let (r, _) = Relu.forward(&a);
        let (flat, _) = ThetaMaxFlatten.forward(&r);
        let (y, _) = d.forward(flat.view()).unwrap();
        softmax_cross_entropy(y.view(), label).0
    };

    // Analytic gradient via the chained backwards.
    let x = Map4::from_shape_vec((6, 6, 1, 1), image_flat.clone()).unwrap();
    let (a, lift_cache) = lift.forward(&x).unwrap();
    let (r, relu_cache) = Relu.forward(&a);
    let (flat, flat_cache) = ThetaMaxFlatten.forward(&r);
    let (y, dense_cache) = dense.forward(flat.view()).unwrap();
    let (_, grad_logits) = softmax_cross_entropy(y.view(), label);
    let (grad_flat, grad_w, grad_b) = dense.backward(&dense_cache, grad_logits.view());
    let grad_map = ThetaMaxFlatten.backward(&flat_cache, &grad_flat);
    let grad_relu = Relu.backward(&relu_cache, &grad_map);
    let (_, grad_filters) = lift.backward(&lift_cache, &grad_relu);

    let w0: Vec<f64> = dense.weight.iter().cloned().collect();
    let b0: Vec<f64> = dense.bias.iter().cloned().collect();
    let mut filt = lift.filters.as_slice().unwrap().to_vec();
    let mut by_filters = |p: &[f64]| run(p, &w0, &b0);
    assert_grad_matches(
        &mut by_filters,
        &mut filt,
        grad_filters.as_slice().unwrap(),
        1,
        "toy net filters",
    );
    let f0 = lift.filters.as_slice().unwrap().to_vec();
    let mut weight = w0.clone();
    let mut by_weight = |p: &[f64]| run(&f0, p, &b0);
    assert_grad_matches(
        &mut by_weight,
        &mut weight,
        grad_w.as_slice().unwrap(),
        7,
        "toy net dense weight",
    );
    let mut bias = b0.clone();
    let mut by_bias = |p: &[f64]| run(&f0, &w0, p);
    assert_grad_matches(
        &mut by_bias,
        &mut bias,
        grad_b.as_slice().unwrap(),
        1,
        "toy net dense bias",
    );
}

#[test]
fn full_model_gradient_spot_check() {
    // Side 16 so the head sees a 2x2 map; every layer kind participates.
    let mut model = build_model(ModelConfig {
        variant: Variant::GcnnOrim {
            family: "pzm".to_string(),
            p_max: 3,
            central: false,
        },
        side: 16,
        classes: 10,
        seed: 59,
    })
    .unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(61);
    let image = ndarray::Array2::from_shape_fn((16, 16), |(t, s)| {
        let (dt, ds) = (t as f64 - 9.0, s as f64 - 6.0);
        (-(dt * dt + ds * ds) / 12.0).exp() + 0.05 * rng.gen::<f64>()
    });
    let label = 4;

    let (logits, caches) = model.forward(image.view()).unwrap();
    let (_, grad_logits) = softmax_cross_entropy(logits.view(), label);
    let grads = model.backward(&caches, grad_logits);
    let analytic = model.grads_to_flat(&grads);
    let mut params = model.flat_params();
    let n = params.len();

    let stride = n / 48;
    let mut worst = 0.0;
    for i in (0..n).step_by(stride.max(1)) {
        let keep = params[i];
        params[i] = keep + STEP;
        model.set_flat_params(&params).unwrap();
        let plus = model.loss_on(image.view(), label).unwrap().0;
        params[i] = keep - STEP;
        model.set_flat_params(&params).unwrap();
        let minus = model.loss_on(image.view(), label).unwrap().0;
        params[i] = keep;
        model.set_flat_params(&params).unwrap();
        let fd = (plus - minus) / (2.0 * STEP);
        let denom = analytic[i].abs().max(fd.abs()).max(1.0);
        let err = (analytic[i] - fd).abs() / denom;
        if err > worst {
            worst = err;
        }
        assert!(
            err <= TOL,
            "full model: param {i}, analytic {}, fd {fd}, rel err {err}",
            analytic[i]
        );
    }
    eprintln!("full model: worst relative error {worst:.3e}");
    // The gradient slots line up with the parameter layout.
    let mut nonzero_slots = 0;
    for g in &grads {
        if !matches!(g, LayerGrads::None) {
            nonzero_slots += 1;
        }
    }
    assert_eq!(nonzero_slots, 7, "three convs, three affines, one dense");
}

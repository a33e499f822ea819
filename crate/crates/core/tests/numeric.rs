use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srm_core::autodiff::{bce_loss, conv2d, deconv2d, Graph};
use srm_core::gradcheck::{grad_check, grad_check_sampled};
use srm_core::layers::{Activation, LayerSpec, Network};
use srm_core::params::ParameterSet;
use srm_core::{Error, Real, Tensor};

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&[1, 9, 7], &mut rng);
    let mut k = Tensor::zeros([1, 1, 5, 5]);
    k.data_mut()[12] = 1.0;
    assert_eq!(conv2d(&x, &k, 1, 2).unwrap(), x);
    assert_eq!(deconv2d(&x, &k, 1, 2, None).unwrap(), x);
}

#[test]
fn all_ones_kernel_sums_window() {
    let x = Tensor::full([1, 9, 9], 1.0);
    let k = Tensor::full([1, 1, 5, 5], 1.0);
    let y = conv2d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 5, 5]);
    assert!(y.data().iter().all(|&v| v == 25.0));
}

#[test]
fn conv_shape_rule() {
    let x = Tensor::zeros([1, 28, 28]);
    let k = Tensor::zeros([8, 1, 5, 5]);
    assert_eq!(conv2d(&x, &k, 1, 2).unwrap().shape(), &[8, 28, 28]);
    let y = conv2d(
        &Tensor::zeros([2, 11, 10]),
        &Tensor::zeros([3, 2, 5, 5]),
        1,
        1,
    )
    .unwrap();
    assert_eq!(y.shape(), &[3, 9, 8]);
    let back = deconv2d(&y, &Tensor::zeros([3, 2, 5, 5]), 1, 1, None).unwrap();
    assert_eq!(back.shape(), &[2, 11, 10]);
}

#[test]
fn conv_channel_mismatch_rejected() {
    let x = Tensor::zeros([2, 8, 8]);
    let k = Tensor::zeros([4, 3, 5, 5]);
    assert!(matches!(conv2d(&x, &k, 1, 2), Err(Error::Shape { .. })));
    assert!(deconv2d(&Tensor::zeros([3, 8, 8]), &k, 1, 2, None).is_err());
}

fn adjoint_gap(
    c: usize,
    f: usize,
    hw: (usize, usize),
    stride: usize,
    padding: usize,
    seed: u64,
) -> Real {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor(&[c, hw.0, hw.1], &mut rng);
    let k = random_tensor(&[f, c, 5, 5], &mut rng);
    let ca = conv2d(&a, &k, stride, padding).unwrap();
    let b = random_tensor(ca.shape(), &mut rng);
    let db = deconv2d(&b, &k, stride, padding, Some(hw)).unwrap();
    (ca.dot(&b).unwrap() - a.dot(&db).unwrap()).abs()
}

#[test]
fn conv_deconv_adjoint_on_6x6() {
    for seed in 0..20 {
        assert!(adjoint_gap(2, 3, (6, 6), 1, 2, seed) < 1e-10);
        assert!(adjoint_gap(1, 2, (6, 6), 1, 0, seed) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn adjoint_identity_random_geometry(
        c in 1usize..3, f in 1usize..4, h in 5usize..12, w in 5usize..12,
        stride in 1usize..3, padding in 0usize..3, seed in any::<u64>()
    ) {
        prop_assert!(adjoint_gap(c, f, (h, w), stride, padding, seed) < 1e-10);
    }
}

#[test]
fn bce_examples() {
    let half = Tensor::full([4], 0.5);
    let t = Tensor::new([4], vec![0.0, 1.0, 0.3, 1.0]).unwrap();
    assert!((bce_loss(&half, &t).unwrap() - std::f64::consts::LN_2 as Real).abs() < 1e-12);

    let p = Tensor::scalar(0.8);
    let one = Tensor::scalar(1.0);
    assert!((bce_loss(&p, &one).unwrap() - 0.2231).abs() < 1e-4);

    let exact = Tensor::new([3], vec![0.0, 1.0, 1.0]).unwrap();
    assert!(bce_loss(&exact, &exact).unwrap() < 1e-6);

    assert!(bce_loss(&Tensor::zeros([3]), &Tensor::zeros([2])).is_err());
}

#[test]
fn backward_of_sum_is_ones_and_unreachable_is_zero() {
    let mut p = ParameterSet::new();
    let used = p.add("used", Tensor::from_fn([2, 3], |i| i as Real));
    let unused = p.add("unused", Tensor::full([4], 2.0));
    let mut g = Graph::new();
    let v = g.param(&p, used);
    let _ = g.param(&p, unused);
    let s = g.sum(v).unwrap();
    g.backward(s, &mut p).unwrap();
    assert!(p.grad(used).data().iter().all(|&x| x == 1.0));
    assert!(p.grad(unused).data().iter().all(|&x| x == 0.0));
}

#[test]
fn backward_twice_rejected() {
    let mut p = ParameterSet::new();
    let id = p.add("w", Tensor::scalar(1.0));
    let mut g = Graph::new();
    let v = g.param(&p, id);
    let s = g.sum(v).unwrap();
    g.backward(s, &mut p).unwrap();
    assert!(matches!(g.backward(s, &mut p), Err(Error::BackwardTwice)));
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::new();
    assert!(matches!(
        g.input(Tensor::scalar(Real::NAN)),
        Err(Error::NonFinite(_))
    ));
}

fn check_net(input: &[usize], specs: &[LayerSpec], batch: usize, seed: u64, tol: Real) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::new();
    let net = Network::build(input, specs, &mut p, "n", &mut rng).unwrap();
    // push biases off zero so every term is exercised
    for id in p.ids().collect::<Vec<_>>() {
        for v in p.value_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(input);
    let x = Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0));
    let out: usize = net.output_shape().iter().product();
    let target = Tensor::from_fn([batch * out], |_| rng.random_range(0.0..1.0));
    let report = grad_check(
        &mut p,
        |g, p| {
            let xv = g.input(x.clone())?;
            let y = net.forward(g, p, xv)?;
            let y = g.sigmoid(y)?;
            g.bce_loss(y, &target)
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < tol, "{specs:?}: {report:?}");
}

#[test]
fn fd_dense_sigmoid() {
    let specs = [
        LayerSpec::Dense {
            inputs: 5,
            outputs: 4,
        },
        LayerSpec::Activation(Activation::Sigmoid),
        LayerSpec::Dense {
            inputs: 4,
            outputs: 3,
        },
    ];
    check_net(&[5], &specs, 3, 10, 1e-6);
}

#[test]
fn fd_conv_and_relu() {
    let specs = [
        LayerSpec::conv(2, 3, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Flatten,
    ];
    check_net(&[2, 7, 7], &specs, 2, 11, 1e-4);
}

#[test]
fn fd_deconv() {
    let specs = [LayerSpec::deconv(3, 2, 2, 2, (7, 7))];
    check_net(&[3, 4, 4], &specs, 2, 12, 1e-4);
}

#[test]
fn fd_softmax_group_and_reshape() {
    let specs = [
        LayerSpec::Dense {
            inputs: 6,
            outputs: 8,
        },
        LayerSpec::Activation(Activation::SoftmaxPerGroup(4)),
        LayerSpec::Reshape(vec![2, 2, 2]),
        LayerSpec::Flatten,
    ];
    check_net(&[6], &specs, 3, 13, 1e-6);
}

#[test]
fn fd_cross_entropy_and_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut p = ParameterSet::new();
    let w = p.add("w", random_tensor(&[4, 6], &mut rng));
    let x = random_tensor(&[3, 4], &mut rng);
    let t = Tensor::from_fn([3, 6], |i| if i % 7 == 0 { 0.7 } else { 0.06 });
    let report = grad_check(
        &mut p,
        |g, p| {
            let xv = g.input(x.clone())?;
            let wv = g.param(p, w);
            let z = g.matmul(xv, wv)?;
            let ce = g.softmax_cross_entropy(z, &t)?;
            let kl = g.kl_to_uniform(z, 3)?;
            let kl = g.scale(kl, 0.3)?;
            g.add(ce, kl)
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn fd_full_conv_encoder_sampled() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let specs = [
        LayerSpec::conv(1, 4, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::conv(4, 4, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::conv(4, 4, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 4 * 4 * 4,
            outputs: 12,
        },
        LayerSpec::Activation(Activation::SoftmaxPerGroup(4)),
    ];
    let mut p = ParameterSet::new();
    let net = Network::build(&[1, 28, 28], &specs, &mut p, "enc", &mut rng).unwrap();
    let x = Tensor::from_fn([2, 1, 28, 28], |_| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn([24], |i| (i % 4 == 0) as u8 as Real);
    let report = grad_check_sampled(
        &mut p,
        |g, p| {
            let xv = g.input(x.clone())?;
            let y = net.forward(g, p, xv)?;
            g.bce_loss(y, &target)
        },
        1e-5,
        40,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut p = ParameterSet::new();
        let net = Network::build(
            &[1, 8, 8],
            &[LayerSpec::conv(1, 3, 2, 2), LayerSpec::Flatten],
            &mut p,
            "d",
            &mut rng,
        )
        .unwrap();
        let x = Tensor::from_fn([2, 1, 8, 8], |i| (i as Real * 0.1).cos());
        net.infer(&p, x).unwrap()
    };
    let (a, b) = (build(), build());
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn sgd_is_linear_in_rate(a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let id = p.add("w", random_tensor(&[5], &mut rng));
        *p.grad_mut(id) = random_tensor(&[5], &mut rng);
        let mut q = p.clone();
        p.apply_gradients(a as Real).unwrap();
        p.apply_gradients(b as Real).unwrap();
        q.apply_gradients((a + b) as Real).unwrap();
        for (x, y) in p.value(id).data().iter().zip(q.value(id).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

//! Reverse-mode gradients checked against central differences and closed forms.

use proptest::prelude::*;
use xbar::tensor::{loss_and_input_grad, softmax_cross_entropy, LayerSpec, Network, Tensor};

const H: f64 = 1e-5;

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn loss(net: &Network<f64>, x: &Tensor<f64>, y: &[usize]) -> f64 {
    softmax_cross_entropy(&net.forward(x).unwrap(), y).unwrap().0
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

fn check_network(specs: Vec<LayerSpec>, in_shape: &[usize], batch: usize, seed: u64) {
    let net = Network::<f64>::build(in_shape, &specs, seed).unwrap();
    let classes = net.num_classes();
    let mut shape = vec![batch];
    shape.extend_from_slice(in_shape);
    let x = input(&shape, seed + 100);
    let y: Vec<usize> = (0..batch).map(|i| (i * 7 + 3) % classes).collect();

    let (_, gx) = loss_and_input_grad(&net, &x, &y).unwrap();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut m = x.clone();
            m.data_mut()[i] -= H;
            (loss(&net, &p, &y) - loss(&net, &m, &y)) / (2.0 * H)
        })
        .collect();
    let err = max_relative_error(gx.data(), &numeric);
    assert!(err <= 1e-4, "input gradient error {err} for {specs:?}");

    let (out, cache) = net.forward_with(&x, &xbar::tensor::Digital, true).unwrap();
    let (_, g) = softmax_cross_entropy(&out, &y).unwrap();
    let grads = net.backward(&cache.unwrap(), &g, true).unwrap().params.unwrap();
    for (k, analytic) in grads.iter().enumerate() {
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let mut p = net.clone();
                p.params_mut()[k].data_mut()[i] += H;
                let mut m = net.clone();
                m.params_mut()[k].data_mut()[i] -= H;
                (loss(&p, &x, &y) - loss(&m, &x, &y)) / (2.0 * H)
            })
            .collect();
        let err = max_relative_error(analytic, &numeric);
        assert!(err <= 1e-4, "parameter {k} gradient error {err} for {specs:?}");
    }
}

#[test]
fn two_conv_toy_net() {
    check_network(Network::<f64>::toy_cnn_spec(10), &[1, 8, 8], 2, 1);
}

#[test]
fn strided_padded_conv() {
    let specs = vec![
        LayerSpec::Conv { out: 3, kernel: 3, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { out: 2, kernel: 2, stride: 1, padding: 0 },
        LayerSpec::Flatten,
        LayerSpec::Linear { out: 4 },
    ];
    check_network(specs, &[2, 7, 7], 3, 2);
}

#[test]
fn average_pooling_and_linear_stack() {
    let specs = vec![
        LayerSpec::AvgPool { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::Linear { out: 6 },
        LayerSpec::Relu,
        LayerSpec::Linear { out: 3 },
    ];
    check_network(specs, &[2, 6, 6], 2, 3);
}

#[test]
fn residual_block() {
    let specs = vec![
        LayerSpec::Conv { out: 3, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Residual {
            body: vec![
                LayerSpec::Conv { out: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv { out: 3, kernel: 3, stride: 1, padding: 1 },
            ],
        },
        LayerSpec::Flatten,
        LayerSpec::Linear { out: 5 },
    ];
    check_network(specs, &[1, 5, 5], 2, 4);
}

#[test]
fn linear_softmax_gradient_has_closed_form() {
    let net = Network::<f64>::build(&[6], &[LayerSpec::Linear { out: 4 }], 5).unwrap();
    let x = input(&[3, 6], 9);
    let y = [2, 0, 3];
    let (_, gx) = loss_and_input_grad(&net, &x, &y).unwrap();
    let w = net.params()[0].data().to_vec();
    let logits = net.forward(&x).unwrap();
    for n in 0..3 {
        let z = logits.sample(n);
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let p: Vec<f64> = z.iter().map(|v| (v - m).exp() / denom).collect();
        for j in 0..6 {
            // mean loss over the batch, hence the 1/3
            let expected: f64 = (0..4)
                .map(|c| w[c * 6 + j] * (p[c] - if c == y[n] { 1.0 } else { 0.0 }))
                .sum::<f64>()
                / 3.0;
            assert!((gx.sample(n)[j] - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_weights_give_uniform_loss() {
    let mut net = Network::<f64>::build(&[1, 8, 8], &Network::<f64>::toy_cnn_spec(10), 0).unwrap();
    net.params_mut().into_iter().for_each(|p| p.data_mut().fill(0.0));
    let x = input(&[2, 1, 8, 8], 1);
    let (l, _) = loss_and_input_grad(&net, &x, &[4, 7]).unwrap();
    assert!((l - 10f64.ln()).abs() < 1e-12);
    assert!(loss_and_input_grad(&net, &x, &[4, 10]).is_err());
}

/// Direct nested-loop forward of the toy CNN, written without im2col.
fn reference_forward(net: &Network<f64>, x: &[f64], hw: usize) -> Vec<f64> {
    let p = net.params();
    let conv = |inp: &[f64], c_in: usize, s: usize, w: &[f64], b: &[f64], c_out: usize| {
        let mut out = vec![0.0; c_out * s * s];
        for o in 0..c_out {
            for i in 0..s {
                for j in 0..s {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (yi, xj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                                if yi < 0 || xj < 0 || yi >= s as isize || xj >= s as isize {
                                    continue;
                                }
                                acc += w[o * c_in * 9 + c * 9 + di * 3 + dj]
                                    * inp[c * s * s + yi as usize * s + xj as usize];
                            }
                        }
                    }
                    out[o * s * s + i * s + j] = acc.max(0.0);
                }
            }
        }
        out
    };
    let pool = |inp: &[f64], c: usize, s: usize| {
        let h = s / 2;
        let mut out = vec![0.0; c * h * h];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..h {
                    let mut acc = 0.0;
                    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        acc += inp[ch * s * s + (2 * i + a) * s + 2 * j + b];
                    }
                    out[ch * h * h + i * h + j] = acc / 4.0;
                }
            }
        }
        out
    };
    let dense = |inp: &[f64], w: &[f64], b: &[f64], relu: bool| {
        b.iter()
            .enumerate()
            .map(|(o, &bo)| {
                let v = bo + inp.iter().enumerate().map(|(k, &xk)| w[o * inp.len() + k] * xk).sum::<f64>();
                if relu { v.max(0.0) } else { v }
            })
            .collect::<Vec<f64>>()
    };
    let c1 = p[0].shape()[0];
    let c2 = p[2].shape()[0];
    let a = pool(&conv(x, 1, hw, p[0].data(), p[1].data(), c1), c1, hw);
    let a = pool(&conv(&a, c1, hw / 2, p[2].data(), p[3].data(), c2), c2, hw / 2);
    let a = dense(&a, p[4].data(), p[5].data(), true);
    dense(&a, p[6].data(), p[7].data(), false)
}

#[test]
fn forward_matches_direct_reimplementation() {
    for seed in 0..3 {
        let net = Network::<f64>::build(&[1, 16, 16], &Network::<f64>::toy_cnn_spec(10), seed).unwrap();
        let x = input(&[2, 1, 16, 16], seed);
        let y = net.forward(&x).unwrap();
        for n in 0..2 {
            let r = reference_forward(&net, x.sample(n), 16);
            for (a, b) in y.sample(n).iter().zip(&r) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_entropy_is_finite_and_gradient_rows_sum_to_zero(
        z in prop::collection::vec(-50.0f64..50.0, 12),
        y in prop::collection::vec(0usize..4, 3),
    ) {
        let logits = Tensor::new(vec![3, 4], z).unwrap();
        let (l, g) = softmax_cross_entropy(&logits, &y).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
        for row in g.data().chunks(4) {
            prop_assert!(row.iter().all(|v| v.is_finite()));
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn small_dense_nets_pass_finite_differences(seed in 0u64..1000, hidden in 1usize..6) {
        let specs = vec![
            LayerSpec::Linear { out: hidden },
            LayerSpec::Relu,
            LayerSpec::Linear { out: 3 },
        ];
        let net = Network::<f64>::build(&[4], &specs, seed).unwrap();
        let x = input(&[2, 4], seed);
        let y = [0, 2];
        let (_, gx) = loss_and_input_grad(&net, &x, &y).unwrap();
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut m = x.clone();
            m.data_mut()[i] -= H;
            let num = (loss(&net, &p, &y) - loss(&net, &m, &y)) / (2.0 * H);
            prop_assert!((gx.data()[i] - num).abs() <= 1e-4 * num.abs().max(1e-3), "{} vs {}", gx.data()[i], num);
        }
    }

    #[test]
    fn tensor_length_matches_shape(dims in prop::collection::vec(1usize..5, 1..4)) {
        let n: usize = dims.iter().product();
        prop_assert!(Tensor::<f64>::new(dims.clone(), vec![0.0; n]).is_ok());
        prop_assert!(Tensor::<f64>::new(dims, vec![0.0; n + 1]).is_err());
    }
}

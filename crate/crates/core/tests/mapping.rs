//! Sliced/streamed/tiled execution checked against direct arithmetic.

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xbar::circuit::CrossbarModel;
use xbar::mapping::*;
use xbar::tensor::{synthetic_digits, LayerSpec, Network, SyntheticDigits, Tensor};

fn tile(rows: usize, cols: usize, preset: &str) -> CrossbarModel<f64> {
    let mut m = CrossbarModel::preset(preset).unwrap();
    m.geometry.rows = rows;
    m.geometry.cols = cols;
    m
}

fn random_layer(rng: &mut ChaCha8Rng, max_k: usize, max_out: usize) -> Array2<f64> {
    let k = rng.random_range(1..=max_k);
    let out = rng.random_range(1..=max_out);
    let sparse = rng.random_bool(0.3);
    Array2::from_shape_fn((out, k), |_| {
        if sparse && rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    })
}

fn random_inputs(rng: &mut ChaCha8Rng, rows: usize, k: usize, max: u64) -> Array2<u64> {
    Array2::from_shape_fn((rows, k), |_| rng.random_range(0..=max))
}

#[test]
fn sliced_execution_equals_integer_mvm_on_200_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let qc = QuantConfig::default();
    for case in 0..200 {
        let model = tile(rng.random_range(4..=20), rng.random_range(3..=16), "64x64_300k");
        let w = random_layer(&mut rng, 60, 40);
        let sliced = SlicedLayer::new(case, w.view(), &qc, &model).unwrap();
        let x = random_inputs(&mut rng, 3, w.ncols(), qc.max_input());
        // independent oracle: quantize, then one integer product
        let q = quantize_layer(w.as_slice().unwrap(), &qc).unwrap();
        let expected = Array2::from_shape_fn((3, w.nrows()), |(r, o)| {
            (0..w.ncols()).map(|i| q.values[o * w.ncols() + i] * x[[r, i]] as i64).sum::<i64>()
        });
        let literal = CompiledLayer::new(sliced.clone(), &ExecBackend::IdealDigital, ExecMode::Literal).unwrap();
        assert_eq!(literal.exact_integer_outputs(x.view()).unwrap(), expected, "case {case}");
        let direct = CompiledLayer::new(sliced, &ExecBackend::IdealDigital, ExecMode::Compiled).unwrap();
        assert_eq!(direct.exact_integer_outputs(x.view()).unwrap(), expected, "case {case}");
    }
}

#[test]
fn multi_bit_streams_and_one_bit_slices_are_exact_too() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for qc in [
        QuantConfig { stream_bits: 2, ..Default::default() },
        QuantConfig { stream_bits: 4, slice_bits: 1, ..Default::default() },
        QuantConfig { input_bits: 6, weight_bits: 6, stream_bits: 3, slice_bits: 2 },
    ] {
        let model = tile(9, 7, "32x32_100k");
        let w = random_layer(&mut rng, 30, 20);
        let sliced = SlicedLayer::new(0, w.view(), &qc, &model).unwrap();
        let x = random_inputs(&mut rng, 2, w.ncols(), qc.max_input());
        let a = CompiledLayer::new(sliced.clone(), &ExecBackend::IdealDigital, ExecMode::Literal).unwrap();
        let b = CompiledLayer::new(sliced, &ExecBackend::IdealDigital, ExecMode::Compiled).unwrap();
        assert_eq!(a.exact_integer_outputs(x.view()).unwrap(), b.exact_integer_outputs(x.view()).unwrap());
    }
}

fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

#[test]
fn zero_parasitic_circuit_equals_ideal_backend() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let qc = QuantConfig::default();
    let model = tile(12, 10, "64x64_100k").without_parasitics();
    for _ in 0..5 {
        let w = random_layer(&mut rng, 30, 25);
        let sliced = SlicedLayer::new(0, w.view(), &qc, &model).unwrap();
        let x = random_inputs(&mut rng, 2, w.ncols(), qc.max_input());
        let ideal = CompiledLayer::new(sliced.clone(), &ExecBackend::IdealDigital, ExecMode::Compiled)
            .unwrap()
            .integer_outputs(x.view())
            .unwrap();
        let backend = ExecBackend::CircuitNonIdeal(model.clone());
        for mode in [ExecMode::Literal, ExecMode::Compiled] {
            let y = CompiledLayer::new(sliced.clone(), &backend, mode).unwrap().integer_outputs(x.view()).unwrap();
            assert!(max_rel(&y, &ideal) <= 1e-9, "{mode:?}: {}", max_rel(&y, &ideal));
        }
    }
}

#[test]
fn collapsed_linear_circuit_matches_literal_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let qc = QuantConfig::default();
    let model = tile(10, 8, "64x64_100k");
    let backend = ExecBackend::CircuitNonIdeal(model.clone());
    let w = random_layer(&mut rng, 25, 14);
    let sliced = SlicedLayer::new(0, w.view(), &qc, &model).unwrap();
    let x = random_inputs(&mut rng, 3, w.ncols(), qc.max_input());
    let literal = CompiledLayer::new(sliced.clone(), &backend, ExecMode::Literal).unwrap().integer_outputs(x.view()).unwrap();
    let compiled = CompiledLayer::new(sliced.clone(), &backend, ExecMode::Compiled).unwrap().integer_outputs(x.view()).unwrap();
    assert!(max_rel(&compiled, &literal) <= 1e-9);
    // and parasitics make it differ from the ideal result
    let ideal = CompiledLayer::new(sliced, &ExecBackend::IdealDigital, ExecMode::Compiled).unwrap().integer_outputs(x.view()).unwrap();
    assert!(max_rel(&compiled, &ideal) > 1e-3);
}

#[test]
fn negated_weights_negate_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let qc = QuantConfig::default();
    let model = tile(8, 8, "32x32_100k");
    for _ in 0..20 {
        let w = random_layer(&mut rng, 20, 12);
        let x = random_inputs(&mut rng, 2, w.ncols(), qc.max_input());
        let run = |w: &Array2<f64>| {
            let s = SlicedLayer::new(0, w.view(), &qc, &model).unwrap();
            CompiledLayer::new(s, &ExecBackend::IdealDigital, ExecMode::Literal)
                .unwrap()
                .exact_integer_outputs(x.view())
                .unwrap()
        };
        assert_eq!(run(&w.mapv(|v| -v)), -run(&w));
    }
}

#[test]
fn mismatched_backend_is_rejected() {
    let w = Array2::from_elem((3, 3), 0.5);
    let sliced = SlicedLayer::new(0, w.view(), &QuantConfig::default(), &tile(8, 8, "32x32_100k")).unwrap();
    let other = ExecBackend::CircuitNonIdeal(tile(16, 8, "32x32_100k"));
    assert!(CompiledLayer::new(sliced, &other, ExecMode::Compiled).is_err());
}

fn trained_net() -> (Network<f64>, Tensor<f64>) {
    let specs = Network::<f64>::toy_cnn_spec(10);
    let net = Network::<f64>::build(&[1, 16, 16], &specs, 4).unwrap();
    let ds = synthetic_digits(6, &SyntheticDigits::default());
    (net, ds.images)
}

#[test]
fn ideal_network_matches_float_forward_within_quantization() {
    let (net, x) = trained_net();
    let tile_model = CrossbarModel::preset("64x64_300k").unwrap();
    let hw = AnalogClassifier::new(net.clone(), &QuantConfig::default(), &tile_model, &ExecBackend::IdealDigital).unwrap();
    let a = hw.logits(&x).unwrap();
    let b = net.forward(&x).unwrap();
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(err < 0.05 * scale, "{err} vs {scale}");
    assert_eq!(a.argmax_rows(), b.argmax_rows());
    // deterministic, including the all-zero image
    let zero = Tensor::zeros(vec![1, 1, 16, 16]);
    assert_eq!(hw.logits(&zero).unwrap(), hw.logits(&zero).unwrap());
    let report = hw.hardware.report();
    assert_eq!(report.layers.len(), 4);
    assert_eq!(report.layers[2].grid_rows, 4);
    assert!(report.to_toml().contains("active_crossbars"));
}

#[test]
fn signed_inputs_use_both_parts() {
    let specs = vec![LayerSpec::Linear { out: 3 }];
    let net = Network::<f64>::build(&[5], &specs, 1).unwrap();
    let x = Tensor::new(vec![2, 5], vec![0.3, -0.2, 0.9, -1.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
    let tile_model = tile(4, 2, "64x64_300k");
    let hw = AnalogClassifier::new(net.clone(), &QuantConfig::default(), &tile_model, &ExecBackend::IdealDigital).unwrap();
    let a = hw.logits(&x).unwrap();
    let b = net.forward(&x).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 0.02, "{p} vs {q}");
    }
}

proptest! {
    #[test]
    fn dequantization_is_within_half_a_step(w in prop::collection::vec(-3.0f64..3.0, 1..200)) {
        let q = quantize_layer(&w, &QuantConfig::default()).unwrap();
        for (a, b) in q.dequantize().iter().zip(&w) {
            prop_assert!((a - b).abs() <= q.scale / 2.0 + 1e-15);
        }
    }

    #[test]
    fn slices_reconstruct_integers(w in prop::collection::vec(-128i64..=127, 1..100), slice_bits in prop::sample::select(vec![1u32, 2, 4])) {
        let qc = QuantConfig { slice_bits, ..Default::default() };
        let s = slice_weights(&w, &qc).unwrap();
        prop_assert_eq!(s.reconstruct(slice_bits), w);
        prop_assert!(s.pos.iter().chain(&s.neg).flatten().all(|&d| d <= qc.max_digit()));
    }

    #[test]
    fn streams_reconstruct_inputs(x in prop::collection::vec(0u64..=255, 1..1000), stream_bits in prop::sample::select(vec![1u32, 2, 4, 8])) {
        let qc = QuantConfig { stream_bits, ..Default::default() };
        let planes = stream_inputs(&x, &qc).unwrap();
        for (i, &v) in x.iter().enumerate() {
            let back: u64 = planes.iter().enumerate().map(|(t, p)| (p[i] as u64) << (stream_bits as usize * t)).sum();
            prop_assert_eq!(back, v);
        }
    }

    #[test]
    fn tiles_read_back_their_digits(rows in 1usize..40, cols in 1usize..40, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let digits: Vec<u32> = (0..rows * cols).map(|_| rng.random_range(0..=3)).collect();
        let m = tile(16, 8, "64x64_300k");
        let grid = map_matrix_to_tiles(&digits, rows, cols, &m, 3).unwrap();
        prop_assert_eq!(grid.tiles.len(), rows.div_ceil(16) * cols.div_ceil(8));
        prop_assert_eq!(grid.read_back(&m, 3).unwrap(), digits);
    }
}

#[test]
fn logit_deviation_grows_with_crossbar_nonideality() {
    let specs = vec![
        LayerSpec::Flatten,
        LayerSpec::Linear { out: 32 },
        LayerSpec::Relu,
        LayerSpec::Linear { out: 10 },
    ];
    let net = Network::<f64>::build(&[1, 16, 16], &specs, 8).unwrap();
    let x = synthetic_digits(8, &SyntheticDigits { seed: 5, ..Default::default() }).images;
    let qc = QuantConfig::default();
    let mut last = 0.0;
    for preset in ["64x64_300k", "32x32_100k", "64x64_100k"] {
        let tile_model = CrossbarModel::preset(preset).unwrap();
        let ideal = AnalogClassifier::new(net.clone(), &qc, &tile_model, &ExecBackend::IdealDigital).unwrap();
        let analog = AnalogClassifier::new(net.clone(), &qc, &tile_model, &ExecBackend::CircuitNonIdeal(tile_model.clone()))
            .unwrap();
        let (a, b) = (analog.logits(&x).unwrap(), ideal.logits(&x).unwrap());
        let dev = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64;
        assert!(dev > 0.0 && dev >= last, "{preset}: {dev} < {last}");
        last = dev;
    }
}

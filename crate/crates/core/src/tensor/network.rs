use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::layers::{Layer, LayerCache, LayerSpec, ParamGrads};
use super::Tensor;

/// Computes the matrix product of every conv/linear layer.
///
/// `inputs` is `[rows, k]` with rows grouped by sample (`rows / samples` per
/// sample, in order); `weight` is `[out, k]`. Implementations return
/// `inputs · weightᵀ`, bias excluded.
pub trait MatmulExecutor<T: Scalar> {
    fn matmul(
        &self,
        layer: usize,
        weight: ArrayView2<'_, T>,
        inputs: ArrayView2<'_, T>,
        samples: usize,
    ) -> Result<Array2<T>>;
}

/// Exact floating point execution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Digital;

impl<T: Scalar> MatmulExecutor<T> for Digital {
    fn matmul(
        &self,
        _layer: usize,
        weight: ArrayView2<'_, T>,
        inputs: ArrayView2<'_, T>,
        _samples: usize,
    ) -> Result<Array2<T>> {
        Ok(inputs.dot(&weight.t()))
    }
}

/// Sequential network over `[n, c, h, w]` (or `[n, f]`) batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    entries: Vec<LayerCache<T>>,
    input_shape: Vec<usize>,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub input: Tensor<T>,
    /// Parameter gradients in [`Network::params`] order, when requested.
    pub params: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network from `specs` with fan-in scaled uniform weights and zero biases.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (layer, next) = spec.build(&shape, &mut rng)?;
            layers.push(layer);
            shape = next;
        }
        if shape.len() != 1 {
            return Err(Error::shape(format!(
                "network must end in a flat logit vector, ends in {shape:?}"
            )));
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    /// Two conv + two linear classifier used throughout the experiments.
    pub fn toy_cnn_spec(classes: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv {
                out: 8,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            LayerSpec::Conv {
                out: 16,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { out: 96 },
            LayerSpec::Relu,
            LayerSpec::Linear { out: classes },
        ]
    }

    /// Output shape of every layer, validating that adjacent layers compose.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let mut s = self.input_shape.clone();
        for l in &self.layers {
            s = l.out_shape(&s)?;
        }
        if s.len() != 1 {
            return Err(Error::shape(format!("network ends in {s:?}, not logits")));
        }
        Ok(s)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.validate().map(|s| s[0]).unwrap_or(0)
    }

    pub fn weighted_layers(&self) -> usize {
        self.layers.iter().map(Layer::weighted_layers).sum()
    }

    /// Weight/bias tensors, weighted layers in forward order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.layers
            .iter_mut()
            .for_each(|l| l.collect_params_mut(&mut out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Weight matrices (`[out, k]`) of the conv/linear layers in forward order.
    pub fn weight_matrices(&self) -> Vec<&Tensor<T>> {
        self.params().into_iter().step_by(2).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "network expects [n, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with(x, &Digital, false)?.0)
    }

    /// Forward pass routing every conv/linear product through `exec`.
    pub fn forward_with<E: MatmulExecutor<T> + ?Sized>(
        &self,
        x: &Tensor<T>,
        exec: &E,
        record: bool,
    ) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        self.check_input(x)?;
        let mut entries = if record { Some(Vec::new()) } else { None };
        let mut counter = 0;
        let mut y = Tensor::new(x.shape().to_vec(), x.data().to_vec())?;
        for l in &self.layers {
            y = l.forward(y, exec, &mut counter, entries.as_mut())?;
        }
        Ok((
            y,
            entries.map(|entries| ForwardCache {
                entries,
                input_shape: x.shape().to_vec(),
            }),
        ))
    }

    /// Reverse pass through the recorded activations. Local derivatives are
    /// the exact digital ones, evaluated at whatever the cache recorded.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor<T>,
        want_params: bool,
    ) -> Result<Backward<T>> {
        if cache.entries.len() != self.layers.len() {
            return Err(Error::invalid("forward cache does not match the network"));
        }
        let mut params: Option<ParamGrads<T>> = if want_params {
            Some(vec![None; self.weighted_layers()])
        } else {
            None
        };
        let mut g = grad_logits.clone();
        for (l, c) in self.layers.iter().zip(&cache.entries).rev() {
            g = l.backward(c, g, &mut params)?;
        }
        let input = g.reshape(cache.input_shape.clone())?;
        let params = params.map(|p| {
            p.into_iter()
                .flat_map(|slot| {
                    let (w, b) = slot.expect("every weighted layer visited");
                    [w, b]
                })
                .collect()
        });
        Ok(Backward { input, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_cnn_has_about_thirty_thousand_parameters() {
        let net =
            Network::<f64>::build(&[1, 16, 16], &Network::<f64>::toy_cnn_spec(10), 0).unwrap();
        assert_eq!(net.validate().unwrap(), vec![10]);
        let p = net.param_count();
        assert!((20_000..40_000).contains(&p), "{p}");
        assert_eq!(net.weighted_layers(), 4);
    }

    #[test]
    fn incompatible_layers_are_rejected() {
        let specs = vec![LayerSpec::Linear { out: 3 }];
        assert!(Network::<f64>::build(&[1, 4, 4], &specs, 0).is_err());
        let specs = vec![LayerSpec::Flatten, LayerSpec::Linear { out: 3 }];
        let net = Network::<f64>::build(&[1, 4, 4], &specs, 0).unwrap();
        let bad = Tensor::zeros(vec![2, 1, 5, 4]);
        assert!(matches!(net.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let mut net =
            Network::<f64>::build(&[1, 8, 8], &Network::<f64>::toy_cnn_spec(10), 3).unwrap();
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(
            vec![2, 1, 8, 8],
            (0..128).map(|i| i as f64 / 128.0).collect(),
        )
        .unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 10]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let specs = vec![LayerSpec::Linear { out: 2 }];
        let mut net = Network::<f64>::build(&[3], &specs, 0).unwrap();
        {
            let mut ps = net.params_mut();
            ps[0]
                .data_mut()
                .copy_from_slice(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
            ps[1].data_mut().copy_from_slice(&[0.25, -0.5]);
        }
        let x = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = net.forward(&x).unwrap();
        let expect = [0.1 + 0.4 + 0.9 + 0.25, -0.1 + 0.1 - 0.5];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

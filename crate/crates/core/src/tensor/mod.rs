//! Minimal reverse-mode neural network core: dense tensors, conv/linear/pool
//! layers with hand-written local derivatives, losses and SGD training.

mod checkpoint;
mod data;
mod layers;
mod loss;
mod network;
mod train;

pub use checkpoint::{load_network, save_network, NETWORK_FORMAT_VERSION};
pub use data::{
    read_idx, read_idx_dataset, synthetic_digits, write_idx, write_idx_dataset, Dataset, IdxArray,
    SyntheticDigits,
};
pub use layers::{Conv2d, Layer, LayerSpec, Linear};
pub use loss::{mse_loss, softmax_cross_entropy};
pub use network::{Backward, Digital, ForwardCache, MatmulExecutor, Network};
pub use train::{
    evaluate_accuracy, loss_and_input_grad, train_classifier, train_regressor, EpochStats,
    TrainConfig, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    #[serde(skip, default = "no_grad")]
    pub grad: Option<Vec<T>>,
}

fn no_grad<T>() -> Option<Vec<T>> {
    None
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let k = self.sample_len();
        &self.data[n * k..(n + 1) * k]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Stacks equally shaped samples along a new leading axis.
    pub fn stack(samples: &[&[T]], sample_shape: &[usize]) -> Result<Self> {
        let k: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(k * samples.len());
        for s in samples {
            if s.len() != k {
                return Err(Error::shape(format!(
                    "sample has {} values, expected {k}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(sample_shape);
        Tensor::new(shape, data)
    }

    /// Converts element type; gradients are dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
            grad: None,
        }
    }

    /// Row index of the largest entry in each sample.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let k = self.sample_len();
        self.data
            .chunks(k.max(1))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

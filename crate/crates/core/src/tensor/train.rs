use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::data::Dataset;
use super::loss::{mse_loss, softmax_cross_entropy};
use super::network::{Digital, Network};
use super::Tensor;

/// Mini-batch SGD with momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.05,
            momentum: 0.9,
            batch: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Held-out metric (accuracy for classifiers, loss for regressors), if a
    /// validation set was given.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// One SGD step. Gradients are left in each parameter's `grad` buffer.
fn apply_step<T: Scalar>(
    net: &mut Network<T>,
    grads: Vec<Vec<T>>,
    velocity: &mut [Vec<T>],
    cfg: &TrainConfig,
) {
    let lr = T::of(cfg.lr);
    let mu = T::of(cfg.momentum);
    for ((p, g), v) in net
        .params_mut()
        .into_iter()
        .zip(grads)
        .zip(velocity.iter_mut())
    {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(&g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi;
            *w = *w - lr * *vi;
        }
        p.grad = Some(g);
    }
}

fn run_epochs<T: Scalar>(
    net: &mut Network<T>,
    n: usize,
    cfg: &TrainConfig,
    mut batch_loss: impl FnMut(&Network<T>, &[usize]) -> Result<(T, Vec<Vec<T>>)>,
    mut validate: impl FnMut(&Network<T>) -> Result<Option<f64>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Vec<T>> = net
        .params()
        .iter()
        .map(|p| vec![T::zero(); p.len()])
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let (loss, grads) = batch_loss(net, chunk)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Training { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            apply_step(net, grads, &mut velocity, cfg);
        }
        report.epochs.push(EpochStats {
            epoch,
            loss: total / n as f64,
            validation: validate(net)?,
        });
    }
    Ok(report)
}

/// Trains with softmax cross-entropy. Zero epochs leave `net` untouched.
pub fn train_classifier<T: Scalar>(
    net: &mut Network<T>,
    train: &Dataset<T>,
    valid: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_epochs(
        net,
        train.len(),
        cfg,
        |net, idx| {
            let (x, y) = train.batch(idx);
            let (out, cache) = net.forward_with(&x, &Digital, true)?;
            let (loss, g) = softmax_cross_entropy(&out, &y)?;
            let back = net.backward(&cache.expect("recorded"), &g, true)?;
            Ok((loss, back.params.expect("requested")))
        },
        |net| match valid {
            Some(v) => evaluate_accuracy(|x| net.forward(x), v, 256).map(Some),
            None => Ok(None),
        },
    )
}

/// Trains towards real-valued targets `[n, ...]` with mean squared error.
pub fn train_regressor<T: Scalar>(
    net: &mut Network<T>,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if inputs.batch() != targets.batch() {
        return Err(Error::shape(format!(
            "{} inputs but {} targets",
            inputs.batch(),
            targets.batch()
        )));
    }
    let gather = |t: &Tensor<T>, idx: &[usize]| {
        let rows: Vec<&[T]> = idx.iter().map(|&i| t.sample(i)).collect();
        Tensor::stack(&rows, &t.shape()[1..])
    };
    run_epochs(
        net,
        inputs.batch(),
        cfg,
        |net, idx| {
            let x = gather(inputs, idx)?;
            let y = gather(targets, idx)?;
            let (out, cache) = net.forward_with(&x, &Digital, true)?;
            let (loss, g) = mse_loss(&out, &y)?;
            let back = net.backward(&cache.expect("recorded"), &g, true)?;
            Ok((loss, back.params.expect("requested")))
        },
        |_| Ok(None),
    )
}

/// Top-1 accuracy of any logits function, evaluated in batches.
pub fn evaluate_accuracy<T: Scalar>(
    mut logits: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
    dataset: &Dataset<T>,
    batch: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset is undefined"));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = dataset.batch(chunk);
        let pred = logits(&x)?.argmax_rows();
        correct += pred.iter().zip(&y).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mean cross-entropy loss of `net` on `(x, y)` and its gradient w.r.t. `x`.
pub fn loss_and_input_grad<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (out, cache) = net.forward_with(x, &Digital, true)?;
    let (loss, g) = softmax_cross_entropy(&out, y)?;
    let back = net.backward(&cache.expect("recorded"), &g, false)?;
    Ok((loss, back.input))
}

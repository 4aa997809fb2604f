use crate::error::{Error, Result};
use crate::tensor::{softmax_cross_entropy, train_regressor, Digital, LayerSpec, Network, Tensor, TrainConfig};

use super::pgd::GradientSource;
use super::LogitsExecutor;

/// Probe images paired with the logits an executor returned for them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub inputs: Tensor<f64>,
    pub logits: Tensor<f64>,
}

/// Queries `exec` on every probe image, in order.
pub fn build_synthetic_dataset<E: LogitsExecutor + ?Sized>(exec: &E, probe: &Tensor<f64>) -> Result<SyntheticDataset> {
    if probe.batch() == 0 {
        return Err(Error::invalid("probe set is empty"));
    }
    let mut rows = Vec::with_capacity(probe.batch());
    for start in (0..probe.batch()).step_by(256) {
        let idx: Vec<&[f64]> = (start..(start + 256).min(probe.batch())).map(|i| probe.sample(i)).collect();
        rows.push(exec.logits(&Tensor::stack(&idx, &probe.shape()[1..])?)?);
    }
    let k = rows[0].sample_len();
    let data: Vec<f64> = rows.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(SyntheticDataset {
        inputs: probe.clone(),
        logits: Tensor::new(vec![probe.batch(), k], data)?,
    })
}

/// Surrogate classifiers whose logits are averaged uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Network<f64>>,
}

/// Three CNNs of increasing width and depth; the largest has a residual block.
pub fn default_ensemble_specs(classes: usize) -> Vec<Vec<LayerSpec>> {
    let conv = |out| LayerSpec::Conv { out, kernel: 3, stride: 1, padding: 1 };
    vec![
        vec![
            conv(6),
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            conv(12),
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { out: classes },
        ],
        Network::<f64>::toy_cnn_spec(classes),
        vec![
            conv(12),
            LayerSpec::Relu,
            LayerSpec::Residual { body: vec![conv(12), LayerSpec::Relu, conv(12)] },
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            conv(24),
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { out: 128 },
            LayerSpec::Relu,
            LayerSpec::Linear { out: classes },
        ],
    ]
}

/// Trains one member per architecture to regress the recorded logits (MSE).
/// Member `i` is initialized and shuffled with `seed + i`.
pub fn train_surrogate_ensemble(
    data: &SyntheticDataset,
    archs: &[Vec<LayerSpec>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Ensemble> {
    if archs.is_empty() {
        return Err(Error::invalid("ensemble needs at least one architecture"));
    }
    let members = archs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let s = seed.wrapping_add(i as u64);
            let mut net = Network::build(&data.inputs.shape()[1..], spec, s)?;
            train_regressor(&mut net, &data.inputs, &data.logits, &TrainConfig { seed: s, ..*cfg })?;
            Ok(net)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

impl LogitsExecutor for Ensemble {
    fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut sum: Option<Tensor<f64>> = None;
        for m in &self.members {
            let z = m.forward(x)?;
            sum = Some(match sum {
                None => z,
                Some(mut s) => {
                    s.data_mut().iter_mut().zip(z.data()).for_each(|(a, b)| *a += b);
                    s
                }
            });
        }
        let mut s = sum.ok_or_else(|| Error::invalid("empty ensemble"))?;
        let inv = 1.0 / self.members.len() as f64;
        s.data_mut().iter_mut().for_each(|v| *v *= inv);
        Ok(s)
    }
}

/// Gradient of the cross-entropy of the averaged member logits.
pub fn ensemble_gradient(ens: &Ensemble, x: &Tensor<f64>, y: &[usize]) -> Result<Tensor<f64>> {
    let mut caches = Vec::with_capacity(ens.members.len());
    let mut avg: Option<Tensor<f64>> = None;
    for m in &ens.members {
        let (z, cache) = m.forward_with(x, &Digital, true)?;
        caches.push(cache.expect("recorded"));
        avg = Some(match avg {
            None => z,
            Some(mut a) => {
                a.data_mut().iter_mut().zip(z.data()).for_each(|(p, q)| *p += q);
                a
            }
        });
    }
    let mut avg = avg.ok_or_else(|| Error::invalid("empty ensemble"))?;
    let inv = 1.0 / ens.members.len() as f64;
    avg.data_mut().iter_mut().for_each(|v| *v *= inv);
    let (_, mut g) = softmax_cross_entropy(&avg, y)?;
    g.data_mut().iter_mut().for_each(|v| *v *= inv);
    let mut total: Option<Tensor<f64>> = None;
    for (m, cache) in ens.members.iter().zip(&caches) {
        let gx = m.backward(cache, &g, false)?.input;
        total = Some(match total {
            None => gx,
            Some(mut t) => {
                t.data_mut().iter_mut().zip(gx.data()).for_each(|(p, q)| *p += q);
                t
            }
        });
    }
    Ok(total.expect("non-empty"))
}

impl GradientSource for Ensemble {
    fn input_gradient(&self, x: &Tensor<f64>, y: &[usize]) -> Result<Tensor<f64>> {
        ensemble_gradient(self, x, y)
    }
}

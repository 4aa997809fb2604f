use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::SurrogateDataset;
use super::{OutputHead, SurrogateNet};

/// Plain mini-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Fraction of conductance groups held out for validation.
    pub validation_fraction: f64,
    pub head: OutputHead,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 50,
            lr: 1e-3,
            batch: 64,
            seed: 0,
            validation_fraction: 0.1,
            head: OutputHead::Attenuation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mre: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub epochs: Vec<SurrogateEpoch>,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// Rows of `ds` gathered into one batch, with conductance groups deduplicated.
struct Batch {
    v: Array2<f64>,
    ideal: Array2<f64>,
    actual: Array2<f64>,
    /// `[unique groups, rows·cols]`
    g: Array2<f64>,
    local: Vec<usize>,
}

impl Batch {
    fn gather(ds: &SurrogateDataset, idx: &[usize]) -> Self {
        let mut slot = HashMap::new();
        let mut uniq = Vec::new();
        let local = idx
            .iter()
            .map(|&i| {
                *slot.entry(ds.group[i]).or_insert_with(|| {
                    uniq.push(ds.group[i]);
                    uniq.len() - 1
                })
            })
            .collect();
        Self {
            v: ds.v.select(Axis(0), idx),
            ideal: ds.ideal.select(Axis(0), idx),
            actual: ds.actual.select(Axis(0), idx),
            g: ds.conductances.select(Axis(0), &uniq),
            local,
        }
    }
}

struct Grads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl SurrogateNet {
    fn batch_pre(&self, b: &Batch) -> Array2<f64> {
        let (r, c) = (self.rows(), self.cols());
        let gw = b.g.dot(&self.w1.slice(s![.., r..r + r * c]).t());
        let mut pre = self.pre_without_g(b.v.view(), b.ideal.view());
        for (mut row, &l) in pre.axis_iter_mut(Axis(0)).zip(&b.local) {
            row += &gw.row(l);
            row += &self.b1;
        }
        pre
    }

    fn batch_predict(&self, b: &Batch) -> Array2<f64> {
        self.head_output(self.batch_pre(b), b.ideal.view())
    }

    fn loss_and_grads(&self, b: &Batch) -> (f64, Grads) {
        let (r, c) = (self.rows(), self.cols());
        let pre = self.batch_pre(b);
        let hidden = pre.mapv(|x| x.max(0.0));
        let out = hidden.dot(&self.w2.t()) + &self.b2;
        let pred = match self.head {
            OutputHead::Attenuation => &b.ideal * &out.mapv(|a| 1.0 - a),
            OutputHead::Direct => out,
        };
        let diff = pred - &b.actual;
        let count = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / count;
        let dpred = diff * (2.0 / count);
        let dout = match self.head {
            OutputHead::Attenuation => -(&b.ideal * &dpred),
            OutputHead::Direct => dpred,
        };
        let w2 = dout.t().dot(&hidden);
        let b2 = dout.sum_axis(Axis(0));
        let mut dpre = dout.dot(&self.w2);
        dpre.zip_mut_with(&pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        let mut per_group = Array2::<f64>::zeros((b.g.nrows(), self.hidden()));
        for (row, &l) in dpre.axis_iter(Axis(0)).zip(&b.local) {
            let mut dst = per_group.row_mut(l);
            dst += &row;
        }
        let mut w1 = Array2::zeros(self.w1.raw_dim());
        w1.slice_mut(s![.., ..r]).assign(&dpre.t().dot(&b.v));
        w1.slice_mut(s![.., r..r + r * c]).assign(&per_group.t().dot(&b.g));
        w1.slice_mut(s![.., r + r * c..]).assign(&dpre.t().dot(&b.ideal));
        let b1 = dpre.sum_axis(Axis(0));
        (loss, Grads { w1, b1, w2, b2 })
    }

    fn apply(&mut self, g: &Grads, lr: f64) {
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }
}

/// Mean relative error of predicted against simulated currents, skipping
/// entries whose simulated magnitude is below 1e-3 of the set's maximum.
pub(crate) fn mean_relative_error(pred: ArrayView2<'_, f64>, actual: ArrayView2<'_, f64>) -> f64 {
    let max = actual.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let threshold = 1e-3 * max;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, a) in pred.iter().zip(actual.iter()) {
        if a.abs() > threshold {
            sum += ((p - a) / a).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn evaluate(net: &SurrogateNet, ds: &SurrogateDataset, idx: &[usize]) -> f64 {
    let mut pred = Array2::zeros((idx.len(), net.cols()));
    let mut actual = Array2::zeros((idx.len(), net.cols()));
    for (k, chunk) in idx.chunks(512).enumerate() {
        let b = Batch::gather(ds, chunk);
        let p = net.batch_predict(&b);
        let rows = s![k * 512..k * 512 + chunk.len(), ..];
        pred.slice_mut(rows).assign(&p);
        actual.slice_mut(rows).assign(&b.actual);
    }
    mean_relative_error(pred.view(), actual.view())
}

/// Fits a surrogate to `ds` by minimizing mean squared error on normalized
/// currents. Validation uses whole held-out conductance groups.
pub fn train_surrogate(ds: &SurrogateDataset, cfg: &SurrogateConfig) -> Result<(SurrogateNet, SurrogateReport)> {
    if ds.is_empty() {
        return Err(Error::invalid("surrogate dataset is empty"));
    }
    if cfg.hidden == 0 {
        return Err(Error::invalid("surrogate hidden width must be positive"));
    }
    if cfg.batch == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::invalid("validation fraction must lie in [0, 1)"));
    }
    let (r, c) = (ds.model.geometry.rows, ds.model.geometry.cols);
    let d = SurrogateNet::input_dim(r, c);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut groups: Vec<usize> = (0..ds.groups()).collect();
    groups.shuffle(&mut rng);
    let held = if ds.groups() < 2 {
        0
    } else {
        ((cfg.validation_fraction * ds.groups() as f64).round() as usize).clamp(1, ds.groups() - 1)
    };
    let mut is_val = vec![false; ds.groups()];
    groups[..held].iter().for_each(|&g| is_val[g] = true);
    let (val_idx, mut train_idx): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_val[ds.group[i]]);
    let val_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx };

    let bound1 = (6.0 / d as f64).sqrt();
    let bound2 = 0.1 / (cfg.hidden as f64).sqrt();
    let w1 = Array2::from_shape_fn((cfg.hidden, d), |_| rng.random_range(-bound1..bound1));
    let w2 = Array2::from_shape_fn((c, cfg.hidden), |_| rng.random_range(-bound2..bound2));
    // output bias starts at the least-squares constant fit of the training set
    let b2 = Array1::from_shape_fn(c, |j| {
        let (mut num, mut den, mut mean) = (0.0, 0.0, 0.0);
        for &i in &train_idx {
            let (id, ac) = (ds.ideal[[i, j]], ds.actual[[i, j]]);
            num += id * (id - ac);
            den += id * id;
            mean += ac;
        }
        match cfg.head {
            OutputHead::Attenuation if den > 0.0 => num / den,
            OutputHead::Attenuation => 0.0,
            OutputHead::Direct => mean / train_idx.len() as f64,
        }
    });
    let mut net = SurrogateNet {
        model: ds.model.clone(),
        head: cfg.head,
        w1,
        b1: Array1::zeros(cfg.hidden),
        w2,
        b2,
        validation_mre: f64::NAN,
    };

    let mut report = SurrogateReport {
        epochs: Vec::new(),
        train_samples: train_idx.len(),
        validation_samples: val_idx.len(),
    };
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch) {
            let b = Batch::gather(ds, chunk);
            let (loss, grads) = net.loss_and_grads(&b);
            if !loss.is_finite() {
                return Err(Error::Training { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            net.apply(&grads, cfg.lr);
        }
        report.epochs.push(SurrogateEpoch {
            epoch,
            train_loss: total / train_idx.len() as f64,
            validation_mre: evaluate(&net, ds, &val_idx),
        });
    }
    net.validation_mre = evaluate(&net, ds, &val_idx);
    Ok((net, report))
}

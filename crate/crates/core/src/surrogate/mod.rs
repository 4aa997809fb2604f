//! Learned stand-in for the circuit solver: a two-layer rectifier network
//! mapping crossbar inputs and conductances to column currents.

mod dataset;
mod train;

pub use dataset::{generate_dataset, DatasetOptions, SurrogateDataset};
pub use train::{train_surrogate, SurrogateConfig, SurrogateEpoch, SurrogateReport};

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::circuit::{ConductanceMatrix, CrossbarModel};
use crate::error::{Error, Result};

pub const SURROGATE_FORMAT_VERSION: u32 = 1;

/// How the network output becomes a current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    /// `I = I_ideal ⊙ (1 − out)`: the net predicts the per-column attenuation.
    #[default]
    Attenuation,
    /// `I = out · I_norm`
    Direct,
}

/// Trained surrogate for one crossbar model.
///
/// Input features are `[v / v_max, g · r_on, I_ideal / I_norm]`; the ideal
/// currents are an exact function of the first two and are supplied so the
/// net does not have to learn the products.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateNet {
    pub model: CrossbarModel<f64>,
    pub head: OutputHead,
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array2<f64>,
    pub(crate) b2: Array1<f64>,
    /// Held-out mean relative error recorded at the end of training.
    pub validation_mre: f64,
}

/// Surrogate state for one fixed conductance matrix.
#[derive(Debug, Clone)]
pub struct ProgrammedCrossbar {
    /// `W1_g · g + b1`
    base: Array1<f64>,
    /// `[rows, cols]` normalized conductances.
    g: Array2<f64>,
}

impl SurrogateNet {
    pub fn rows(&self) -> usize {
        self.model.geometry.rows
    }

    pub fn cols(&self) -> usize {
        self.model.geometry.cols
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub(crate) fn input_dim(rows: usize, cols: usize) -> usize {
        rows + rows * cols + cols
    }

    fn i_norm(&self) -> f64 {
        dataset::current_norm(&self.model)
    }

    pub fn program(&self, g: &ConductanceMatrix<f64>) -> Result<ProgrammedCrossbar> {
        let (r, c) = (self.rows(), self.cols());
        if g.rows() != r || g.cols() != c {
            return Err(Error::shape(format!(
                "surrogate for {r}x{c} crossbars given a {}x{} matrix",
                g.rows(),
                g.cols()
            )));
        }
        let g_on = self.model.device.g_on();
        let flat = Array1::from_iter(g.as_slice().iter().map(|x| x / g_on));
        let base = self.w1.slice(s![.., r..r + r * c]).dot(&flat) + &self.b1;
        let g = flat.into_shape_with_order((r, c)).expect("rows·cols entries");
        Ok(ProgrammedCrossbar { base, g })
    }

    /// Currents in ampere for each row of `v` (`[n, rows]`, volts).
    pub fn predict_programmed(&self, p: &ProgrammedCrossbar, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let r = self.rows();
        if v.ncols() != r {
            return Err(Error::shape(format!(
                "surrogate expects {r} inputs per vector, got {}",
                v.ncols()
            )));
        }
        let v_norm = &v / self.model.device.v_max;
        // ideal / I_norm with both factors normalized: (v/vmax)(g r_on) / rows
        let ideal = v_norm.dot(&p.g) / r as f64;
        let pre = self.pre_without_g(v_norm.view(), ideal.view()) + &p.base;
        Ok(self.head_output(pre, ideal.view()) * self.i_norm())
    }

    pub fn predict(&self, v: &[f64], g: &ConductanceMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.program(g)?;
        let v = ArrayView2::from_shape((1, v.len()), v).expect("one row");
        Ok(self.predict_programmed(&p, v)?.into_raw_vec_and_offset().0)
    }

    /// Normalized currents from the hidden pre-activation and normalized ideal currents.
    pub(crate) fn head_output(&self, pre: Array2<f64>, ideal: ArrayView2<'_, f64>) -> Array2<f64> {
        let out = pre.mapv(|x| x.max(0.0)).dot(&self.w2.t()) + &self.b2;
        match self.head {
            OutputHead::Attenuation => &ideal * &out.mapv(|a| 1.0 - a),
            OutputHead::Direct => out,
        }
    }

    /// `v·W1_vᵀ + ideal·W1_iᵀ`, the conductance-independent part of the pre-activation.
    pub(crate) fn pre_without_g(&self, v: ArrayView2<'_, f64>, ideal: ArrayView2<'_, f64>) -> Array2<f64> {
        let (r, c) = (self.rows(), self.cols());
        v.dot(&self.w1.slice(s![.., ..r]).t()) + ideal.dot(&self.w1.slice(s![.., r + r * c..]).t())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SurrogateFile {
            version: SURROGATE_FORMAT_VERSION,
            model: self.model.to_toml(),
            rows: self.rows(),
            cols: self.cols(),
            hidden: self.hidden(),
            head: self.head,
            v_max: self.model.device.v_max,
            g_norm: self.model.device.g_on(),
            i_norm: self.i_norm(),
            validation_mre: self.validation_mre,
            w1: self.w1.iter().copied().collect(),
            b1: self.b1.to_vec(),
            w2: self.w2.iter().copied().collect(),
            b2: self.b2.to_vec(),
        };
        let json = serde_json::to_string(&file).map_err(|e| fmt_err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: SurrogateFile = serde_json::from_str(&text).map_err(|e| fmt_err(e.to_string()))?;
        if f.version != SURROGATE_FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported version {}", f.version)));
        }
        let model = CrossbarModel::from_toml(&f.model)?;
        if (model.geometry.rows, model.geometry.cols) != (f.rows, f.cols) {
            return Err(fmt_err("dimensions disagree with the embedded crossbar model"));
        }
        let d = Self::input_dim(f.rows, f.cols);
        let shape_err = |e: ndarray::ShapeError| fmt_err(e.to_string());
        let net = Self {
            model,
            head: f.head,
            w1: Array2::from_shape_vec((f.hidden, d), f.w1).map_err(shape_err)?,
            b1: Array1::from(f.b1),
            w2: Array2::from_shape_vec((f.cols, f.hidden), f.w2).map_err(shape_err)?,
            b2: Array1::from(f.b2),
            validation_mre: f.validation_mre,
        };
        if net.b1.len() != f.hidden || net.b2.len() != f.cols {
            return Err(fmt_err("bias length mismatch"));
        }
        Ok(net)
    }
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "surrogate checkpoint",
        msg: msg.into(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateFile {
    version: u32,
    /// Full crossbar description, identifying the geometry the net models.
    model: String,
    rows: usize,
    cols: usize,
    hidden: usize,
    head: OutputHead,
    v_max: f64,
    g_norm: f64,
    i_norm: f64,
    validation_mre: f64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

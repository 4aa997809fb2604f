use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};

use crate::circuit::{solve_nonideal, CrossbarModel, LinearMesh};
use crate::error::{Error, Result};
use crate::surrogate::{ProgrammedCrossbar, SurrogateNet};
use crate::tensor::{MatmulExecutor, Network, Tensor};

use super::quant::{quantize_inputs, stream_inputs, QuantConfig};
use super::report::{LayerReport, MappingReport};
use super::tiles::SlicedLayer;

/// Where crossbar matrix-vector products are evaluated.
#[derive(Debug, Clone)]
pub enum ExecBackend {
    /// Exact integer arithmetic on the programmed digits.
    IdealDigital,
    /// Nodal simulation of every crossbar including parasitics.
    CircuitNonIdeal(CrossbarModel<f64>),
    /// Learned approximation of the circuit.
    Surrogate(Arc<SurrogateNet>),
}

impl ExecBackend {
    pub fn name(&self) -> String {
        match self {
            ExecBackend::IdealDigital => "ideal".to_string(),
            ExecBackend::CircuitNonIdeal(m) => format!("circuit:{}", m.name),
            ExecBackend::Surrogate(n) => format!("surrogate:{}", n.model.name),
        }
    }

    fn model(&self) -> Option<&CrossbarModel<f64>> {
        match self {
            ExecBackend::IdealDigital => None,
            ExecBackend::CircuitNonIdeal(m) => Some(m),
            ExecBackend::Surrogate(n) => Some(&n.model),
        }
    }
}

/// Literal evaluation runs every stream × slice × tile product separately.
/// Compiled evaluation folds them into one matrix where that is exact
/// (ideal and linear-device circuit backends) and is literal otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Literal,
    #[default]
    Compiled,
}

#[derive(Debug, Clone)]
enum Kernel {
    IdealDirect,
    IdealSliced,
    /// `[out, k]` weights in integer units.
    Effective(Array2<f64>),
    Meshes(Vec<Option<(LinearMesh<f64>, LinearMesh<f64>)>>),
    Nonlinear(CrossbarModel<f64>),
    Surrogate(Arc<SurrogateNet>, Vec<Option<(ProgrammedCrossbar, ProgrammedCrossbar)>>),
}

/// A sliced layer bound to a backend.
#[derive(Debug, Clone)]
pub struct CompiledLayer {
    pub sliced: SlicedLayer,
    kernel: Kernel,
}

impl CompiledLayer {
    pub fn new(sliced: SlicedLayer, backend: &ExecBackend, mode: ExecMode) -> Result<Self> {
        if let Some(m) = backend.model() {
            let t = &sliced.model;
            if (m.geometry.rows, m.geometry.cols) != (t.geometry.rows, t.geometry.cols) || m.device != t.device {
                return Err(Error::invalid(format!(
                    "backend crossbar {} does not match the {} tiles the layer was mapped to",
                    m.name, t.name
                )));
            }
        }
        let kernel = match (backend, mode) {
            (ExecBackend::IdealDigital, ExecMode::Compiled) => Kernel::IdealDirect,
            (ExecBackend::IdealDigital, ExecMode::Literal) => Kernel::IdealSliced,
            (ExecBackend::CircuitNonIdeal(m), _) if !m.device.is_linear() => Kernel::Nonlinear(m.clone()),
            (ExecBackend::CircuitNonIdeal(m), mode) => {
                let meshes = sliced
                    .pairs
                    .iter()
                    .map(|p| {
                        if p.cancels() {
                            return Ok(None);
                        }
                        Ok(Some((
                            LinearMesh::new(&p.pos, &m.geometry, &m.device)?,
                            LinearMesh::new(&p.neg, &m.geometry, &m.device)?,
                        )))
                    })
                    .collect::<Result<Vec<_>>>()?;
                match mode {
                    ExecMode::Literal => Kernel::Meshes(meshes),
                    ExecMode::Compiled => Kernel::Effective(effective_matrix(&sliced, &meshes)?),
                }
            }
            (ExecBackend::Surrogate(net), _) => {
                let programmed = sliced
                    .pairs
                    .iter()
                    .map(|p| {
                        if p.cancels() {
                            return Ok(None);
                        }
                        Ok(Some((net.program(&p.pos)?, net.program(&p.neg)?)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Kernel::Surrogate(net.clone(), programmed)
            }
        };
        Ok(Self { sliced, kernel })
    }

    /// Integer-domain products before dequantization for `x_int` (`[rows, k]`).
    pub fn integer_outputs(&self, x_int: ArrayView2<'_, u64>) -> Result<Array2<f64>> {
        let l = &self.sliced;
        if x_int.ncols() != l.rows {
            return Err(Error::shape(format!(
                "layer {} expects {} inputs per row, got {}",
                l.layer,
                l.rows,
                x_int.ncols()
            )));
        }
        match &self.kernel {
            Kernel::IdealDirect | Kernel::IdealSliced => {
                Ok(self.exact_integer_outputs(x_int)?.mapv(|v| v as f64))
            }
            Kernel::Effective(w) => Ok(x_int.mapv(|v| v as f64).dot(&w.t())),
            Kernel::Meshes(meshes) => self.literal_real(x_int, |p, volts| {
                let (pos, neg) = meshes[p].as_ref().expect("only active pairs are evaluated");
                let mut out = Array2::zeros((volts.nrows(), l.model.geometry.cols));
                for (r, v) in volts.outer_iter().enumerate() {
                    let v = v.to_vec();
                    let (a, b) = (pos.column_currents(&v)?, neg.column_currents(&v)?);
                    for j in 0..a.len() {
                        out[[r, j]] = a[j] - b[j];
                    }
                }
                Ok(out)
            }),
            Kernel::Nonlinear(m) => self.literal_real(x_int, |p, volts| {
                let pair = &l.pairs[p];
                let mut out = Array2::zeros((volts.nrows(), m.geometry.cols));
                for (r, v) in volts.outer_iter().enumerate() {
                    let v = v.to_vec();
                    let a = solve_nonideal(&v, &pair.pos, &m.geometry, &m.device)?.column_currents;
                    let b = solve_nonideal(&v, &pair.neg, &m.geometry, &m.device)?.column_currents;
                    for j in 0..a.len() {
                        out[[r, j]] = a[j] - b[j];
                    }
                }
                Ok(out)
            }),
            Kernel::Surrogate(net, prog) => self.literal_real(x_int, |p, volts| {
                let (pos, neg) = prog[p].as_ref().expect("only active pairs are evaluated");
                Ok(net.predict_programmed(pos, volts)? - net.predict_programmed(neg, volts)?)
            }),
        }
    }

    /// Exact products for the ideal backend: one integer matrix product in
    /// compiled mode, the full stream × slice × tile expansion in literal mode.
    pub fn exact_integer_outputs(&self, x_int: ArrayView2<'_, u64>) -> Result<Array2<i64>> {
        let l = &self.sliced;
        match &self.kernel {
            Kernel::IdealDirect => {
                let mut out = Array2::zeros((x_int.nrows(), l.cols));
                for (r, x) in x_int.outer_iter().enumerate() {
                    for o in 0..l.cols {
                        let w = &l.weights[o * l.rows..(o + 1) * l.rows];
                        out[[r, o]] = w.iter().zip(x.iter()).map(|(&w, &x)| w * x as i64).sum();
                    }
                }
                Ok(out)
            }
            Kernel::IdealSliced => self.literal_integer(x_int),
            _ => Err(Error::invalid("exact integer outputs need the ideal backend")),
        }
    }

    fn literal_integer(&self, x_int: ArrayView2<'_, u64>) -> Result<Array2<i64>> {
        let l = &self.sliced;
        let qc = &l.qc;
        let (tr, tc) = (l.model.geometry.rows, l.model.geometry.cols);
        let streams: Vec<Vec<Vec<u32>>> = x_int
            .outer_iter()
            .map(|x| stream_inputs(&x.to_vec(), qc))
            .collect::<Result<_>>()?;
        let mut out = Array2::<i64>::zeros((x_int.nrows(), l.cols));
        for pair in &l.pairs {
            let rows_here = tr.min(l.rows - pair.row_offset);
            let cols_here = tc.min(l.cols - pair.col_offset);
            let slice_shift = qc.slice_bits as usize * pair.slice;
            for (r, planes) in streams.iter().enumerate() {
                for (t, plane) in planes.iter().enumerate() {
                    let shift = slice_shift + qc.stream_bits as usize * t;
                    for j in 0..cols_here {
                        let mut acc = 0i64;
                        for i in 0..rows_here {
                            let b = plane[pair.row_offset + i] as i64;
                            let d = pair.pos_digits[i * tc + j] as i64 - pair.neg_digits[i * tc + j] as i64;
                            acc += d * b;
                        }
                        out[[r, pair.col_offset + j]] += acc << shift;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Shared literal loop for real-valued backends. `mvm(pair, volts)` maps
    /// `[m, tile rows]` voltages to `[m, tile cols]` differential currents.
    fn literal_real(
        &self,
        x_int: ArrayView2<'_, u64>,
        mut mvm: impl FnMut(usize, ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    ) -> Result<Array2<f64>> {
        let l = &self.sliced;
        let qc = &l.qc;
        let (tr, tc) = (l.model.geometry.rows, l.model.geometry.cols);
        let n = x_int.nrows();
        let ns = qc.streams();
        let streams: Vec<Vec<Vec<u32>>> = x_int
            .outer_iter()
            .map(|x| stream_inputs(&x.to_vec(), qc))
            .collect::<Result<_>>()?;
        let per_level = l.model.device.v_max / qc.max_stream_value() as f64;
        let unit = integer_unit(l);
        let mut out = Array2::<f64>::zeros((n, l.cols));
        let mut volts = Array2::<f64>::zeros((n * ns, tr));
        let mut volts_for = usize::MAX;
        for (p, pair) in l.pairs.iter().enumerate() {
            if pair.cancels() {
                continue;
            }
            if volts_for != pair.row_offset {
                volts.fill(0.0);
                let rows_here = tr.min(l.rows - pair.row_offset);
                for (r, planes) in streams.iter().enumerate() {
                    for (t, plane) in planes.iter().enumerate() {
                        for i in 0..rows_here {
                            volts[[r * ns + t, i]] = plane[pair.row_offset + i] as f64 * per_level;
                        }
                    }
                }
                volts_for = pair.row_offset;
            }
            let currents = mvm(p, volts.view())?;
            let cols_here = tc.min(l.cols - pair.col_offset);
            let slice_weight = (1u64 << (qc.slice_bits as usize * pair.slice)) as f64;
            for r in 0..n {
                for t in 0..ns {
                    let w = slice_weight * (1u64 << (qc.stream_bits as usize * t)) as f64 * unit;
                    for j in 0..cols_here {
                        out[[r, pair.col_offset + j]] += currents[[r * ns + t, j]] * w;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Converts a differential column current at unit stream level into the
/// integer product it represents: `(L − 1) / (digit step · v_max)`.
fn integer_unit(l: &SlicedLayer) -> f64 {
    let d = &l.model.device;
    let digit_step = (d.g_on() - d.g_off()) / l.qc.max_digit() as f64;
    l.qc.max_stream_value() as f64 / (digit_step * d.v_max)
}

/// Folds streams and slices of a linear circuit into one `[out, k]` matrix.
/// Exact because the mesh is linear in its input voltages.
fn effective_matrix(l: &SlicedLayer, meshes: &[Option<(LinearMesh<f64>, LinearMesh<f64>)>]) -> Result<Array2<f64>> {
    let (tr, tc) = (l.model.geometry.rows, l.model.geometry.cols);
    // per volt → per stream level
    let scale = integer_unit(l) * l.model.device.v_max / l.qc.max_stream_value() as f64;
    let mut w = Array2::zeros((l.cols, l.rows));
    for (pair, mesh) in l.pairs.iter().zip(meshes) {
        let Some((pos, neg)) = mesh else { continue };
        let (mp, mn) = (pos.transfer_matrix()?, neg.transfer_matrix()?);
        let slice_weight = (1u64 << (l.qc.slice_bits as usize * pair.slice)) as f64 * scale;
        for j in 0..tc.min(l.cols - pair.col_offset) {
            for i in 0..tr.min(l.rows - pair.row_offset) {
                w[[pair.col_offset + j, pair.row_offset + i]] += (mp[j * tr + i] - mn[j * tr + i]) * slice_weight;
            }
        }
    }
    Ok(w)
}

/// Quantizes `inputs` (`[rows, k]`, rows grouped by sample with one scale per
/// sample), runs the layer and dequantizes. Bias is not included.
pub fn execute_layer_analog(layer: &CompiledLayer, inputs: ArrayView2<'_, f64>, samples: usize) -> Result<Array2<f64>> {
    let rows = inputs.nrows();
    if samples == 0 || rows % samples != 0 {
        return Err(Error::shape(format!("{rows} rows cannot be split into {samples} samples")));
    }
    let per = rows / samples;
    let k = inputs.ncols();
    let qc = &layer.sliced.qc;
    let mut out = Array2::zeros((rows, layer.sliced.cols));
    for sidx in 0..samples {
        let block = inputs.slice(s![sidx * per..(sidx + 1) * per, ..]);
        let flat: Vec<f64> = block.iter().copied().collect();
        let q = quantize_inputs(&flat, qc)?;
        let pos = Array2::from_shape_vec((per, k), q.pos.clone()).expect("same length");
        let mut y = layer.integer_outputs(pos.view())?;
        if q.has_negative() {
            let neg = Array2::from_shape_vec((per, k), q.neg.clone()).expect("same length");
            y -= &layer.integer_outputs(neg.view())?;
        }
        y *= q.scale * layer.sliced.weight_scale;
        out.slice_mut(s![sidx * per..(sidx + 1) * per, ..]).assign(&y);
    }
    Ok(out)
}

/// Every conv/linear layer of a network mapped onto one backend.
#[derive(Debug, Clone)]
pub struct AnalogNetwork {
    pub backend: String,
    pub qc: QuantConfig,
    pub mode: ExecMode,
    layers: Vec<CompiledLayer>,
}

impl AnalogNetwork {
    /// Maps the weights of `net` onto tiles of `tile` and binds them to `backend`.
    pub fn compile(
        net: &Network<f64>,
        qc: &QuantConfig,
        tile: &CrossbarModel<f64>,
        backend: &ExecBackend,
        mode: ExecMode,
    ) -> Result<Self> {
        let layers = net
            .weight_matrices()
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                let (o, k) = (w.shape()[0], w.shape()[1]);
                let view = ArrayView2::from_shape((o, k), w.data()).expect("2-D weight");
                CompiledLayer::new(SlicedLayer::new(i, view, qc, tile)?, backend, mode)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            backend: backend.name(),
            qc: *qc,
            mode,
            layers,
        })
    }

    pub fn layers(&self) -> &[CompiledLayer] {
        &self.layers
    }

    pub fn report(&self) -> MappingReport {
        let model = self.layers.first().map(|l| &l.sliced.model);
        MappingReport {
            backend: self.backend.clone(),
            tile: model.map(|m| m.name.clone()).unwrap_or_default(),
            tile_rows: model.map_or(0, |m| m.geometry.rows),
            tile_cols: model.map_or(0, |m| m.geometry.cols),
            quant: self.qc,
            layers: self
                .layers
                .iter()
                .map(|c| {
                    let l = &c.sliced;
                    LayerReport {
                        layer: l.layer,
                        rows: l.rows,
                        cols: l.cols,
                        grid_rows: l.grid_rows,
                        grid_cols: l.grid_cols,
                        crossbars: l.crossbars(),
                        active_crossbars: 2 * l.active_pairs(),
                        weight_scale: l.weight_scale,
                    }
                })
                .collect(),
        }
    }
}

impl MatmulExecutor<f64> for AnalogNetwork {
    fn matmul(
        &self,
        layer: usize,
        weight: ArrayView2<'_, f64>,
        inputs: ArrayView2<'_, f64>,
        samples: usize,
    ) -> Result<Array2<f64>> {
        let c = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("no mapped layer {layer}")))?;
        if weight.dim() != (c.sliced.cols, c.sliced.rows) {
            return Err(Error::shape(format!(
                "layer {layer} was mapped as {}x{}, called with {:?}",
                c.sliced.cols,
                c.sliced.rows,
                weight.dim()
            )));
        }
        execute_layer_analog(c, inputs, samples)
    }
}

/// A digital network paired with its crossbar implementation.
#[derive(Debug, Clone)]
pub struct AnalogClassifier {
    pub net: Network<f64>,
    pub hardware: AnalogNetwork,
}

impl AnalogClassifier {
    pub fn new(net: Network<f64>, qc: &QuantConfig, tile: &CrossbarModel<f64>, backend: &ExecBackend) -> Result<Self> {
        let hardware = AnalogNetwork::compile(&net, qc, tile, backend, ExecMode::Compiled)?;
        Ok(Self { net, hardware })
    }

    pub fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.net.forward_with(x, &self.hardware, false)?.0)
    }
}

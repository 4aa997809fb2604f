use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{ideal_mvm, solve_nonideal, ConductanceMatrix, CrossbarModel, LinearMesh};
use crate::error::{Error, Result};

/// Sampling plan for surrogate training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    pub samples: usize,
    /// Input vectors drawn per random conductance matrix.
    pub inputs_per_conductance: usize,
    /// Voltage levels per input line (2 = on/off streams).
    pub stream_levels: usize,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            samples: 20_000,
            inputs_per_conductance: 50,
            stream_levels: 2,
            seed: 0,
        }
    }
}

/// Normalized `(v, g) -> I` samples for one crossbar model.
///
/// Voltages are divided by `v_max`, conductances by `1/r_on` and currents by
/// the largest possible ideal column current `rows · v_max / r_on`. Samples
/// drawn with the same conductance matrix share a `group`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateDataset {
    pub model: CrossbarModel<f64>,
    /// `[groups, rows·cols]`, row-major per matrix.
    pub conductances: Array2<f64>,
    pub group: Vec<usize>,
    /// `[n, rows]`
    pub v: Array2<f64>,
    /// `[n, cols]`
    pub ideal: Array2<f64>,
    /// `[n, cols]`, circuit-simulated.
    pub actual: Array2<f64>,
}

/// Scale factors shared by a dataset and the nets trained on it.
pub(crate) fn current_norm(model: &CrossbarModel<f64>) -> f64 {
    model.geometry.rows as f64 * model.device.v_max * model.device.g_on()
}

impl SurrogateDataset {
    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    pub fn groups(&self) -> usize {
        self.conductances.nrows()
    }

    pub fn conductance(&self, group: usize) -> ArrayView1<'_, f64> {
        self.conductances.row(group)
    }
}

/// Simulates `opts.samples` operating points of `model`.
///
/// Linear devices reuse one factored mesh (via its transfer matrix) for all
/// inputs sharing a conductance matrix; nonlinear devices are solved per point.
pub fn generate_dataset(model: &CrossbarModel<f64>, opts: &DatasetOptions) -> Result<SurrogateDataset> {
    model.validate()?;
    if opts.samples == 0 {
        return Err(Error::invalid("surrogate dataset needs at least one sample"));
    }
    if opts.inputs_per_conductance == 0 || opts.stream_levels < 2 {
        return Err(Error::invalid(
            "need at least one input per conductance matrix and two stream levels",
        ));
    }
    let (rows, cols) = (model.geometry.rows, model.geometry.cols);
    let dev = &model.device;
    let i_norm = current_norm(model);
    let groups = opts.samples.div_ceil(opts.inputs_per_conductance);
    let top = (opts.stream_levels - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut conductances = Array2::zeros((groups, rows * cols));
    let mut group = Vec::with_capacity(opts.samples);
    let mut v_all = Array2::zeros((opts.samples, rows));
    let mut ideal_all = Array2::zeros((opts.samples, cols));
    let mut actual_all = Array2::zeros((opts.samples, cols));

    let mut n = 0;
    for gi in 0..groups {
        let levels: Vec<usize> = (0..rows * cols).map(|_| rng.random_range(0..dev.levels)).collect();
        let g = ConductanceMatrix::from_levels(dev, rows, cols, &levels)?;
        for (dst, &x) in conductances.row_mut(gi).iter_mut().zip(g.as_slice()) {
            *dst = x / dev.g_on();
        }
        let transfer = if dev.is_linear() {
            Some(LinearMesh::new(&g, &model.geometry, dev)?.transfer_matrix()?)
        } else {
            None
        };
        let count = opts.inputs_per_conductance.min(opts.samples - n);
        for _ in 0..count {
            let v: Vec<f64> = (0..rows)
                .map(|_| rng.random_range(0..opts.stream_levels) as f64 / top * dev.v_max)
                .collect();
            let ideal = ideal_mvm(&v, &g)?;
            let actual = match &transfer {
                Some(m) => m
                    .chunks(rows)
                    .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
                    .collect(),
                None => solve_nonideal(&v, &g, &model.geometry, dev)?.column_currents,
            };
            for i in 0..rows {
                v_all[[n, i]] = v[i] / dev.v_max;
            }
            for j in 0..cols {
                ideal_all[[n, j]] = ideal[j] / i_norm;
                actual_all[[n, j]] = actual[j] / i_norm;
            }
            group.push(gi);
            n += 1;
        }
    }
    Ok(SurrogateDataset {
        model: model.clone(),
        conductances,
        group,
        v: v_all,
        ideal: ideal_all,
        actual: actual_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CrossbarModel<f64> {
        let mut m = CrossbarModel::preset("32x32_100k").unwrap();
        m.geometry.rows = 8;
        m.geometry.cols = 6;
        m
    }

    #[test]
    fn zero_samples_is_an_error() {
        let opts = DatasetOptions { samples: 0, ..Default::default() };
        assert!(generate_dataset(&small(), &opts).is_err());
    }

    #[test]
    fn ideal_geometry_targets_equal_ideal_mvm() {
        let m = small().without_parasitics();
        let ds = generate_dataset(&m, &DatasetOptions { samples: 30, inputs_per_conductance: 7, ..Default::default() }).unwrap();
        assert_eq!(ds.groups(), 5);
        for (a, b) in ds.actual.iter().zip(ds.ideal.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn generation_is_seeded_and_parasitics_reduce_current() {
        let opts = DatasetOptions { samples: 40, inputs_per_conductance: 10, seed: 3, ..Default::default() };
        let a = generate_dataset(&small(), &opts).unwrap();
        let b = generate_dataset(&small(), &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.actual.iter().zip(a.ideal.iter()).all(|(x, y)| *x <= *y + 1e-15));
        assert!(a.actual.sum() < a.ideal.sum());
        assert_eq!(&a.group[..12], &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1]);
    }
}

//! Non-ideality factor and the r_wire calibration that targets it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ideal_mvm;
use super::model::{ConductanceMatrix, CrossbarGeometry, CrossbarModel};
use super::nodal::solve_nonideal;

/// Elements with `|ideal| <= NF_RELATIVE_THRESHOLD · max|ideal|` are left out of NF.
pub const NF_RELATIVE_THRESHOLD: f64 = 1e-3;

/// Mean of `(ideal - nonideal) / ideal` over every element with `|ideal| > threshold`.
pub fn nonideality_factor<T: Scalar>(pairs: &[(Vec<T>, Vec<T>)], threshold: T) -> Result<T> {
    if threshold < T::zero() {
        return Err(Error::invalid("NF threshold must be >= 0"));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (ideal, nonideal) in pairs {
        if ideal.len() != nonideal.len() {
            return Err(Error::shape(format!(
                "ideal output has {} entries, non-ideal output has {}",
                ideal.len(),
                nonideal.len()
            )));
        }
        for (&a, &b) in ideal.iter().zip(nonideal) {
            if a.abs() > threshold {
                sum = sum + (a - b) / a;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::UndefinedNf {
            threshold: threshold.as_f64(),
        });
    }
    Ok(sum / T::of_usize(count))
}

/// Batch threshold `NF_RELATIVE_THRESHOLD · max|ideal|`.
pub fn nf_threshold<T: Scalar>(pairs: &[(Vec<T>, Vec<T>)]) -> T {
    let max = pairs
        .iter()
        .flat_map(|(ideal, _)| ideal.iter())
        .fold(T::zero(), |m, &x| m.max(x.abs()));
    max * T::of(NF_RELATIVE_THRESHOLD)
}

/// One random crossbar operating point.
#[derive(Debug, Clone)]
pub struct NfSample<T> {
    pub v: Vec<T>,
    pub g: ConductanceMatrix<T>,
}

/// Inputs uniform over the `stream_levels` voltage levels in `[0, v_max]`,
/// conductances uniform over the device level grid.
pub fn sample_inputs<T: Scalar>(
    model: &CrossbarModel<T>,
    n: usize,
    stream_levels: usize,
    seed: u64,
) -> Vec<NfSample<T>> {
    assert!(stream_levels >= 2);
    let (rows, cols) = (model.geometry.rows, model.geometry.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = T::of_usize(stream_levels - 1);
    (0..n)
        .map(|_| {
            let v = (0..rows)
                .map(|_| T::of_usize(rng.random_range(0..stream_levels)) / top * model.device.v_max)
                .collect();
            let levels: Vec<usize> = (0..rows * cols)
                .map(|_| rng.random_range(0..model.device.levels))
                .collect();
            let g = ConductanceMatrix::from_levels(&model.device, rows, cols, &levels)
                .expect("levels drawn in range");
            NfSample { v, g }
        })
        .collect()
}

/// NF of `model` over the given operating points.
pub fn measure_nf<T: Scalar>(model: &CrossbarModel<T>, samples: &[NfSample<T>]) -> Result<T> {
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let ideal = ideal_mvm(&s.v, &s.g)?;
        let sol = solve_nonideal(&s.v, &s.g, &model.geometry, &model.device)?;
        pairs.push((ideal, sol.column_currents));
    }
    let threshold = nf_threshold(&pairs);
    nonideality_factor(&pairs, threshold)
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub samples: usize,
    /// Accepted |NF - target|.
    pub tolerance: f64,
    pub stream_levels: usize,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            tolerance: 0.01,
            stream_levels: 2,
            seed: 0,
            max_steps: 60,
        }
    }
}

/// Picks `r_wire` so that `model` (size, device, r_source, r_sink held fixed)
/// reaches `target_nf`, by bisection over a fixed sample set.
pub fn calibrate_geometry<T: Scalar>(
    target_nf: f64,
    model: &CrossbarModel<T>,
    opts: &CalibrationOptions,
) -> Result<CrossbarGeometry<T>> {
    if !(0.0..0.5).contains(&target_nf) {
        return Err(Error::invalid(format!(
            "target NF must lie in [0, 0.5), got {target_nf}"
        )));
    }
    model.validate()?;
    let samples = sample_inputs(model, opts.samples, opts.stream_levels, opts.seed);
    let nf_at = |r_wire: f64| -> Result<f64> {
        let mut m = model.clone();
        m.geometry.r_wire = T::of(r_wire);
        Ok(measure_nf(&m, &samples)?.as_f64())
    };
    let with_wire = |r_wire: f64| CrossbarGeometry {
        r_wire: T::of(r_wire),
        ..model.geometry
    };

    let nf_lo = nf_at(0.0)?;
    if (nf_lo - target_nf).abs() <= opts.tolerance {
        return Ok(with_wire(0.0));
    }
    if nf_lo > target_nf {
        return Err(Error::Calibration {
            target: target_nf,
            low: nf_lo,
            high: 1.0,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut nf_hi = nf_at(hi)?;
    let mut doublings = 0;
    while nf_hi < target_nf {
        if doublings >= 40 {
            return Err(Error::Calibration {
                target: target_nf,
                low: nf_lo,
                high: nf_hi,
            });
        }
        lo = hi;
        hi *= 2.0;
        nf_hi = nf_at(hi)?;
        doublings += 1;
    }
    if (nf_hi - target_nf).abs() <= opts.tolerance {
        return Ok(with_wire(hi));
    }
    for _ in 0..opts.max_steps {
        let mid = 0.5 * (lo + hi);
        let nf = nf_at(mid)?;
        if (nf - target_nf).abs() <= opts.tolerance {
            return Ok(with_wire(mid));
        }
        if nf < target_nf {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(with_wire(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_outputs_have_zero_nf() {
        let pairs = vec![(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0])];
        assert_eq!(nonideality_factor(&pairs, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn nf_from_definition() {
        let pairs = vec![(vec![1.0, 2.0], vec![0.9, 1.6])];
        let nf: f64 = nonideality_factor(&pairs, 0.0).unwrap();
        assert!((nf - 0.15).abs() < 1e-15);
    }

    #[test]
    fn tiny_ideal_outputs_are_excluded() {
        let pairs = vec![(vec![1.0, 1e-9], vec![0.9, 0.0])];
        let t = nf_threshold(&pairs);
        assert!((nonideality_factor(&pairs, t).unwrap() - 0.1f64).abs() < 1e-15);
        assert!(matches!(
            nonideality_factor(&[(vec![0.0], vec![0.0])], 0.0),
            Err(Error::UndefinedNf { .. })
        ));
        assert!(nonideality_factor(&[(vec![1.0], vec![1.0, 2.0])], 0.0).is_err());
    }

    #[test]
    fn zero_target_without_parasitics_keeps_zero_wire() {
        let mut m = CrossbarModel::<f64>::preset("32x32_100k").unwrap();
        m.geometry.r_source = 0.0;
        m.geometry.r_sink = 0.0;
        let opts = CalibrationOptions {
            samples: 5,
            ..Default::default()
        };
        let geo = calibrate_geometry(0.0, &m, &opts).unwrap();
        assert_eq!(geo.r_wire, 0.0);
    }

    #[test]
    fn unreachable_target_reports_range() {
        let m = CrossbarModel::<f64>::preset("32x32_100k").unwrap();
        let opts = CalibrationOptions {
            samples: 5,
            ..Default::default()
        };
        match calibrate_geometry(0.0, &m, &opts) {
            Err(Error::Calibration { low, .. }) => assert!(low > 0.01),
            other => panic!("expected calibration error, got {other:?}"),
        }
        assert!(calibrate_geometry(0.7, &m, &opts).is_err());
    }
}

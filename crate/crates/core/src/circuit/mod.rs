//! First-principles model of a single NVM crossbar tile.

mod banded;
mod model;
mod nf;
mod nodal;

pub use banded::{BandedCholesky, BandedSymmetric};
pub use model::{
    ConductanceMatrix, CrossbarGeometry, CrossbarModel, DeviceModel, Nonlinearity, PRESET_NAMES,
    PRESET_R_SINK, PRESET_R_SOURCE,
};
pub use nf::{
    calibrate_geometry, measure_nf, nf_threshold, nonideality_factor, sample_inputs,
    CalibrationOptions, NfSample, NF_RELATIVE_THRESHOLD,
};
pub use nodal::{
    build_nodal_system, solve_nonideal, LinearMesh, NodalSolution, NodalSystem,
    NONLINEAR_MAX_ITERATIONS, NONLINEAR_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ideal crossbar dot product `I_j = Σ_i v_i·G_ij`.
pub fn ideal_mvm<T: Scalar>(v: &[T], g: &ConductanceMatrix<T>) -> Result<Vec<T>> {
    if v.len() != g.rows() {
        return Err(Error::shape(format!(
            "voltage vector has {} entries, crossbar has {} rows",
            v.len(),
            g.rows()
        )));
    }
    if let Some(bad) = v.iter().find(|&&x| !(x >= T::zero())) {
        return Err(Error::invalid(format!(
            "input voltage {bad} is negative; streams are unsigned"
        )));
    }
    let cols = g.cols();
    let mut out = vec![T::zero(); cols];
    for (i, &vi) in v.iter().enumerate() {
        if vi == T::zero() {
            continue;
        }
        let row = &g.as_slice()[i * cols..(i + 1) * cols];
        for (o, &gij) in out.iter_mut().zip(row) {
            *o = *o + vi * gij;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_zero_current() {
        let d = DeviceModel::<f64>::linear(100e3, 1e6, 4).unwrap();
        let g = ConductanceMatrix::from_levels(&d, 3, 2, &[3, 2, 1, 0, 3, 3]).unwrap();
        assert_eq!(ideal_mvm(&[0.0; 3], &g).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ohms_law_single_device() {
        let g = ConductanceMatrix::from_raw(1, 1, vec![1.0 / 300_000.0]).unwrap();
        let out = ideal_mvm(&[0.5], &g).unwrap();
        assert!((out[0] - 1.6667e-6f64).abs() < 1e-10);
        assert_eq!(out[0], 0.5 / 300_000.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = ConductanceMatrix::from_raw(2, 1, vec![1e-5, 1e-5]).unwrap();
        assert!(matches!(ideal_mvm(&[0.5], &g), Err(Error::Shape(_))));
        assert!(matches!(
            ideal_mvm(&[0.5, -0.1], &g),
            Err(Error::InvalidArgument(_))
        ));
    }
}

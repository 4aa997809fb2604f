use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit widths of the quantized datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub input_bits: u32,
    pub weight_bits: u32,
    /// Bits carried by one input stream (one crossbar evaluation).
    pub stream_bits: u32,
    /// Bits stored per weight slice (one crossbar).
    pub slice_bits: u32,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            input_bits: 8,
            weight_bits: 8,
            stream_bits: 1,
            slice_bits: 2,
        }
    }
}

impl QuantConfig {
    /// Checks bit widths against each other and against a device with `levels`
    /// conductance states. Digits must land on the level grid, so
    /// `levels − 1` has to be a multiple of the largest digit.
    pub fn validate(&self, levels: usize) -> Result<()> {
        let all = [self.input_bits, self.weight_bits, self.stream_bits, self.slice_bits];
        if all.contains(&0) {
            return Err(Error::invalid("bit widths must be positive"));
        }
        if self.input_bits > 16 || self.weight_bits > 16 {
            return Err(Error::invalid("input and weight widths are limited to 16 bits"));
        }
        if self.input_bits % self.stream_bits != 0 {
            return Err(Error::invalid(format!(
                "input_bits {} is not a multiple of stream_bits {}",
                self.input_bits, self.stream_bits
            )));
        }
        if self.weight_bits % self.slice_bits != 0 {
            return Err(Error::invalid(format!(
                "weight_bits {} is not a multiple of slice_bits {}",
                self.weight_bits, self.slice_bits
            )));
        }
        let digits = 1usize << self.slice_bits;
        if digits > levels {
            return Err(Error::invalid(format!(
                "{digits} slice digits need more than the device's {levels} levels"
            )));
        }
        if (levels - 1) % (digits - 1) != 0 {
            return Err(Error::invalid(format!(
                "{levels} device levels cannot hold {digits} evenly spaced digits"
            )));
        }
        Ok(())
    }

    pub fn streams(&self) -> usize {
        (self.input_bits / self.stream_bits) as usize
    }

    pub fn slices(&self) -> usize {
        (self.weight_bits / self.slice_bits) as usize
    }

    pub fn max_digit(&self) -> u32 {
        (1 << self.slice_bits) - 1
    }

    /// Largest value one input stream carries.
    pub fn max_stream_value(&self) -> u32 {
        (1 << self.stream_bits) - 1
    }

    pub fn max_input(&self) -> u64 {
        (1 << self.input_bits) - 1
    }

    pub fn max_weight(&self) -> i64 {
        (1 << (self.weight_bits - 1)) - 1
    }
}

/// Signed integers and the scale mapping them back to reals.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub values: Vec<i64>,
    pub scale: f64,
}

impl QuantizedWeights {
    pub fn dequantize(&self) -> Vec<f64> {
        self.values.iter().map(|&q| q as f64 * self.scale).collect()
    }
}

/// Symmetric per-tensor quantization to `±(2^(weight_bits−1) − 1)`.
///
/// An all-zero tensor gets scale 1.
pub fn quantize_layer(weights: &[f64], qc: &QuantConfig) -> Result<QuantizedWeights> {
    if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("cannot quantize non-finite weight {bad}")));
    }
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let qmax = qc.max_weight();
    let scale = if max == 0.0 { 1.0 } else { max / qmax as f64 };
    let values = weights
        .iter()
        .map(|&w| ((w / scale).round() as i64).clamp(-qmax, qmax))
        .collect();
    Ok(QuantizedWeights { values, scale })
}

/// Unsigned inputs split into positive and negative parts, `x ≈ (pos − neg)·scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedInputs {
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
    pub scale: f64,
}

impl QuantizedInputs {
    pub fn has_negative(&self) -> bool {
        self.neg.iter().any(|&v| v != 0)
    }
}

/// Quantizes one sample's inputs with scale `max|x| / (2^input_bits − 1)`.
pub fn quantize_inputs(x: &[f64], qc: &QuantConfig) -> Result<QuantizedInputs> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("cannot quantize non-finite input {bad}")));
    }
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let top = qc.max_input();
    let scale = if max == 0.0 { 1.0 } else { max / top as f64 };
    let q = |v: f64| ((v / scale).round() as u64).min(top);
    Ok(QuantizedInputs {
        pos: x.iter().map(|&v| if v > 0.0 { q(v) } else { 0 }).collect(),
        neg: x.iter().map(|&v| if v < 0.0 { q(-v) } else { 0 }).collect(),
        scale,
    })
}

/// Base-`2^slice_bits` digit planes of the weight magnitudes, least
/// significant slice first, with the sign carried by which plane set holds them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSlices {
    /// `pos[s][i]` is digit `s` of `max(w_i, 0)`.
    pub pos: Vec<Vec<u32>>,
    pub neg: Vec<Vec<u32>>,
}

impl WeightSlices {
    /// `Σ_s base^s (pos[s] − neg[s])` per element.
    pub fn reconstruct(&self, slice_bits: u32) -> Vec<i64> {
        let n = self.pos.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                (0..self.pos.len())
                    .map(|s| (self.pos[s][i] as i64 - self.neg[s][i] as i64) << (slice_bits as usize * s))
                    .sum()
            })
            .collect()
    }
}

pub fn slice_weights(values: &[i64], qc: &QuantConfig) -> Result<WeightSlices> {
    let lo = -(1i64 << (qc.weight_bits - 1));
    if let Some(&bad) = values.iter().find(|&&w| w < lo || w > qc.max_weight()) {
        return Err(Error::invalid(format!(
            "weight {bad} outside the {}-bit signed range",
            qc.weight_bits
        )));
    }
    let mask = qc.max_digit() as i64;
    let planes = |sign: i64| -> Vec<Vec<u32>> {
        (0..qc.slices())
            .map(|s| {
                let shift = qc.slice_bits as usize * s;
                values
                    .iter()
                    .map(|&w| ((w * sign).max(0) >> shift & mask) as u32)
                    .collect()
            })
            .collect()
    };
    Ok(WeightSlices {
        pos: planes(1),
        neg: planes(-1),
    })
}

/// Bit planes of unsigned inputs, least significant stream first.
pub fn stream_inputs(values: &[u64], qc: &QuantConfig) -> Result<Vec<Vec<u32>>> {
    if let Some(&bad) = values.iter().find(|&&v| v > qc.max_input()) {
        return Err(Error::invalid(format!(
            "input {bad} exceeds {} bits",
            qc.input_bits
        )));
    }
    let mask = qc.max_stream_value() as u64;
    Ok((0..qc.streams())
        .map(|t| {
            let shift = qc.stream_bits as usize * t;
            values.iter().map(|&v| (v >> shift & mask) as u32).collect()
        })
        .collect())
}

//! Physical description of a crossbar tile: devices, wiring and programmed state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Voltage dependence of a device's current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Nonlinearity<T> {
    Linear,
    /// `I = G·V₀·sinh(β·V/V₀)/sinh(β)` with `V₀ = v_max`.
    ExponentialIv {
        beta: T,
    },
}

/// Programmable resistive memory device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceModel<T> {
    pub r_on: T,
    pub r_off: T,
    pub levels: usize,
    pub nonlinearity: Option<Nonlinearity<T>>,
    /// Full-scale read voltage.
    pub v_max: T,
}

fn default_v_max() -> f64 {
    1.0
}

impl<T: Scalar> DeviceModel<T> {
    pub fn linear(r_on: T, r_off: T, levels: usize) -> Result<Self> {
        let d = Self {
            r_on,
            r_off,
            levels,
            nonlinearity: None,
            v_max: T::one(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_on > T::zero() && self.r_off > self.r_on && self.r_off.is_finite()) {
            return Err(Error::invalid(format!(
                "device requires r_off > r_on > 0 (r_on = {}, r_off = {})",
                self.r_on, self.r_off
            )));
        }
        if self.levels < 2 {
            return Err(Error::invalid(format!(
                "device needs at least 2 levels, got {}",
                self.levels
            )));
        }
        if !(self.v_max > T::zero() && self.v_max.is_finite()) {
            return Err(Error::invalid("v_max must be positive"));
        }
        if let Some(Nonlinearity::ExponentialIv { beta }) = self.nonlinearity {
            if !(beta > T::zero() && beta.is_finite()) {
                return Err(Error::invalid("exponential-iv beta must be positive"));
            }
        }
        Ok(())
    }

    pub fn g_on(&self) -> T {
        self.r_on.recip()
    }

    pub fn g_off(&self) -> T {
        self.r_off.recip()
    }

    /// Conductance spacing between adjacent programmable levels.
    pub fn level_step(&self) -> T {
        (self.g_on() - self.g_off()) / T::of_usize(self.levels - 1)
    }

    pub fn level_conductance(&self, level: usize) -> T {
        debug_assert!(level < self.levels);
        self.g_off() + T::of_usize(level) * self.level_step()
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.nonlinearity, None | Some(Nonlinearity::Linear))
    }

    /// Current through a device programmed to `g` with `v` across it.
    pub fn current(&self, g: T, v: T) -> T {
        v * self.secant_conductance(g, v)
    }

    /// `I(V)/V`, continuous at `V = 0`.
    pub fn secant_conductance(&self, g: T, v: T) -> T {
        match self.nonlinearity {
            None | Some(Nonlinearity::Linear) => g,
            Some(Nonlinearity::ExponentialIv { beta }) => {
                let x = beta * v / self.v_max;
                let ratio = if x.abs() < T::of(1e-6) {
                    // sinh(x)/x series
                    T::one() + x * x / T::of(6.0)
                } else {
                    x.sinh() / x
                };
                g * beta * ratio / beta.sinh()
            }
        }
    }
}

/// Wiring of one crossbar tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossbarGeometry<T> {
    pub rows: usize,
    pub cols: usize,
    pub r_source: T,
    pub r_sink: T,
    pub r_wire: T,
}

impl<T: Scalar> CrossbarGeometry<T> {
    pub fn ideal(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            r_source: T::zero(),
            r_sink: T::zero(),
            r_wire: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid(format!(
                "crossbar must be at least 1x1, got {}x{}",
                self.rows, self.cols
            )));
        }
        for (name, r) in [
            ("r_source", self.r_source),
            ("r_sink", self.r_sink),
            ("r_wire", self.r_wire),
        ] {
            // +inf is an open circuit
            if r.is_nan() || r < T::zero() {
                return Err(Error::invalid(format!("{name} must be >= 0, got {r}")));
            }
        }
        Ok(())
    }

    pub fn has_parasitics(&self) -> bool {
        self.r_source != T::zero() || self.r_sink != T::zero() || self.r_wire != T::zero()
    }
}

fn grid_tolerance<T: Scalar>() -> T {
    T::of(1e-12).max(T::epsilon() * T::of(64.0))
}

/// Programmed device conductances of one tile, row-major `rows × cols`, in siemens.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceMatrix<T> {
    rows: usize,
    cols: usize,
    g: Vec<T>,
}

impl<T: Scalar> ConductanceMatrix<T> {
    /// Validates every entry against the device's range and level grid.
    pub fn new(device: &DeviceModel<T>, rows: usize, cols: usize, g: Vec<T>) -> Result<Self> {
        if g.len() != rows * cols {
            return Err(Error::shape(format!(
                "conductance data has {} entries, expected {rows}x{cols}",
                g.len()
            )));
        }
        let step = device.level_step();
        let tol = grid_tolerance::<T>();
        for (idx, &x) in g.iter().enumerate() {
            let k = (x - device.g_off()) / step;
            let on_grid = (k - k.round()).abs() * step <= tol * device.g_on();
            let in_range = k.round() >= T::zero() && k.round() <= T::of_usize(device.levels - 1);
            if !(on_grid && in_range) {
                return Err(Error::invalid(format!(
                    "conductance {x} at ({}, {}) is not on the device level grid",
                    idx / cols,
                    idx % cols
                )));
            }
        }
        Ok(Self { rows, cols, g })
    }

    pub fn from_levels(
        device: &DeviceModel<T>,
        rows: usize,
        cols: usize,
        levels: &[usize],
    ) -> Result<Self> {
        if levels.len() != rows * cols {
            return Err(Error::shape(format!(
                "level data has {} entries, expected {rows}x{cols}",
                levels.len()
            )));
        }
        if let Some(&bad) = levels.iter().find(|&&k| k >= device.levels) {
            return Err(Error::invalid(format!(
                "level {bad} exceeds device level count {}",
                device.levels
            )));
        }
        Ok(Self {
            rows,
            cols,
            g: levels
                .iter()
                .map(|&k| device.level_conductance(k))
                .collect(),
        })
    }

    /// Every device in the off state.
    pub fn all_off(device: &DeviceModel<T>, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            g: vec![device.g_off(); rows * cols],
        }
    }

    /// Skips grid validation; used for raw circuit experiments.
    pub fn from_raw(rows: usize, cols: usize, g: Vec<T>) -> Result<Self> {
        if g.len() != rows * cols {
            return Err(Error::shape(format!(
                "conductance data has {} entries, expected {rows}x{cols}",
                g.len()
            )));
        }
        Ok(Self { rows, cols, g })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.g[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.g
    }

    /// Nearest programmed level of every device.
    pub fn levels(&self, device: &DeviceModel<T>) -> Vec<usize> {
        let step = device.level_step();
        self.g
            .iter()
            .map(|&x| {
                ((x - device.g_off()) / step)
                    .round()
                    .to_usize()
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// A named tile model: geometry plus device.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarModel<T> {
    pub name: String,
    pub geometry: CrossbarGeometry<T>,
    pub device: DeviceModel<T>,
}

/// Flat on-disk layout of a crossbar model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossbarFile {
    name: String,
    rows: usize,
    cols: usize,
    r_on: f64,
    r_off: f64,
    levels: usize,
    r_source: f64,
    r_sink: f64,
    r_wire: f64,
    #[serde(default = "default_v_max")]
    v_max: f64,
    #[serde(default)]
    nonlinearity: Option<Nonlinearity<f64>>,
}

/// Source/sink resistance shared by the built-in presets, in ohm.
pub const PRESET_R_SOURCE: f64 = 250.0;
pub const PRESET_R_SINK: f64 = 250.0;
pub const PRESET_NAMES: [&str; 3] = ["64x64_300k", "32x32_100k", "64x64_100k"];

impl<T: Scalar> CrossbarModel<T> {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.device.validate()
    }

    /// Built-in model matching one of the named crossbar variants
    /// (`64x64_300k`, `32x32_100k`, `64x64_100k`).
    pub fn preset(name: &str) -> Result<Self> {
        // r_wire values come from calibrating each preset to its own NF
        // (0.07 / 0.14 / 0.26) with the shared source/sink resistances
        let (size, r_on, r_wire) = match name {
            "64x64_300k" => (64, 300e3, 3.0),
            "32x32_100k" => (32, 100e3, 20.0),
            "64x64_100k" => (64, 100e3, 12.0),
            other => {
                return Err(Error::invalid(format!(
                    "unknown crossbar preset `{other}` (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            geometry: CrossbarGeometry {
                rows: size,
                cols: size,
                r_source: T::of(PRESET_R_SOURCE),
                r_sink: T::of(PRESET_R_SINK),
                r_wire: T::of(r_wire),
            },
            device: DeviceModel {
                r_on: T::of(r_on),
                r_off: T::of(10.0 * r_on),
                levels: 4,
                nonlinearity: None,
                v_max: T::one(),
            },
        })
    }

    /// Same device and size with every parasitic resistance set to zero.
    pub fn without_parasitics(&self) -> Self {
        let mut m = self.clone();
        m.geometry = CrossbarGeometry::ideal(self.geometry.rows, self.geometry.cols);
        m.name = format!("{}_ideal", self.name);
        m
    }

    pub fn to_toml(&self) -> String {
        let file = CrossbarFile {
            name: self.name.clone(),
            rows: self.geometry.rows,
            cols: self.geometry.cols,
            r_on: self.device.r_on.as_f64(),
            r_off: self.device.r_off.as_f64(),
            levels: self.device.levels,
            r_source: self.geometry.r_source.as_f64(),
            r_sink: self.geometry.r_sink.as_f64(),
            r_wire: self.geometry.r_wire.as_f64(),
            v_max: self.device.v_max.as_f64(),
            nonlinearity: self.device.nonlinearity.map(|n| match n {
                Nonlinearity::Linear => Nonlinearity::Linear,
                Nonlinearity::ExponentialIv { beta } => Nonlinearity::ExponentialIv {
                    beta: beta.as_f64(),
                },
            }),
        };
        toml::to_string(&file).expect("crossbar description serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: CrossbarFile = toml::from_str(text).map_err(|e| Error::Format {
            what: "crossbar description",
            msg: e.to_string(),
        })?;
        let m = Self {
            name: f.name,
            geometry: CrossbarGeometry {
                rows: f.rows,
                cols: f.cols,
                r_source: T::of(f.r_source),
                r_sink: T::of(f.r_sink),
                r_wire: T::of(f.r_wire),
            },
            device: DeviceModel {
                r_on: T::of(f.r_on),
                r_off: T::of(f.r_off),
                levels: f.levels,
                nonlinearity: f.nonlinearity.map(|n| match n {
                    Nonlinearity::Linear => Nonlinearity::Linear,
                    Nonlinearity::ExponentialIv { beta } => {
                        Nonlinearity::ExponentialIv { beta: T::of(beta) }
                    }
                }),
                v_max: T::of(f.v_max),
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_invariants_are_enforced() {
        assert!(DeviceModel::<f64>::linear(100e3, 1e6, 4).is_ok());
        assert!(DeviceModel::<f64>::linear(1e6, 100e3, 4).is_err());
        assert!(DeviceModel::<f64>::linear(0.0, 100e3, 4).is_err());
        assert!(DeviceModel::<f64>::linear(100e3, 1e6, 1).is_err());
    }

    #[test]
    fn linear_device_obeys_ohms_law() {
        let d = DeviceModel::<f64>::linear(100e3, 1e6, 4).unwrap();
        let g = d.level_conductance(2);
        assert_eq!(d.current(g, 0.37), 0.37 * g);
    }

    #[test]
    fn exponential_device_matches_definition() {
        let mut d = DeviceModel::<f64>::linear(100e3, 1e6, 4).unwrap();
        d.nonlinearity = Some(Nonlinearity::ExponentialIv { beta: 2.0 });
        let g = d.g_on();
        for v in [0.0, 1e-9, 0.1, 0.5, 1.0, -0.3] {
            let expect = g * d.v_max * (2.0 * v / d.v_max).sinh() / 2.0f64.sinh();
            assert!((d.current(g, v) - expect).abs() <= 1e-15 * g.max(expect.abs()));
        }
        // full-scale voltage gives the linear current
        assert!((d.current(g, 1.0) - g).abs() < 1e-18);
    }

    #[test]
    fn conductance_grid_is_checked() {
        let d = DeviceModel::<f64>::linear(100e3, 1e6, 4).unwrap();
        let ok = vec![d.level_conductance(0), d.level_conductance(3)];
        assert!(ConductanceMatrix::new(&d, 1, 2, ok).is_ok());
        let off_grid = vec![d.level_conductance(1) * 1.01, d.g_on()];
        assert!(ConductanceMatrix::new(&d, 1, 2, off_grid).is_err());
        let too_high = vec![d.g_on() * 2.0];
        assert!(ConductanceMatrix::new(&d, 1, 1, too_high).is_err());
        let m = ConductanceMatrix::from_levels(&d, 2, 2, &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.levels(&d), vec![0, 1, 2, 3]);
        assert_eq!(m.get(0, 0), 1.0 / 1e6);
        assert_eq!(m.get(1, 1), 1.0 / 100e3);
    }

    #[test]
    fn presets_and_file_round_trip() {
        for name in PRESET_NAMES {
            let m = CrossbarModel::<f64>::preset(name).unwrap();
            m.validate().unwrap();
            let back = CrossbarModel::<f64>::from_toml(&m.to_toml()).unwrap();
            assert_eq!(back, m);
        }
        assert!(CrossbarModel::<f64>::preset("16x16_1k").is_err());
        let mut m = CrossbarModel::<f64>::preset("32x32_100k").unwrap();
        m.device.nonlinearity = Some(Nonlinearity::ExponentialIv { beta: 2.0 });
        let text = m.to_toml();
        assert!(text.contains("exponential-iv"));
        assert_eq!(CrossbarModel::<f64>::from_toml(&text).unwrap(), m);
    }
}

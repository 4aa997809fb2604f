use serde::{Deserialize, Serialize};

use super::quant::QuantConfig;

/// Per-layer placement summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    /// Matrix rows (layer inputs) and columns (layer outputs).
    pub rows: usize,
    pub cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Crossbars allocated: tiles × slices × 2.
    pub crossbars: usize,
    /// Crossbars in pairs that carry nonzero digits.
    pub active_crossbars: usize,
    pub weight_scale: f64,
}

/// Structured summary of how a network was placed on crossbars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub backend: String,
    pub tile: String,
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub quant: QuantConfig,
    pub layers: Vec<LayerReport>,
}

impl MappingReport {
    pub fn total_crossbars(&self) -> usize {
        self.layers.iter().map(|l| l.crossbars).sum()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report fields are plain data")
    }
}

//! Lowering of conv/linear layers onto crossbars: quantization, weight
//! slicing, input streaming, tiling onto differential crossbar pairs and
//! shift-and-add reconstruction on a chosen backend.

mod exec;
mod quant;
mod report;
mod tiles;

pub use exec::{execute_layer_analog, AnalogClassifier, AnalogNetwork, CompiledLayer, ExecBackend, ExecMode};
pub use quant::{
    quantize_inputs, quantize_layer, slice_weights, stream_inputs, QuantConfig, QuantizedInputs,
    QuantizedWeights, WeightSlices,
};
pub use report::{LayerReport, MappingReport};
pub use tiles::{map_matrix_to_tiles, SlicedLayer, Tile, TileGrid, TilePair};

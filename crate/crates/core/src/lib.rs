//! Simulation of quantized neural networks on non-ideal resistive crossbars and
//! the adversarial attacks used to probe them.
//!
//! The numeric kernels ([`circuit`], [`tensor`]) are generic over [`Scalar`];
//! the aliases below pin them to `f64`, the precision every pipeline stage uses.

pub mod attacks;
pub mod circuit;
pub mod error;
pub mod mapping;
pub mod scalar;
pub mod surrogate;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DeviceModel = circuit::DeviceModel<f64>;
pub type CrossbarGeometry = circuit::CrossbarGeometry<f64>;
pub type CrossbarModel = circuit::CrossbarModel<f64>;
pub type ConductanceMatrix = circuit::ConductanceMatrix<f64>;
pub type NodalSolution = circuit::NodalSolution<f64>;
pub type LinearMesh = circuit::LinearMesh<f64>;
pub type Tensor = tensor::Tensor<f64>;
pub type Network = tensor::Network<f64>;
pub type Dataset = tensor::Dataset<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Network32 = tensor::Network<f32>;

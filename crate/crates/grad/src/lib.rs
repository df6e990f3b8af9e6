//! Minimal CPU autodiff for small convolutional networks.
//!
//! Convolutions run as im2col + GEMM through `matrixmultiply`; everything is
//! single-threaded and bit-deterministic for a fixed sequence of ops.

mod element;
mod error;
mod graph;
pub mod io;
mod kernels;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use element::Element;
pub use error::{GradError, Result};
pub use graph::{Gradients, Graph, ParamGrads, Var};
pub use kernels::{ConvSpec, Padding};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

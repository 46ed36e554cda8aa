//! Three-pathway (Slow, Fast, Regular) 3D convolutional network for early binary
//! classification of time-lapse videos, with the autodiff engine, layers, losses,
//! synthetic data pipeline, training protocol and evaluation harness it needs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod label;
pub mod layers;
pub mod losses;
pub mod model;
pub mod params;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::Label;
pub use model::{LateralWiring, SfrConfig, SfrModel};
pub use graph::{Conv3dOptions, ElementwiseOp, Graph, Operand, PoolKind, PoolWindow, Var};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

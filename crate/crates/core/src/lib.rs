//! Tensor engine, generative-neuron layers, segmentation networks, losses
//! and the training loop.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks); the aliases below name the common instantiations.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod nets;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod schedule;
pub mod selfonn;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::Mode;
pub use params::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Activation, Gradients, PoolKind, Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type CoarseNet32 = nets::CoarseNet<f32>;
pub type CoarseNet64 = nets::CoarseNet<f64>;
pub type BinaryNet32 = nets::BinaryNet<f32>;
pub type BinaryNet64 = nets::BinaryNet<f64>;

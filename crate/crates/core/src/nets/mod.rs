//! Segmentation networks: a dense encoder shared by a nested-skip multiclass
//! decoder and a generative-neuron binary decoder.

mod binary;
mod coarse;
mod encoder;

pub use binary::{BinaryNet, BinaryNetConfig, DecoderKind};
pub use coarse::{CoarseNet, CoarseNetConfig};
pub use encoder::{DenseEncoder, EncoderConfig};

use crate::error::Result;
use crate::layers::Mode;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Common surface of both networks, as used by the training loop.
pub trait SegmentationNet<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    /// Input `[N, 1, H, W]` to probabilities `[N, C, H, W]` (softmax for the
    /// multiclass net, sigmoid with `C = 1` for the binary net).
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var>;
    fn input_size(&self) -> usize;
    fn out_channels(&self) -> usize;
}

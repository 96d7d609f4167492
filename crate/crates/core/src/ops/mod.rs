//! Forward and backward kernels behind the tape operations.

pub(crate) mod conv;
pub(crate) mod norm;
pub(crate) mod pool;
pub(crate) mod upsample;

/// Output extent of a sliding window.
pub fn window_out(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

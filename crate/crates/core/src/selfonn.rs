//! Self-organized operational (generative-neuron) convolution.
//!
//! Every kernel element applies a learned polynomial
//! `w0 + w1*y + w2*y^2 + ... + wQ*y^Q` to its input sample instead of a single
//! multiply. Summing that over the receptive field and input channels gives
//!
//! ```text
//! out = bias + sum_{q=1..Q} conv2d(W_q, s(x)^q)
//! ```
//!
//! where the per-element constants `w0` collapse into one bias per output
//! channel and `s` is `tanh` when `pre_squash` is set (identity otherwise).
//! With `Q = 1` and no squashing the layer is an ordinary convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::init;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfOnnConfig {
    pub q_order: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pre_squash: bool,
}

impl SelfOnnConfig {
    pub fn new(q_order: usize, cin: usize, cout: usize, kernel: usize) -> Self {
        Self { q_order, cin, cout, kernel, stride: 1, padding: kernel / 2, pre_squash: true }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn pre_squash(mut self, on: bool) -> Self {
        self.pre_squash = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.q_order == 0 {
            return Err(invalid("selfonn", "q_order must be >= 1"));
        }
        if self.cin == 0 || self.cout == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(invalid("selfonn", format!("dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SelfOnnConv2d {
    pub config: SelfOnnConfig,
    /// Bank `q-1` multiplies the q-th power of the input.
    pub banks: Vec<ParamId>,
    pub bias: ParamId,
}

impl SelfOnnConv2d {
    /// Register a layer's `Q` banks (`<name>.wq1` .. `<name>.wqQ`) and bias in `store`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, config: SelfOnnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let SelfOnnConfig { q_order, cin, cout, kernel: k, .. } = config;
        let bound = init::selfonn_bound(q_order, cout, cin, k);
        let banks = (1..=q_order)
            .map(|q| store.add(format!("{name}.wq{q}"), init::uniform(&[cout, cin, k, k], bound, rng), true))
            .collect::<Result<Vec<_>>>()?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true)?;
        Ok(Self { config, banks, bias })
    }

    /// A layer in its own store, seeded deterministically.
    pub fn standalone<T: Scalar>(config: SelfOnnConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Self::new(&mut store, "selfonn", config, &mut rng)?;
        Ok((layer, store))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let banks: Vec<Var> = self.banks.iter().map(|&b| tape.param(store, b)).collect();
        let bias = tape.param(store, self.bias);
        selfonn_conv2d(tape, x, &banks, bias, self.config.stride, self.config.padding, self.config.pre_squash)
    }
}

/// Functional form over tape variables.
///
/// The Q power maps are stacked along the channel axis and convolved once
/// against the banks stacked the same way; by linearity of the channel sum
/// this is exactly `sum_q conv2d(s(x)^q, W_q)`.
pub fn selfonn_conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    banks: &[Var],
    bias: Var,
    stride: usize,
    padding: usize,
    pre_squash: bool,
) -> Result<Var> {
    if banks.is_empty() {
        return Err(invalid("selfonn", "q_order must be >= 1"));
    }
    let first = tape.shape(banks[0]).to_vec();
    if let Some(b) = banks.iter().find(|&&b| tape.shape(b) != first.as_slice()) {
        return Err(invalid("selfonn", format!("bank shapes differ: {:?} vs {first:?}", tape.shape(*b))));
    }
    let s = if pre_squash { tape.tanh(x) } else { x };
    if banks.len() == 1 {
        return tape.conv2d(s, banks[0], Some(bias), stride, padding);
    }
    let mut powers = vec![s];
    for q in 2..=banks.len() {
        powers.push(tape.pow(s, q as u32)?);
    }
    let stacked_in = tape.concat_channels(&powers)?;
    let stacked_w = tape.concat_channels(banks)?;
    tape.conv2d(stacked_in, stacked_w, Some(bias), stride, padding)
}

/// Largest relative error between the analytic gradient of `sum(layer(x))`
/// and central finite differences (`h = 1e-4`), over every bank, the bias and
/// the input.
pub fn selfonn_gradcheck(layer: &SelfOnnConv2d, store: &ParamStore<f64>, input: &Tensor<f64>) -> Result<f64> {
    let report = crate::gradcheck::check(store, std::slice::from_ref(input), 1e-4, |tape, store, xs| {
        let y = layer.forward(tape, store, xs[0])?;
        Ok(tape.sum(y))
    })?;
    Ok(report.max_rel_error)
}

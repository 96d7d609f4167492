//! Parameterised building blocks shared by both networks.

use rand::Rng;

use crate::error::Result;
use crate::init;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Kaiming-uniform weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = init::uniform(&[cout, cin, k, k], init::kaiming_bound(cin * k * k), rng);
        let weight = store.add(format!("{name}.weight"), w, true)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true)?) } else { None };
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates (unbiased variance); eval mode uses the estimates.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let eps = T::lit(self.eps);
        match mode {
            Mode::Train => {
                let (n, _, h, w) = tape.value(x).dims4()?;
                let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, eps)?;
                let m = (n * h * w) as f64;
                let unbias = T::lit(m / (m - 1.0));
                let mom = T::lit(self.momentum);
                let keep = T::one() - mom;
                let rm = store.get_mut(self.running_mean).value.data_mut();
                rm.iter_mut().zip(&mean).for_each(|(r, &b)| *r = keep * *r + mom * b);
                let rv = store.get_mut(self.running_var).value.data_mut();
                rv.iter_mut().zip(&var).for_each(|(r, &b)| *r = keep * *r + mom * b * unbias);
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.value(self.running_mean).data().to_vec();
                let var = store.value(self.running_var).data().to_vec();
                tape.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }
}

//! Bias-corrected Adam.

use crate::error::{shape_err, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_hyper(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
        Self { beta1, beta2, eps, step: 0, m: zeros(), v: zeros() }
    }

    /// One update of every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(shape_err("adam", format!("state for {} params, store has {}", self.m.len(), store.len())));
        }
        for (id, p) in store.iter() {
            if p.value.numel() != self.m[id.0].len() {
                return Err(shape_err("adam", format!("`{}` changed size", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() / (T::one() - b1.powi(t));
        let c2 = T::one() / (T::one() - b2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let grad = p.grad.data().to_vec();
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v), true).unwrap();
        s
    }

    #[test]
    fn zero_grad_leaves_params_and_counts_step() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(&s);
        adam.step(&mut s, 1e-3).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.data()[0], 1.5);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [0.3, -4.0, 1e-3] {
            let mut s = scalar_store(0.0);
            s.iter_mut().for_each(|(_, p)| p.grad.data_mut()[0] = g);
            let mut adam = Adam::new(&s);
            adam.step(&mut s, 1e-2).unwrap();
            // bias-corrected moments at t=1 are exactly g and g^2
            let want = -1e-2 * g / (g.abs() + 1e-8);
            let got = s.by_name("w").unwrap().value.data()[0];
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(&s);
        let mut prev = 0.0;
        let mut last = 0.0;
        for _ in 0..5000 {
            s.iter_mut().for_each(|(_, p)| p.grad.data_mut()[0] = 2.5);
            adam.step(&mut s, 1e-3).unwrap();
            let w = s.by_name("w").unwrap().value.data()[0];
            last = prev - w;
            prev = w;
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let s = scalar_store(0.0);
        let mut adam = Adam::new(&s);
        let mut other = scalar_store(0.0);
        other.add("extra", Tensor::scalar(1.0), true).unwrap();
        assert!(adam.step(&mut other, 1e-3).is_err());
    }
}

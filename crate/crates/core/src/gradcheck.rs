//! Central finite-difference gradient checks (64-bit).

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which value produced the maximum, e.g. `param conv.weight[3]` or `input 0[7]`.
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor for the relative error. Gradients smaller than this are
/// compared absolutely; below it central differences are limited by roundoff
/// (`~eps * |loss| / h`), not by the backward rule.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic and numeric gradients of the scalar produced by
/// `forward` w.r.t. every trainable parameter in `store` and every input.
///
/// `forward` may mutate the store (batch-norm running statistics); each
/// evaluation runs on a fresh clone, so those updates never leak into the
/// perturbed evaluations.
pub fn check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], h: f64, mut forward: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>, &[Var]) -> Result<Var>,
{
    // Analytic pass.
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let mut fwd_store = analytic_store.clone();
    let loss = forward(&mut tape, &mut fwd_store, &vars)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFinite { what: "forward output".into(), provenance: Some("gradient check".into()) });
    }
    let grads = tape.backward(loss, &mut analytic_store)?;

    let mut eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut s = store.clone();
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = forward(&mut tape, &mut s, &vars)?;
        let v = tape.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "forward output".into(), provenance: Some("gradient check".into()) });
        }
        Ok(v)
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    let mut record = |err: f64, label: String| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = label;
        }
    };

    let mut probe = store.clone();
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        for i in 0..p.value.numel() {
            let orig = p.value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval(&probe, inputs)?;
            probe.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval(&probe, inputs)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic_store.get(id).grad.data()[i];
            record(rel_error(a, numeric), format!("param {}[{i}]", p.name));
        }
    }

    let mut probe_inputs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let g = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe_inputs[k].data_mut()[i] = orig + h;
            let up = eval(store, &probe_inputs)?;
            probe_inputs[k].data_mut()[i] = orig - h;
            let down = eval(store, &probe_inputs)?;
            probe_inputs[k].data_mut()[i] = orig;
            record(rel_error(g.data()[i], (up - down) / (2.0 * h)), format!("input {k}[{i}]"));
        }
    }
    Ok(report)
}

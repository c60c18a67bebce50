//! Central finite-difference gradient oracle.

use std::fmt;

use crate::autodiff::{ParameterStore, Tape, Var};
use crate::error::{DalError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding do not divide by zero.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let status = if p.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{status:>4} {:<24} rel={:.3e} at [{}] analytic={:.6e} numeric={:.6e}",
                p.name, p.max_rel_error, p.worst_index, p.analytic, p.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of `forward` against central differences for
/// every trainable parameter in `store`.
///
/// `forward` must be deterministic: stochastic layers have to draw their
/// noise from a fixed seed.
pub fn grad_check<F>(store: &mut ParameterStore, forward: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let value = |s: &ParameterStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = forward(&mut t, s)?;
        Ok(t.scalar(l))
    };
    let gradient = |s: &mut ParameterStore| -> Result<()> {
        s.zero_grad();
        let mut t = Tape::new();
        let l = forward(&mut t, s)?;
        t.backward(l, s)
    };
    grad_check_with(store, value, gradient, opts)
}

/// Like [`grad_check`] but with the analytic gradient supplied separately:
/// `gradient` must leave dloss/dparam in the store's gradient buffers.
pub fn grad_check_with<V, G>(
    store: &mut ParameterStore,
    value: V,
    mut gradient: G,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    V: Fn(&ParameterStore) -> Result<f64>,
    G: FnMut(&mut ParameterStore) -> Result<()>,
{
    let base = value(store)?;
    let again = value(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(DalError::NonDeterministic(format!(
            "two evaluations at the same point gave {base} and {again}"
        )));
    }
    gradient(store)?;

    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut params = Vec::new();
    for name in names {
        if store.trainable(&name) != Some(true) {
            continue;
        }
        let analytic: Tensor = store.grad(&name).cloned().expect("known name");
        let original = store.get(&name).cloned().expect("known name");
        let mut check = ParamCheck { name: name.clone(), max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for i in 0..original.len() {
            let x = original.data()[i];
            store.get_mut(&name).expect("known name").data_mut()[i] = x + opts.step;
            let plus = value(store)?;
            store.get_mut(&name).expect("known name").data_mut()[i] = x - opts.step;
            let minus = value(store)?;
            store.get_mut(&name).expect("known name").data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > check.max_rel_error || i == 0 {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { params, tolerance: opts.tolerance })
}

//! Central finite-difference gradient checking.

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error with an absolute floor so that near-zero gradients compare
/// on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of `loss_fn` against central differences with
/// step `eps` on every scalar of every parameter in `store`.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, tolerance: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if store.num_scalars() >= 10_000 {
        return Err(GradError::Contract(format!(
            "{} parameters is too many for finite differences",
            store.num_scalars()
        )));
    }
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss)?.accumulate_into(store);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, store)?;
        Ok(tape.value(l).item())
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.grad(id).expect("graded").clone();
        for i in 0..analytic.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    store.zero_grads();
    Ok(report)
}

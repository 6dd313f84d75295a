use crate::error::{Error, Result};

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `(param name, max relative error over its coordinates)` in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn error_for(&self, name: &str) -> Option<f64> {
        self.per_param
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, e)| e)
    }
}

/// `|a − n| / max(1e-6, |a| + |n|)`. The floor keeps roundoff on
/// near-zero coordinates from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Checks every coordinate of every parameter in `store`.
pub fn finite_diff_check<F>(store: &ParamStore, f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    finite_diff_check_params(store, f, step, &ids)
}

/// Central-difference check restricted to `ids`. `f` builds a scalar loss on
/// a fresh tape and must be deterministic.
pub fn finite_diff_check_params<F>(
    store: &ParamStore,
    f: F,
    step: f64,
    ids: &[ParamId],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let grads = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        checked(tape.scalar(loss)?)?;
        tape.backward(loss)?
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape)?;
        checked(tape.scalar(loss)?)
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        per_param: Vec::with_capacity(ids.len()),
        max_rel_error: 0.0,
        coordinates: 0,
    };
    for &id in ids {
        let shape = store.value(id).shape().to_vec();
        let analytic = grads
            .get(id)
            .map(|g| g.to_dense(&shape))
            .unwrap_or_else(|| super::Tensor::zeros(&shape));
        let mut worst = 0.0f64;
        for k in 0..analytic.len() {
            let orig = store.value(id).data()[k];
            work.get_mut(id).value.data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        report.coordinates += analytic.len();
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((store.get(id).name.clone(), worst));
    }
    Ok(report)
}

fn checked(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective evaluated to {v}")))
    }
}

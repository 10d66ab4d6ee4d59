//! Central finite-difference gradient checker (64-bit).

use super::params::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

/// Compares the gradients already stored in `params` against
/// `(L(theta + eps) - L(theta - eps)) / (2 eps)` for every parameter element.
///
/// `loss_fn` must be deterministic (eval mode, fixed data). Parameter values
/// are restored exactly after each probe.
pub fn grad_check<L>(
    params: &mut ParameterSet<f64>,
    eps: f64,
    mut loss_fn: L,
) -> Result<GradCheckReport>
where
    L: FnMut(&ParameterSet<f64>) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for t in 0..params.len() {
        for j in 0..params.tensor(t).len() {
            let original = params.tensor(t).values[j];
            params.tensor_mut(t).values[j] = original + eps;
            let plus = loss_fn(params)?;
            params.tensor_mut(t).values[j] = original - eps;
            let minus = loss_fn(params)?;
            params.tensor_mut(t).values[j] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while probing {}[{j}]",
                    params.tensor(t).name
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = params.tensor(t).grad[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-12);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = params.tensor(t).name.clone();
                report.worst_index = j;
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

//! Central finite-difference checking of reverse-mode gradients.

use super::{Gradients, ParamSet};

/// Worst disagreement found, and the entry where it occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_abs: f64,
    pub worst_rel: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// An entry passes when it is within `abs_tol` absolutely or `rel_tol`
/// relative to the larger magnitude.
pub fn entry_ok(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_tol || diff <= rel_tol * analytic.abs().max(numeric.abs())
}

/// Compares `loss_and_grad`'s analytic gradient with `(f(p+h) - f(p-h)) / 2h`
/// for every scalar in `params`. Parameters are restored afterwards.
pub fn check_gradients<F, E>(
    params: &mut ParamSet,
    loss_and_grad: F,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&ParamSet) -> Result<(f64, Gradients), E>,
{
    let (_, analytic) = loss_and_grad(params)?;
    let ids: Vec<_> = params
        .iter()
        .map(|(id, name, t)| (id, name.to_string(), t.len()))
        .collect();
    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        worst_abs: 0.0,
        worst_rel: 0.0,
        worst: None,
    };
    for (id, name, len) in ids {
        for i in 0..len {
            let original = params.get(id).values()[i];
            params.get_mut(id).values_mut()[i] = original + h;
            let plus = loss_and_grad(params)?.0;
            params.get_mut(id).values_mut()[i] = original - h;
            let minus = loss_and_grad(params)?.0;
            params.get_mut(id).values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id)[i];
            let diff = (a - numeric).abs();
            let rel = diff / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            if !entry_ok(a, numeric, rel_tol, abs_tol) {
                report.failures += 1;
            }
            if diff > report.worst_abs {
                report.worst_abs = diff;
                report.worst = Some((name.clone(), i, a, numeric));
            }
            if diff > abs_tol {
                report.worst_rel = report.worst_rel.max(rel);
            }
        }
    }
    Ok(report)
}

//! Central-difference verification of analytic gradients.

use super::ParamStore;
use crate::error::Result;

/// Worst relative error found by a finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare `analytic` against central differences of `loss_fn` with step
/// `h`, perturbing every entry of every parameter in `params`. The loss
/// closure may mutate scratch state but must be a pure function of the
/// store contents.
pub fn central_diff_check<F>(
    params: &mut ParamStore,
    analytic: &ParamStore,
    mut loss_fn: F,
    h: f64,
) -> Result<GradReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    params.check_same_layout(analytic)?;
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for pi in 0..params.len() {
        for i in 0..params.get(pi).data().len() {
            let orig = params.get(pi).data()[i];
            params.get_mut(pi).data_mut()[i] = orig + h;
            let lp = loss_fn(params)?;
            params.get_mut(pi).data_mut()[i] = orig - h;
            let lm = loss_fn(params)?;
            params.get_mut(pi).data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = analytic.get(pi).data()[i];
            let rel = (ana - num).abs() / f64::max(1e-8, ana.abs() + num.abs());
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = analytic.name_of(pi).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

//! Central finite-difference check of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Lower bound of the relative-error denominator, in units of `max(1, |loss|)`.
///
/// Central differences carry rounding noise of roughly `ε_mach·|loss|/h`, so
/// entries whose gradient is below this scale are judged on an absolute basis.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `loss` against central differences
/// `(f(p+h) − f(p−h)) / 2h` for every scalar in `store`.
///
/// The relative error of one entry is `|a − n| / max(|a|, |n|, floor)` with
/// `floor = REL_ERROR_FLOOR · max(1, |loss|)`.
pub fn grad_check<F>(store: &ParamStore, eps_fd: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps_fd > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step {eps_fd}")));
    }
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let analytic = tape.param_grads(&grads);
    let floor = REL_ERROR_FLOOR * tape.scalar(out).abs().max(1.0);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = loss(&mut t, s)?;
        Ok(t.scalar(v))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let len = store.get(&name).map_or(0, |m| m.data().len());
        for idx in 0..len {
            let orig = store.get(&name).unwrap().data()[idx];
            work.get_mut(&name).unwrap().data_mut()[idx] = orig + eps_fd;
            let plus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[idx] = orig - eps_fd;
            let minus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps_fd);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[idx]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("grad_check on `{name}`[{idx}]")));
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((name.clone(), idx));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

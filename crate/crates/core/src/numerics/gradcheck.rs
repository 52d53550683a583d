//! Central finite-difference gradient checking.

use super::params::{ParamId, ParamStore};
use super::tape::Gradients;
use crate::error::Result;

/// Denominator floor for the relative error, so that gradients near zero are
/// compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, index: usize, err: f64) {
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((name.to_string(), index));
        }
    }
}

/// Compares `analytic` against `(L(p + h) - L(p - h)) / 2h` for every entry of
/// the listed parameters. `skip(id, flat_index)` excludes frozen entries.
pub fn check_gradients<F>(
    store: &ParamStore,
    ids: &[ParamId],
    analytic: &Gradients,
    h: f64,
    skip: impl Fn(ParamId, usize) -> bool,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for &id in ids {
        let shape = store.get(id).shape().to_vec();
        let g = analytic.dense(id, &shape);
        for i in 0..store.get(id).len() {
            if skip(id, i) {
                continue;
            }
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = loss(&work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = loss(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            report.record(store.name(id), i, relative_error(g.data()[i], numeric));
        }
    }
    Ok(report)
}

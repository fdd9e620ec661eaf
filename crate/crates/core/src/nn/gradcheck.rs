//! Central finite-difference oracle for checking analytic gradients.

use std::collections::HashMap;

use super::graph::Mat;
use super::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst norm-wise relative error over parameter tensors, with its name.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked_scalars: usize,
}

/// Compares `analytic` against central differences of `loss` with step `h`.
///
/// The relative error of a tensor is `|a - n| / max(|a| + |n|, floor)` using
/// Euclidean norms, so that tiny gradients do not dominate through rounding.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &HashMap<ParamId, Mat>,
    h: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked_scalars: 0,
    };
    for id in store.ids() {
        let shape = store.value(id).dim();
        let mut numeric = Mat::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = probe.value(id)[[r, c]];
                probe.value_mut(id)[[r, c]] = orig + h;
                let up = loss(&probe);
                probe.value_mut(id)[[r, c]] = orig - h;
                let down = loss(&probe);
                probe.value_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (up - down) / (2.0 * h);
                report.checked_scalars += 1;
            }
        }
        let a = analytic.get(&id).cloned().unwrap_or_else(|| Mat::zeros(shape));
        let diff = (&a - &numeric).mapv(|x| x * x).sum().sqrt();
        let scale = a.mapv(|x| x * x).sum().sqrt() + numeric.mapv(|x| x * x).sum().sqrt();
        let rel = diff / scale.max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = store.name(id).to_string();
        }
    }
    report
}

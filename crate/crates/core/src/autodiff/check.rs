//! Central finite-difference check of tape gradients.

use super::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

/// Largest `|analytic - numeric| / max(1, |analytic|)` over every scalar
/// entry of every parameter in `params`.
///
/// `build` must construct a one-element loss from `g.param(..)` leaves and
/// be a pure function of the parameter values.
pub fn finite_difference_check<F>(params: &ParamStore, eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Contract(alloc::format!("eps {eps} outside (0, 1e-2]")));
    }
    let analytic = {
        let mut g = Graph::with_params(params);
        let loss = build(&mut g)?;
        let grads = g.backward(loss)?;
        params
            .ids()
            .map(|id| grads.param(id).map(|t| t.data().to_vec()))
            .collect::<alloc::vec::Vec<_>>()
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(store);
        let loss = build(&mut g)?;
        g.scalar(loss)
    };

    let mut work = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()].as_ref().map_or(0.0, |v| v[j]);
            let rel = libm::fabs(a - numeric) / libm::fabs(a).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

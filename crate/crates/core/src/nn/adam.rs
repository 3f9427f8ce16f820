use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_HAT: f64 = 1e-8;

/// Adam moment accumulators for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam step. Parameters whose gradient is `None`
    /// are left untouched, including their moments.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(BETA1, t as f64);
        let c2 = 1.0 - libm::pow(BETA2, t as f64);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id.index()).and_then(Option::as_ref) else {
                continue;
            };
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = store.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (libm::sqrt(vhat) + EPS_HAT);
            }
        }
    }
}

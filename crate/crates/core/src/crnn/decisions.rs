use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Log of the discrete choices (argmax actions) taken during a forward
/// pass.
///
/// Gradients stop at every argmax, so the loss is only a smooth function
/// of the parameters once these choices are held fixed. Recording one pass
/// and replaying it lets perturbed passes follow the same discrete path.
#[derive(Clone, Debug, Default)]
pub struct Decisions {
    log: Vec<usize>,
    cursor: usize,
    replaying: bool,
}

impl Decisions {
    pub fn record() -> Self {
        Decisions::default()
    }

    pub fn replay(log: Vec<usize>) -> Self {
        Decisions {
            log,
            cursor: 0,
            replaying: true,
        }
    }

    pub fn log(&self) -> &[usize] {
        &self.log
    }

    pub fn into_log(self) -> Vec<usize> {
        self.log
    }

    pub(crate) fn choose(&mut self, proposed: usize) -> Result<usize> {
        if self.replaying {
            let v = *self
                .log
                .get(self.cursor)
                .ok_or_else(|| Error::Contract("decision replay exhausted".into()))?;
            self.cursor += 1;
            Ok(v)
        } else {
            self.log.push(proposed);
            Ok(proposed)
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

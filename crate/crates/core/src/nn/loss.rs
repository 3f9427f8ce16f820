use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// `-log softmax(logits)[target]`, computed through a log-softmax node.
pub fn cross_entropy(g: &mut Graph<'_>, logits: NodeId, target: usize) -> Result<NodeId> {
    let classes = g.value(logits).len();
    if target >= classes {
        return Err(Error::Contract(format!(
            "target class {target} out of range for {classes} logits"
        )));
    }
    let ls = g.log_softmax(logits)?;
    let picked = g.slice(ls, target, 1)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0)
}

/// Squared-error loss on normalized durations.
pub struct TimeLoss {
    pub value: NodeId,
    /// Number of (thread, position) pairs compared.
    pub aligned: usize,
    /// Set when no position could be aligned; `value` is then zero.
    pub empty: bool,
}

/// Mean over threads and aligned positions of `(predicted - truth)^2`.
///
/// Each entry of `predicted` is a vector of relative durations for one
/// thread; it is compared with `truth` over the shorter of the two lengths.
pub fn time_loss(g: &mut Graph<'_>, predicted: &[NodeId], truth: &[f64]) -> Result<TimeLoss> {
    let mut terms = Vec::with_capacity(predicted.len());
    let mut aligned = 0;
    for &p in predicted {
        let n = g.value(p).len().min(truth.len());
        if n == 0 {
            continue;
        }
        let head = g.slice(p, 0, n)?;
        let t = g.input(Tensor::vector(truth[..n].to_vec()))?;
        let d = g.sub(head, t)?;
        let sq = g.square(d)?;
        terms.push(g.sum(sq)?);
        aligned += n;
    }
    if aligned == 0 {
        let value = g.input(Tensor::scalar(0.0))?;
        return Ok(TimeLoss {
            value,
            aligned,
            empty: true,
        });
    }
    let total = g.add_all(&terms)?;
    let value = g.scale(total, 1.0 / aligned as f64)?;
    Ok(TimeLoss {
        value,
        aligned,
        empty: false,
    })
}

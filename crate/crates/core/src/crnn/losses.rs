use alloc::format;
use alloc::vec::Vec;

use super::forward::{DecodedThread, EncoderOutput};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::cross_entropy;

/// Mean per-frame cross entropy of the lower encoder classifier.
pub fn encoder_recognition_loss(g: &mut Graph<'_>, enc: &EncoderOutput, labels: &[usize]) -> Result<NodeId> {
    if labels.len() != enc.frame_logits.len() {
        return Err(Error::Contract(format!(
            "{} labels for {} encoded frames",
            labels.len(),
            enc.frame_logits.len()
        )));
    }
    let terms = enc
        .frame_logits
        .iter()
        .zip(labels)
        .map(|(&l, &c)| cross_entropy(g, l, c))
        .collect::<Result<Vec<_>>>()?;
    let total = g.add_all(&terms)?;
    g.scale(total, 1.0 / labels.len() as f64)
}

/// Ground-truth token at future position `m`, EOS-padded past the end.
fn target_at(gt: &[usize], m: usize, eos: usize) -> usize {
    gt.get(m).copied().unwrap_or(eos)
}

/// Number of positions scored for a thread against `gt`: the longer of the
/// prediction and the ground truth, each counted with its EOS.
pub fn scored_positions(thread: &DecodedThread, gt: &[usize]) -> usize {
    thread.span().max(gt.len() + 1)
}

/// Position-wise action cross entropy of one thread, unaggregated.
///
/// The shorter of prediction and ground truth is padded with EOS. The
/// thread must have been decoded far enough to cover every scored
/// position, which teacher-guided decoding guarantees.
pub fn thread_action_loss(g: &mut Graph<'_>, thread: &DecodedThread, gt: &[usize], eos: usize) -> Result<Vec<NodeId>> {
    let n = scored_positions(thread, gt);
    if n > thread.steps.len() {
        return Err(Error::Contract(format!(
            "thread has {} steps but {n} positions are scored",
            thread.steps.len()
        )));
    }
    (0..n)
        .map(|m| cross_entropy(g, thread.steps[m].logits, target_at(gt, m, eos)))
        .collect()
}

/// Cross entropy of the upper heads.
///
/// The encoder's upper classifier is scored against the frame label at
/// every update frame; each decoder's upper head against the token it
/// consumed at every step. Returns the mean over all terms, or `None`
/// when the single-level variant has no upper heads.
pub fn upper_level_loss(
    g: &mut Graph<'_>,
    enc: &EncoderOutput,
    labels: &[usize],
    threads: &[DecodedThread],
) -> Result<Option<NodeId>> {
    let mut terms = Vec::new();
    for &(t, ul) in &enc.upper_logits {
        let c = *labels
            .get(t)
            .ok_or_else(|| Error::Contract(format!("no label for update frame {t}")))?;
        terms.push(cross_entropy(g, ul, c)?);
    }
    for thread in threads {
        for step in &thread.steps {
            if let Some(ul) = step.upper_logits {
                terms.push(cross_entropy(g, ul, step.fed)?);
            }
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let n = terms.len();
    let total = g.add_all(&terms)?;
    Ok(Some(g.scale(total, 1.0 / n as f64)?))
}

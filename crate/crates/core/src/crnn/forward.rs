use alloc::format;
use alloc::vec::Vec;

use super::decisions::{argmax, Decisions};
use super::model::{Crnn, Levels};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Hidden states and per-frame classifications of the observed frames.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub h_lower: NodeId,
    pub h_upper: NodeId,
    /// One `(C+1)` logit vector per observed frame.
    pub frame_logits: Vec<NodeId>,
    /// Argmax of `frame_logits`.
    pub frame_actions: Vec<usize>,
    /// `(frame, logits)` for every frame on which the upper GRU updated.
    pub upper_logits: Vec<(usize, NodeId)>,
    pub upper_step_count: usize,
}

/// Ground-truth feedback for training-time decoding.
#[derive(Clone, Copy, Debug)]
pub struct Teacher<'a> {
    /// Future actions, EOS excluded.
    pub targets: &'a [usize],
    /// Per step: feed the ground truth (`true`) or the decoder's own choice.
    pub force: &'a [bool],
}

#[derive(Clone, Debug)]
pub struct DecodeStep {
    pub logits: NodeId,
    pub upper_logits: Option<NodeId>,
    pub raw_duration: NodeId,
    pub action: usize,
    /// Token fed back into the next step: `action`, or the ground truth
    /// when teacher-forced.
    pub fed: usize,
}

/// Result of running one decoder thread.
#[derive(Clone, Debug)]
pub struct DecodedThread {
    pub steps: Vec<DecodeStep>,
    /// Index of the first step whose argmax was EOS.
    pub first_eos: Option<usize>,
    /// EOS was emitted before the step cap.
    pub terminated: bool,
}

impl DecodedThread {
    /// Number of action steps before the terminating EOS.
    pub fn len(&self) -> usize {
        self.first_eos.unwrap_or(self.steps.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Steps the thread actually emitted, the terminating EOS included.
    pub fn span(&self) -> usize {
        self.first_eos.map_or(self.steps.len(), |e| e + 1)
    }

    /// Predicted actions, terminating EOS excluded.
    pub fn actions(&self) -> Vec<usize> {
        self.steps[..self.len()].iter().map(|s| s.action).collect()
    }

    /// Softmax over the raw durations of the first `n` steps.
    pub fn normalized_durations(&self, g: &mut Graph<'_>, n: usize) -> Result<NodeId> {
        if n == 0 || n > self.steps.len() {
            return Err(Error::Contract(format!(
                "cannot normalize {n} durations of a {}-step thread",
                self.steps.len()
            )));
        }
        let raw: Vec<NodeId> = self.steps[..n].iter().map(|s| s.raw_duration).collect();
        let v = g.concat(&raw, 0)?;
        g.softmax(v)
    }

    /// Relative durations of the predicted actions; sums to 1 unless the
    /// thread is empty.
    pub fn rel_durations(&self, g: &mut Graph<'_>) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.normalized_durations(g, self.len())?;
        Ok(g.value(n).data().to_vec())
    }
}

impl Crnn {
    /// Runs both encoder levels over `features` (`T × D`, `T ≥ 1`).
    ///
    /// Per frame the lower GRU reads the features and the embedding of the
    /// previous upper-level action. The upper GRU steps on the first frame
    /// and whenever the lower argmax changes.
    pub fn encode(&self, g: &mut Graph<'_>, features: &Tensor, decisions: &mut Decisions) -> Result<EncoderOutput> {
        let d = self.dims;
        if features.rank() != 2 || features.shape()[0] == 0 {
            return Err(Error::Contract(format!(
                "encode needs a non-empty T×D matrix, got {:?}",
                features.shape()
            )));
        }
        if features.shape()[1] != d.feature_dim {
            return Err(Error::Dimension(format!(
                "feature dim {} but model expects {}",
                features.shape()[1],
                d.feature_dim
            )));
        }
        let enc = &self.encoder;
        let frames = g.input(features.clone())?;
        let mut h_lower = g.input(Tensor::zeros(&[d.hidden_lower]))?;
        let mut h_upper = g.input(Tensor::zeros(&[d.hidden_upper]))?;
        let t_len = features.shape()[0];

        let mut out = EncoderOutput {
            h_lower,
            h_upper,
            frame_logits: Vec::with_capacity(t_len),
            frame_actions: Vec::with_capacity(t_len),
            upper_logits: Vec::new(),
            upper_step_count: 0,
        };
        let mut upper_action = d.eos();
        for t in 0..t_len {
            let f = g.gather_row(frames, t)?;
            let feedback = enc.embed_upper.lookup(g, upper_action)?;
            let x = g.concat(&[f, feedback], 0)?;
            h_lower = enc.lower.step(g, x, h_lower)?;
            let logits = enc.classifier_lower.forward(g, h_lower)?;
            let a = decisions.choose(argmax(g.value(logits).data()))?;
            let changed = out.frame_actions.last() != Some(&a);
            out.frame_logits.push(logits);
            out.frame_actions.push(a);

            if self.levels == Levels::Collaborative && changed {
                let e = enc.embed_lower.lookup(g, a)?;
                h_upper = enc.upper.step(g, e, h_upper)?;
                let ul = enc.classifier_upper.forward(g, h_upper)?;
                upper_action = decisions.choose(argmax(g.value(ul).data()))?;
                out.upper_logits.push((t, ul));
                out.upper_step_count += 1;
            }
        }
        out.h_lower = h_lower;
        out.h_upper = h_upper;
        Ok(out)
    }

    /// Greedy decoding of thread `k` from the encoder states.
    ///
    /// Both levels start from EOS. Without a teacher, decoding stops at the
    /// first EOS or after `max_len` steps. With a teacher it additionally
    /// runs at least `targets.len() + 1` steps so every ground-truth
    /// position and its EOS have logits.
    pub fn decode_thread(
        &self,
        g: &mut Graph<'_>,
        k: usize,
        enc: &EncoderOutput,
        max_len: usize,
        teacher: Option<Teacher<'_>>,
        decisions: &mut Decisions,
    ) -> Result<DecodedThread> {
        if max_len == 0 {
            return Err(Error::Contract("max_len must be at least 1".into()));
        }
        let dec = self
            .decoders
            .get(k)
            .ok_or_else(|| Error::Contract(format!("no decoder thread {k}")))?;
        let d = self.dims;
        let eos = d.eos();
        let tokens = d.tokens();
        let min_steps = teacher.map_or(0, |t| t.targets.len() + 1);
        let cap = max_len.max(min_steps);

        let mut h_lower = enc.h_lower;
        let mut h_upper = enc.h_upper;
        let mut prev_lower = eos;
        let mut prev_upper = eos;
        let mut thread = DecodedThread {
            steps: Vec::new(),
            first_eos: None,
            terminated: false,
        };

        for m in 0..cap {
            if m >= min_steps && (thread.first_eos.is_some() || m >= max_len) {
                break;
            }
            let el = dec.embed_lower.lookup(g, prev_lower)?;
            let upper_slot = if self.levels == Levels::Collaborative { prev_upper } else { eos };
            let eu = dec.embed_upper.lookup(g, upper_slot)?;
            let x = g.concat(&[el, eu], 0)?;
            h_lower = dec.lower.step(g, x, h_lower)?;
            let head = dec.head_lower.forward(g, h_lower)?;
            let logits = g.slice(head, 0, tokens)?;
            let dur = g.slice(head, tokens, 1)?;
            let raw_duration = g.sum(dur)?;
            let action = decisions.choose(argmax(g.value(logits).data()))?;
            if action == eos && thread.first_eos.is_none() {
                thread.first_eos = Some(m);
            }

            let forced = teacher.and_then(|t| {
                t.force
                    .get(m)
                    .copied()
                    .unwrap_or(false)
                    .then(|| t.targets.get(m).copied().unwrap_or(eos))
            });
            let fed = forced.unwrap_or(action);

            let mut upper_logits = None;
            if self.levels == Levels::Collaborative {
                let e = dec.embed_lower.lookup(g, fed)?;
                h_upper = dec.upper.step(g, e, h_upper)?;
                let ul = dec.head_upper.forward(g, h_upper)?;
                let u = decisions.choose(argmax(g.value(ul).data()))?;
                prev_upper = forced.unwrap_or(u);
                upper_logits = Some(ul);
            }
            prev_lower = fed;
            thread.steps.push(DecodeStep {
                logits,
                upper_logits,
                raw_duration,
                action,
                fed,
            });
        }
        thread.terminated = thread.first_eos.is_some();
        Ok(thread)
    }
}

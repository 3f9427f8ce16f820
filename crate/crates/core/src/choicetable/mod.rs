//! Coordination of the K decoder threads: diversity penalty, random
//! masking of action-loss terms, loss assembly, and ranking by
//! sequence probability.

use alloc::format;
use alloc::vec::Vec;

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{log_sum_exp, Graph, NodeId, Tensor};
use crate::crnn::DecodedThread;
use crate::error::{Error, Result};

/// Negative mean pairwise distance between the threads' softmax outputs.
///
/// At every step index the softmaxed logits of the threads that emitted
/// that step (up to and including their EOS) are stacked into `Q`, and all
/// entries of `D(Q, Q)` are summed. The total is scaled by `-lambda / K^2`.
pub fn similarity_penalty(g: &mut Graph<'_>, threads: &[DecodedThread], lambda: f64) -> Result<NodeId> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let k = threads.len();
    let longest = threads.iter().map(DecodedThread::span).max().unwrap_or(0);
    let mut terms = Vec::new();
    if k > 1 && lambda > 0.0 {
        for m in 0..longest {
            let rows = threads
                .iter()
                .filter(|t| t.span() > m)
                .map(|t| g.softmax(t.steps[m].logits))
                .collect::<Result<Vec<_>>>()?;
            if rows.len() < 2 {
                continue;
            }
            let q = g.stack_rows(&rows)?;
            let d = g.pairwise_l2(q, q)?;
            terms.push(g.sum(d)?);
        }
    }
    if terms.is_empty() {
        return g.input(Tensor::scalar(0.0));
    }
    let total = g.add_all(&terms)?;
    g.scale(total, -lambda / (k * k) as f64)
}

/// Bernoulli keep-mask over `(thread, position)` action-loss terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RlnMask {
    threads: usize,
    positions: usize,
    keep: Vec<bool>,
}

impl RlnMask {
    /// Every term kept.
    pub fn ones(threads: usize, positions: usize) -> Self {
        RlnMask {
            threads,
            positions,
            keep: alloc::vec![true; threads * positions],
        }
    }

    /// Draws i.i.d. entries equal to 1 with probability `phi`.
    pub fn sample<R: Rng + ?Sized>(threads: usize, positions: usize, phi: f64, rng: &mut R) -> Result<Self> {
        let dist = Bernoulli::new(phi).map_err(|_| Error::Contract(format!("phi must lie in [0, 1], got {phi}")))?;
        let keep = (0..threads * positions).map(|_| dist.sample(rng)).collect();
        Ok(RlnMask {
            threads,
            positions,
            keep,
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn get(&self, thread: usize, position: usize) -> bool {
        thread < self.threads && position < self.positions && self.keep[thread * self.positions + position]
    }

    pub fn set(&mut self, thread: usize, position: usize, keep: bool) {
        assert!(thread < self.threads && position < self.positions, "mask index out of range");
        self.keep[thread * self.positions + position] = keep;
    }

    /// Fraction of kept entries.
    pub fn mean(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.keep.iter().filter(|&&b| b).count() as f64 / self.keep.len() as f64
    }
}

/// Seeded form of [`RlnMask::sample`].
pub fn sample_rln_mask(threads: usize, positions: usize, phi: f64, seed: u64) -> Result<RlnMask> {
    RlnMask::sample(threads, positions, phi, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `Σ_k Σ_m M[k,m] · loss[k][m]` divided by `positions · K`.
///
/// `losses[k]` is the per-position vector of thread `k`; `positions` is the
/// ground-truth future length used as the normalizer.
pub fn masked_action_loss(g: &mut Graph<'_>, losses: &[Vec<NodeId>], mask: &RlnMask, positions: usize) -> Result<NodeId> {
    if losses.is_empty() || positions == 0 {
        return Err(Error::Contract("masked action loss needs threads and positions".into()));
    }
    let width = losses.iter().map(Vec::len).max().unwrap_or(0);
    if mask.threads() < losses.len() || mask.positions() < width {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not cover {}x{} loss terms",
            mask.threads(),
            mask.positions(),
            losses.len(),
            width
        )));
    }
    let mut kept = Vec::new();
    for (k, row) in losses.iter().enumerate() {
        for (m, &l) in row.iter().enumerate() {
            if mask.get(k, m) {
                kept.push(l);
            }
        }
    }
    if kept.is_empty() {
        return g.input(Tensor::scalar(0.0));
    }
    let total = g.add_all(&kept)?;
    g.scale(total, 1.0 / (positions * losses.len()) as f64)
}

/// Loss components of one training sample, all scalars on the same graph.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub recognition: NodeId,
    pub action: NodeId,
    pub time: NodeId,
    pub similarity: NodeId,
    /// Upper-head supervision; absent for the single-level model or when
    /// disabled.
    pub upper: Option<NodeId>,
}

/// Numeric values of [`LossParts`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub recognition: f64,
    pub action: f64,
    pub time: f64,
    pub similarity: f64,
    pub upper: f64,
}

impl LossParts {
    pub fn values(&self, g: &Graph<'_>, total: NodeId) -> Result<LossValues> {
        Ok(LossValues {
            total: g.scalar(total)?,
            recognition: g.scalar(self.recognition)?,
            action: g.scalar(self.action)?,
            time: g.scalar(self.time)?,
            similarity: g.scalar(self.similarity)?,
            upper: match self.upper {
                Some(u) => g.scalar(u)?,
                None => 0.0,
            },
        })
    }
}

/// Unweighted sum of all components.
pub fn total_loss(g: &mut Graph<'_>, parts: &LossParts) -> Result<NodeId> {
    let mut terms = alloc::vec![parts.recognition, parts.action, parts.time, parts.similarity];
    terms.extend(parts.upper);
    g.add_all(&terms)
}

/// Log-probability of the thread's own greedy sequence, its terminating
/// EOS included. A thread without actions scores `-inf`.
pub fn thread_log_prob(g: &Graph<'_>, thread: &DecodedThread) -> f64 {
    if thread.is_empty() {
        return f64::NEG_INFINITY;
    }
    thread.steps[..thread.span()]
        .iter()
        .map(|s| {
            let logits = g.value(s.logits).data();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max - log_sum_exp(logits)
        })
        .sum()
}

/// Threads sorted by log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPredictions {
    /// 0-based thread indices, most probable first.
    pub order: Vec<usize>,
    /// Log-probabilities along `order`; nonincreasing.
    pub log_probs: Vec<f64>,
}

/// Stable descending sort of `log_probs`; equal values keep index order.
pub fn rank_threads(log_probs: &[f64]) -> RankedPredictions {
    let mut order: Vec<usize> = (0..log_probs.len()).collect();
    order.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]));
    let sorted = order.iter().map(|&i| log_probs[i]).collect();
    RankedPredictions {
        order,
        log_probs: sorted,
    }
}

/// Symbolic content of one decoded thread.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadPrediction {
    pub actions: Vec<usize>,
    pub rel_durations: Vec<f64>,
    pub log_prob: f64,
}

/// The K threads of one sample, extracted from the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceTable {
    pub threads: Vec<ThreadPrediction>,
}

impl ChoiceTable {
    pub fn from_threads(g: &mut Graph<'_>, threads: &[DecodedThread]) -> Result<Self> {
        let threads = threads
            .iter()
            .map(|t| {
                Ok(ThreadPrediction {
                    actions: t.actions(),
                    rel_durations: t.rel_durations(g)?,
                    log_prob: thread_log_prob(g, t),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChoiceTable { threads })
    }

    pub fn k(&self) -> usize {
        self.threads.len()
    }

    pub fn rank(&self) -> RankedPredictions {
        let lp: Vec<f64> = self.threads.iter().map(|t| t.log_prob).collect();
        rank_threads(&lp)
    }

    /// Threads in ranked order.
    pub fn ranked(&self) -> Vec<&ThreadPrediction> {
        self.rank().order.into_iter().map(|i| &self.threads[i]).collect()
    }
}

//! Frame-level expansion of predicted threads and the evaluation metrics.
//!
//! Class statistics are pooled over every video of a split before the
//! mean over classes is taken; classes absent from the ground truth are
//! left out of that mean.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Spreads `h` frames over `actions` in proportion to `rel_durations` by
/// largest-remainder apportionment (ties to the earlier segment). An empty
/// prediction repeats `fallback` over the whole horizon.
pub fn expand_thread(actions: &[usize], rel_durations: &[f64], h: usize, fallback: usize) -> Vec<usize> {
    if actions.is_empty() {
        return vec![fallback; h];
    }
    let n = actions.len();
    let mut shares: Vec<f64> = (0..n)
        .map(|i| rel_durations.get(i).copied().filter(|v| v.is_finite() && *v > 0.0).unwrap_or(0.0))
        .collect();
    let total: f64 = shares.iter().sum();
    if total > 0.0 {
        shares.iter_mut().for_each(|s| *s /= total);
    } else {
        shares.fill(1.0 / n as f64);
    }
    let quotas: Vec<f64> = shares.iter().map(|s| s * h as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut left = h.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    let mut out = Vec::with_capacity(h);
    for (&a, &c) in actions.iter().zip(&counts) {
        out.extend(core::iter::repeat_n(a, c));
    }
    out.truncate(h);
    out
}

/// Per-class correct/total frame counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    correct: Vec<u64>,
    total: Vec<u64>,
}

impl ClassCounts {
    pub fn new(num_classes: usize) -> Self {
        ClassCounts {
            correct: vec![0; num_classes],
            total: vec![0; num_classes],
        }
    }

    fn check(&self, gt: &[usize]) -> Result<()> {
        if let Some(&c) = gt.iter().find(|&&c| c >= self.total.len()) {
            return Err(Error::Data(format!("ground-truth class {c} outside {}", self.total.len())));
        }
        Ok(())
    }

    /// Adds frames where `hit(t)` says whether frame `t` counts as correct.
    fn add_with(&mut self, gt: &[usize], hit: impl Fn(usize) -> bool) -> Result<()> {
        self.check(gt)?;
        for (t, &c) in gt.iter().enumerate() {
            self.total[c] += 1;
            if hit(t) {
                self.correct[c] += 1;
            }
        }
        Ok(())
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Dimension(format!(
                "{} predicted frames for {} ground-truth frames",
                pred.len(),
                gt.len()
            )));
        }
        self.add_with(gt, |t| pred[t] == gt[t])
    }

    /// Accuracy of class `c`, `None` if it never occurs.
    pub fn class_accuracy(&self, c: usize) -> Option<f64> {
        let n = *self.total.get(c)?;
        (n > 0).then(|| self.correct[c] as f64 / n as f64)
    }

    /// Mean over present classes; 0 when no frame was added.
    pub fn mean_over_classes(&self) -> f64 {
        let accs: Vec<f64> = (0..self.total.len()).filter_map(|c| self.class_accuracy(c)).collect();
        if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        }
    }
}

/// Mean-over-classes accuracy of one prediction.
pub fn moc_accuracy(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<f64> {
    let mut c = ClassCounts::new(num_classes);
    c.add(pred, gt)?;
    Ok(c.mean_over_classes())
}

fn check_threads(threads: &[Vec<usize>], gt: &[usize], k: usize) -> Result<()> {
    if k == 0 || k > threads.len() {
        return Err(Error::Contract(format!("k = {k} with {} threads", threads.len())));
    }
    if let Some(t) = threads.iter().find(|t| t.len() != gt.len()) {
        return Err(Error::Dimension(format!(
            "thread has {} frames, ground truth {}",
            t.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// MoC where a frame is correct if any of the first `k` (ranked) threads
/// matches it.
pub fn accuracy_at_k(threads: &[Vec<usize>], gt: &[usize], k: usize, num_classes: usize) -> Result<f64> {
    check_threads(threads, gt, k)?;
    let mut c = ClassCounts::new(num_classes);
    c.add_with(gt, |t| threads[..k].iter().any(|th| th[t] == gt[t]))?;
    Ok(c.mean_over_classes())
}

/// Mean of the MoC accuracies of the first `k` threads.
pub fn mean_per_thread_accuracy(threads: &[Vec<usize>], gt: &[usize], k: usize, num_classes: usize) -> Result<f64> {
    check_threads(threads, gt, k)?;
    let mut s = 0.0;
    for th in &threads[..k] {
        s += moc_accuracy(th, gt, num_classes)?;
    }
    Ok(s / k as f64)
}

/// Harmonic mean of per-thread accuracy and accuracy@k.
pub fn choice_f1(mpta: f64, acc: f64) -> f64 {
    if mpta + acc == 0.0 {
        0.0
    } else {
        2.0 * mpta * acc / (mpta + acc)
    }
}

/// Metrics of one evaluation split for `k = 1..=K`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "camelCase"))]
pub struct MetricsReport {
    pub alpha: f64,
    pub beta: f64,
    pub threads: usize,
    pub videos: usize,
    /// Index `k-1` holds the value at `k`.
    pub acc_at_k: Vec<f64>,
    pub mpta_at_k: Vec<f64>,
    pub choice_f1: Vec<f64>,
    /// Accuracy@1 per class; `None` for classes absent from the ground
    /// truth.
    pub per_class: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn acc(&self, k: usize) -> f64 {
        self.acc_at_k[k - 1]
    }

    pub fn mpta(&self, k: usize) -> f64 {
        self.mpta_at_k[k - 1]
    }

    pub fn f1(&self, k: usize) -> f64 {
        self.choice_f1[k - 1]
    }
}

/// Pools frame statistics over the videos of a split.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    threads: usize,
    num_classes: usize,
    /// Union over the top `k` threads, per `k`.
    union: Vec<ClassCounts>,
    /// Thread at each rank on its own.
    per_rank: Vec<ClassCounts>,
    videos: usize,
}

impl MetricsAccumulator {
    pub fn new(threads: usize, num_classes: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Contract("need at least one thread".into()));
        }
        Ok(MetricsAccumulator {
            threads,
            num_classes,
            union: vec![ClassCounts::new(num_classes); threads],
            per_rank: vec![ClassCounts::new(num_classes); threads],
            videos: 0,
        })
    }

    /// Adds one video's frame predictions, threads in ranked order.
    pub fn add(&mut self, ranked: &[Vec<usize>], gt: &[usize]) -> Result<()> {
        if ranked.len() != self.threads {
            return Err(Error::Contract(format!(
                "{} threads given, accumulator expects {}",
                ranked.len(),
                self.threads
            )));
        }
        check_threads(ranked, gt, self.threads)?;
        for k in 1..=self.threads {
            self.union[k - 1].add_with(gt, |t| ranked[..k].iter().any(|th| th[t] == gt[t]))?;
            self.per_rank[k - 1].add(&ranked[k - 1], gt)?;
        }
        self.videos += 1;
        Ok(())
    }

    pub fn report(&self, alpha: f64, beta: f64) -> MetricsReport {
        let acc_at_k: Vec<f64> = self.union.iter().map(ClassCounts::mean_over_classes).collect();
        let mut mpta_at_k = Vec::with_capacity(self.threads);
        let mut running = 0.0;
        for (j, c) in self.per_rank.iter().enumerate() {
            running += c.mean_over_classes();
            mpta_at_k.push(running / (j + 1) as f64);
        }
        let choice_f1 = mpta_at_k.iter().zip(&acc_at_k).map(|(&m, &a)| choice_f1(m, a)).collect();
        MetricsReport {
            alpha,
            beta,
            threads: self.threads,
            videos: self.videos,
            acc_at_k,
            mpta_at_k,
            choice_f1,
            per_class: (0..self.num_classes).map(|c| self.union[0].class_accuracy(c)).collect(),
        }
    }
}

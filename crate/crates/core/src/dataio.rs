//! Videos as per-frame labels plus features, and the observe/predict split.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Maximal run of one action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Segment {
    pub action: usize,
    pub start: usize,
    pub len: usize,
}

/// Run-length decomposition of a label sequence.
pub fn segments_of(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &a) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.action == a => s.len += 1,
            _ => out.push(Segment {
                action: a,
                start: t,
                len: 1,
            }),
        }
    }
    out
}

/// One labelled video.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    labels: Vec<usize>,
    /// `T × D`.
    features: Tensor,
}

impl Video {
    pub fn new(labels: Vec<usize>, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} labels but features shaped {:?}",
                labels.len(),
                features.shape()
            )));
        }
        Ok(Video { labels, features })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn segments(&self) -> Vec<Segment> {
        segments_of(&self.labels)
    }

    /// Frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Video> {
        if start + len > self.len() {
            return Err(Error::Contract(format!(
                "window {start}+{len} exceeds {} frames",
                self.len()
            )));
        }
        let d = self.feature_dim();
        let data = self.features.data()[start * d..(start + len) * d].to_vec();
        Video::new(self.labels[start..start + len].to_vec(), Tensor::new(alloc::vec![len, d], data)?)
    }
}

/// Label-only features: row `t` is the one-hot vector of `labels[t]`.
pub fn one_hot_features(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = alloc::vec![0.0; labels.len() * num_classes];
    for (t, &a) in labels.iter().enumerate() {
        if a >= num_classes {
            return Err(Error::Data(format!("label {a} at frame {t} outside {num_classes} classes")));
        }
        data[t * num_classes + a] = 1.0;
    }
    Tensor::new(alloc::vec![labels.len(), num_classes], data)
}

/// Keeps frames `0, factor, 2·factor, …`. Returns the new video and the
/// number of segments that lost all their frames.
pub fn downsample(video: &Video, factor: usize) -> Result<(Video, usize)> {
    if factor == 0 {
        return Err(Error::Contract("downsample factor must be at least 1".into()));
    }
    let d = video.feature_dim();
    let keep: Vec<usize> = (0..video.len()).step_by(factor).collect();
    let labels: Vec<usize> = keep.iter().map(|&t| video.labels[t]).collect();
    let mut data = Vec::with_capacity(keep.len() * d);
    for &t in &keep {
        data.extend_from_slice(&video.features.data()[t * d..(t + 1) * d]);
    }
    let before = video.segments().len();
    let out = Video::new(labels, Tensor::new(alloc::vec![keep.len(), d], data)?)?;
    let dropped = video
        .segments()
        .iter()
        .filter(|s| (s.start..s.start + s.len).all(|t| t % factor != 0))
        .count();
    if dropped > 0 {
        log::warn!("downsampling by {factor} dropped {dropped} of {before} segments");
    }
    Ok((out, dropped))
}

/// Shortest video accepted by [`make_eval_instance`].
pub const MIN_EVAL_FRAMES: usize = 10;

/// `floor(fraction · total)`, robust to the representation error of
/// decimal fractions such as `0.29`.
pub fn split_index(fraction: f64, total: usize) -> usize {
    libm::floor(fraction * total as f64 + 1e-9) as usize
}

/// One future segment over the prediction horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "camelCase"))]
pub struct FutureSegment {
    pub action: usize,
    /// Share of the horizon; the shares of an instance sum to 1.
    pub rel_duration: f64,
}

/// Observed prefix and ground-truth future of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalInstance {
    pub observed: Video,
    /// Ground truth over the horizon, run-length encoded.
    pub future: Vec<FutureSegment>,
    /// Per-frame ground truth over the horizon.
    pub horizon_labels: Vec<usize>,
    pub horizon: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl EvalInstance {
    pub fn future_actions(&self) -> Vec<usize> {
        self.future.iter().map(|s| s.action).collect()
    }

    pub fn future_durations(&self) -> Vec<f64> {
        self.future.iter().map(|s| s.rel_duration).collect()
    }

    /// Observed frame range `[0, n)` and horizon range `[n, n + h)`.
    pub fn windows(&self) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let n = self.observed.len();
        (0..n, n..n + self.horizon)
    }
}

/// Observes the first `floor(alpha·T)` frames and predicts the following
/// `floor(beta·T)`. The first future segment is the remainder of the
/// action straddling the boundary.
pub fn make_eval_instance(video: &Video, alpha: f64, beta: f64) -> Result<EvalInstance> {
    let t = video.len();
    if t < MIN_EVAL_FRAMES {
        return Err(Error::Data(format!(
            "video has {t} frames; at least {MIN_EVAL_FRAMES} are needed"
        )));
    }
    let valid = |f: f64| f > 0.0 && f <= 1.0;
    if !valid(alpha) || !valid(beta) || alpha + beta > 1.0 + 1e-9 {
        return Err(Error::Contract(format!(
            "need alpha, beta in (0, 1] with alpha + beta <= 1, got {alpha}, {beta}"
        )));
    }
    let observed = split_index(alpha, t);
    let horizon = split_index(beta, t);
    if observed == 0 || horizon == 0 || observed + horizon > t {
        return Err(Error::Contract(format!(
            "split of {t} frames gives observed {observed}, horizon {horizon}"
        )));
    }
    let horizon_labels = video.labels[observed..observed + horizon].to_vec();
    let future = segments_of(&horizon_labels)
        .into_iter()
        .map(|s| FutureSegment {
            action: s.action,
            rel_duration: s.len as f64 / horizon as f64,
        })
        .collect();
    Ok(EvalInstance {
        observed: video.window(0, observed)?,
        future,
        horizon_labels,
        horizon,
        alpha,
        beta,
    })
}

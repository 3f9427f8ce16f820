//! Markov action grammars: video sampling and exact enumeration of the
//! futures that can follow an observed prefix.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::autodiff::Tensor;
use crate::dataio::{FutureSegment, Segment, Video};
use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Order-1 Markov grammar over `C` actions.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "camelCase", deny_unknown_fields))]
pub struct GrammarSpec {
    pub actions: Vec<String>,
    pub start_dist: Vec<f64>,
    /// `C × (C+1)`; column `C` is the probability of ending the video.
    pub transitions: Vec<Vec<f64>>,
    /// Inclusive `(min, max)` segment length in frames, per action.
    pub duration_range: Vec<(usize, usize)>,
    pub max_video_len: usize,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Grammar(format!("{what} has entries outside [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Grammar(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl GrammarSpec {
    pub fn num_classes(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.actions.len();
        if c == 0 {
            return Err(Error::Grammar("grammar has no actions".into()));
        }
        if self.start_dist.len() != c || self.transitions.len() != c || self.duration_range.len() != c {
            return Err(Error::Grammar(format!(
                "{c} actions but startDist/transitions/durationRange have {}/{}/{} entries",
                self.start_dist.len(),
                self.transitions.len(),
                self.duration_range.len()
            )));
        }
        check_distribution("startDist", &self.start_dist)?;
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != c + 1 {
                return Err(Error::Grammar(format!(
                    "transition row {i} has {} entries, expected {}",
                    row.len(),
                    c + 1
                )));
            }
            check_distribution(&format!("transition row {i}"), row)?;
            if row[i] != 0.0 {
                return Err(Error::Grammar(format!("action {i} transitions to itself")));
            }
        }
        for (i, &(lo, hi)) in self.duration_range.iter().enumerate() {
            if lo < 1 || hi < lo {
                return Err(Error::Grammar(format!("bad duration range ({lo}, {hi}) for action {i}")));
            }
        }
        if self.max_video_len == 0 {
            return Err(Error::Grammar("maxVideoLen must be positive".into()));
        }
        Ok(())
    }

    fn midpoint(&self, a: usize) -> f64 {
        let (lo, hi) = self.duration_range[a];
        (lo + hi) as f64 / 2.0
    }

    /// Expected remaining frames of action `a` after `elapsed` frames,
    /// assuming its length is uniform over the range and exceeds `elapsed`.
    /// Zero when `elapsed` already reaches the maximum.
    fn remaining(&self, a: usize, elapsed: usize) -> f64 {
        let (lo, hi) = self.duration_range[a];
        if elapsed >= hi {
            return 0.0;
        }
        let lo = lo.max(elapsed + 1);
        (lo + hi) as f64 / 2.0 - elapsed as f64
    }
}

/// Fixed per-class feature centres plus isotropic Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureModel {
    /// `C × D`.
    centres: Tensor,
    noise_std: f64,
}

pub const DEFAULT_FEATURE_DIM: usize = 16;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

impl FeatureModel {
    /// Centres are drawn once from a standard normal with `seed`.
    pub fn new(num_classes: usize, dim: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if num_classes == 0 || dim == 0 || !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "feature model needs classes, dim > 0 and noise >= 0 (got {num_classes}, {dim}, {noise_std})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..num_classes * dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Ok(FeatureModel {
            centres: Tensor::new(alloc::vec![num_classes, dim], data)?,
            noise_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.centres.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.centres.shape()[0]
    }

    pub fn centres(&self) -> &Tensor {
        &self.centres
    }

    /// `T × D` features for `labels`.
    pub fn features<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<Tensor> {
        let d = self.dim();
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::Config(format!("{e}")))?;
        let mut data = Vec::with_capacity(labels.len() * d);
        for &a in labels {
            if a >= self.num_classes() {
                return Err(Error::Data(format!("label {a} outside {} classes", self.num_classes())));
            }
            for &c in self.centres.row(a) {
                data.push(c + noise.sample(rng));
            }
        }
        Tensor::new(alloc::vec![labels.len(), d], data)
    }
}

fn weighted(p: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p).map_err(|e| Error::Grammar(format!("{e}")))
}

/// Label sequence of one video: a start action, then Markov transitions
/// until the end column is drawn or `maxVideoLen` frames are filled.
pub fn sample_labels<R: Rng + ?Sized>(grammar: &GrammarSpec, rng: &mut R) -> Result<Vec<usize>> {
    grammar.validate()?;
    let c = grammar.num_classes();
    let rows = grammar
        .transitions
        .iter()
        .map(|r| weighted(r))
        .collect::<Result<Vec<_>>>()?;
    let mut a = weighted(&grammar.start_dist)?.sample(rng);
    let mut labels = Vec::new();
    loop {
        let (lo, hi) = grammar.duration_range[a];
        let n = rng.random_range(lo..=hi).min(grammar.max_video_len - labels.len());
        labels.extend(core::iter::repeat_n(a, n));
        if labels.len() >= grammar.max_video_len {
            break;
        }
        let next = rows[a].sample(rng);
        if next == c {
            break;
        }
        a = next;
    }
    Ok(labels)
}

/// Samples one video with features; deterministic per `seed`.
pub fn sample_video(grammar: &GrammarSpec, features: &FeatureModel, seed: u64) -> Result<Video> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = sample_labels(grammar, &mut rng)?;
    let f = features.features(&labels, &mut rng)?;
    Video::new(labels, f)
}

/// One possible future within the horizon.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FutureEntry {
    pub segments: Vec<FutureSegment>,
    pub probability: f64,
}

impl FutureEntry {
    pub fn actions(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.action).collect()
    }
}

/// All futures of an observed prefix with their exact probabilities.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "camelCase"))]
pub struct FutureDistribution {
    /// Most probable first; ties in lexicographic action order.
    pub entries: Vec<FutureEntry>,
    /// Mass of branches cut off by the depth bound.
    pub truncation_mass: f64,
}

impl FutureDistribution {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum::<f64>() + self.truncation_mass
    }

    /// Probability of each action sequence.
    pub fn by_actions(&self) -> BTreeMap<Vec<usize>, f64> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.actions()).or_insert(0.0) += e.probability;
        }
        m
    }
}

/// Where the grammar stands when observation stops.
#[derive(Clone, Copy, Debug)]
struct State {
    action: usize,
    /// Expected frames the current action still runs.
    remaining: f64,
}

fn current_state(grammar: &GrammarSpec, observed: &[Segment]) -> Result<State> {
    let last = observed
        .last()
        .ok_or_else(|| Error::Contract("no observed segments".into()))?;
    if last.action >= grammar.num_classes() {
        return Err(Error::Contract(format!("observed action {} not in grammar", last.action)));
    }
    Ok(State {
        action: last.action,
        remaining: grammar.remaining(last.action, last.len),
    })
}

/// Piece of a future path: action and expected frames inside the horizon.
type Piece = (usize, f64);

fn finish(pieces: &[Piece]) -> Vec<FutureSegment> {
    let covered: f64 = pieces.iter().map(|p| p.1).sum();
    pieces
        .iter()
        .map(|&(action, frames)| FutureSegment {
            action,
            rel_duration: frames / covered,
        })
        .collect()
}

/// Enumerates every continuation of the observed segments within
/// `horizon` frames, using midpoint durations.
///
/// The current action first runs for its expected remaining time; then
/// every transition is expanded. A path ends when it covers the horizon
/// or the grammar ends the video, in which case durations are relative to
/// the frames it covers. Paths needing more than `max_depth` segments are
/// folded into `truncation_mass`.
pub fn enumerate_futures(
    grammar: &GrammarSpec,
    observed: &[Segment],
    horizon: usize,
    max_depth: usize,
) -> Result<FutureDistribution> {
    grammar.validate()?;
    if horizon == 0 {
        return Err(Error::Contract("horizon must be positive".into()));
    }
    let state = current_state(grammar, observed)?;
    let h = horizon as f64;
    let mut out = FutureDistribution {
        entries: Vec::new(),
        truncation_mass: 0.0,
    };
    let mut pieces = Vec::new();
    if state.remaining > 0.0 {
        pieces.push((state.action, state.remaining.min(h)));
    }
    expand(grammar, state.action, &mut pieces, 1.0, h, max_depth, &mut out);
    out.entries.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.actions().cmp(&b.actions()))
    });
    Ok(out)
}

fn expand(
    grammar: &GrammarSpec,
    current: usize,
    pieces: &mut Vec<Piece>,
    prob: f64,
    horizon: f64,
    max_depth: usize,
    out: &mut FutureDistribution,
) {
    let covered: f64 = pieces.iter().map(|p| p.1).sum();
    if covered >= horizon {
        out.entries.push(FutureEntry {
            segments: finish(pieces),
            probability: prob,
        });
        return;
    }
    if pieces.len() >= max_depth {
        out.truncation_mass += prob;
        return;
    }
    let c = grammar.num_classes();
    for (next, &p) in grammar.transitions[current].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        if next == c {
            if pieces.is_empty() {
                // ended exactly at the boundary: nothing left to predict
                out.truncation_mass += prob * p;
            } else {
                out.entries.push(FutureEntry {
                    segments: finish(pieces),
                    probability: prob * p,
                });
            }
            continue;
        }
        pieces.push((next, grammar.midpoint(next).min(horizon - covered)));
        expand(grammar, next, pieces, prob * p, horizon, max_depth, out);
        pieces.pop();
    }
}

/// Samples one future action sequence with the same duration model as
/// [`enumerate_futures`]. Returns `None` for paths the enumeration would
/// count as truncated.
pub fn sample_future<R: Rng + ?Sized>(
    grammar: &GrammarSpec,
    observed: &[Segment],
    horizon: usize,
    max_depth: usize,
    rng: &mut R,
) -> Result<Option<Vec<usize>>> {
    let state = current_state(grammar, observed)?;
    let c = grammar.num_classes();
    let h = horizon as f64;
    let mut actions = Vec::new();
    let mut covered = 0.0;
    if state.remaining > 0.0 {
        actions.push(state.action);
        covered += state.remaining;
    }
    let mut a = state.action;
    while covered < h {
        if actions.len() >= max_depth {
            return Ok(None);
        }
        let next = weighted(&grammar.transitions[a])?.sample(rng);
        if next == c {
            return Ok((!actions.is_empty()).then_some(actions));
        }
        actions.push(next);
        covered += grammar.midpoint(next);
        a = next;
    }
    Ok(Some(actions))
}

/// The `k` most probable futures.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTopK<'a> {
    pub entries: Vec<&'a FutureEntry>,
    /// Fewer than `k` futures exist.
    pub exhausted: bool,
}

pub fn oracle_top_k(dist: &FutureDistribution, k: usize) -> Result<OracleTopK<'_>> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    Ok(OracleTopK {
        entries: dist.entries.iter().take(k).collect(),
        exhausted: dist.entries.len() < k,
    })
}

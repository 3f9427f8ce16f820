use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{RestartMode, TrainConfig};
use super::model::TrainedModel;
use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::choicetable::{masked_action_loss, similarity_penalty, total_loss, LossParts, LossValues, RlnMask};
use crate::crnn::{
    encoder_recognition_loss, thread_action_loss, upper_level_loss, Crnn, Decisions, ModelDims, Teacher,
};
use crate::dataio::{make_eval_instance, EvalInstance, Video};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nn::{time_loss, AdamState};
use crate::seed::derive_seed;

/// Mean loss components of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub teacher_forcing: f64,
    pub loss: LossValues,
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: TrainedModel,
    pub curve: Vec<EpochLog>,
    /// Metrics on the held-out videos, if any were held out.
    pub validation: Option<MetricsReport>,
    pub seed: u64,
}

impl RunResult {
    /// Score used to pick among restarts.
    pub fn selection_score(&self) -> f64 {
        self.validation.as_ref().map_or(f64::NEG_INFINITY, |r| r.acc(1))
    }
}

/// All runs of a multi-restart training and the chosen one.
#[derive(Clone, Debug)]
pub struct MultiRunResult {
    pub runs: Vec<RunResult>,
    pub best: usize,
}

impl MultiRunResult {
    pub fn best(&self) -> &RunResult {
        &self.runs[self.best]
    }

    pub fn into_best(mut self) -> RunResult {
        self.runs.swap_remove(self.best)
    }
}

/// Builds evaluation instances, skipping videos too short to split.
pub fn make_instances(videos: &[Video], alpha: f64, beta: f64) -> Result<Vec<EvalInstance>> {
    let mut out = Vec::with_capacity(videos.len());
    let mut skipped = 0;
    for v in videos {
        match make_eval_instance(v, alpha, beta) {
            Ok(i) => out.push(i),
            Err(Error::Data(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} videos too short for the observe/predict split");
    }
    Ok(out)
}

/// Deterministic split into (train, validation) video indices.
pub fn holdout(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    let n_val = if count >= 2 { libm::floor(count as f64 * fraction) as usize } else { 0 };
    if n_val == 0 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)));
    let mut val = idx.split_off(count - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Tensors and targets of one training sample.
struct Sample<'a> {
    inst: &'a EvalInstance,
    future: Vec<usize>,
    durations: Vec<f64>,
}

fn model_dims(config: &TrainConfig, num_classes: usize, feature_dim: usize) -> Result<ModelDims> {
    if config.feature_dim != 0 && config.feature_dim != feature_dim {
        return Err(Error::Config(format!(
            "feature_dim = {} but the data has {feature_dim}",
            config.feature_dim
        )));
    }
    Ok(ModelDims {
        num_classes,
        feature_dim,
        hidden_lower: config.hidden_lower,
        hidden_upper: config.hidden_upper,
        embed_dim: config.embed_dim,
        threads: config.threads,
    })
}

/// Global L2 norm clipping in place; returns the norm before clipping.
fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = libm::sqrt(
        grads
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>(),
    );
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Per-component values and context attached to numeric failures.
fn diagnose(epoch: usize, sample: usize, lr: f64, parts: &[(&str, Option<f64>)], cause: &Error) -> Error {
    let mut s = format!(" lr={lr:e}");
    for (name, v) in parts {
        match v {
            Some(v) => s.push_str(&format!(" {name}={v}")),
            None => s.push_str(&format!(" {name}=?")),
        }
    }
    Error::NonFinite(format!("epoch {epoch}, sample {sample}:{s}; {cause}"))
}

struct Trainer<'c> {
    config: &'c TrainConfig,
    model: Crnn,
    store: ParamStore,
    adam: AdamState,
    rng: ChaCha8Rng,
    max_decode_len: usize,
}

impl Trainer<'_> {
    /// Forward pass, losses and one Adam step on a single sample.
    fn step(&mut self, sample: &Sample<'_>, epoch: usize, index: usize) -> Result<LossValues> {
        let c = self.config;
        let k = self.model.dims.threads;
        let eos = self.model.dims.eos();
        let gt = &sample.future;
        let steps = self.max_decode_len.max(gt.len() + 1);
        let p_force = c.teacher_forcing_at(epoch);
        // one forcing pattern for all threads keeps identical decoders identical
        let force: Vec<bool> = (0..steps).map(|_| self.rng.random_bool(p_force)).collect();
        let mask = RlnMask::sample(k, steps, c.phi, &mut self.rng)?;

        let mut known: Vec<(&str, Option<f64>)> = Vec::new();
        let result = (|| -> Result<(LossValues, Vec<Option<Tensor>>)> {
            let mut g = Graph::with_params(&self.store);
            let mut dec = Decisions::record();
            let enc = self.model.encode(&mut g, sample.inst.observed.features(), &mut dec)?;
            let teacher = Teacher {
                targets: gt,
                force: &force,
            };
            let mut threads = Vec::with_capacity(k);
            for t in 0..k {
                threads.push(self.model.decode_thread(&mut g, t, &enc, self.max_decode_len, Some(teacher), &mut dec)?);
            }
            let recognition = encoder_recognition_loss(&mut g, &enc, sample.inst.observed.labels())?;
            known.push(("recognition", Some(g.scalar(recognition)?)));
            let mut per_thread = Vec::with_capacity(k);
            let mut durs = Vec::with_capacity(k);
            for th in &threads {
                per_thread.push(thread_action_loss(&mut g, th, gt, eos)?);
                durs.push(th.normalized_durations(&mut g, gt.len())?);
            }
            let action = masked_action_loss(&mut g, &per_thread, &mask, gt.len() + 1)?;
            known.push(("action", Some(g.scalar(action)?)));
            let time = time_loss(&mut g, &durs, &sample.durations)?.value;
            known.push(("time", Some(g.scalar(time)?)));
            let similarity = similarity_penalty(&mut g, &threads, c.lambda)?;
            known.push(("similarity", Some(g.scalar(similarity)?)));
            let upper = if c.upper_supervision {
                upper_level_loss(&mut g, &enc, sample.inst.observed.labels(), &threads)?
            } else {
                None
            };
            let parts = LossParts {
                recognition,
                action,
                time,
                similarity,
                upper,
            };
            let total = total_loss(&mut g, &parts)?;
            let values = parts.values(&g, total)?;
            let grads = g.backward(total)?.into_param_grads(self.store.len());
            Ok((values, grads))
        })();
        let (values, mut grads) = match result {
            Ok(v) => v,
            Err(e @ (Error::NonFinite(_) | Error::Domain(_))) => return Err(diagnose(epoch + 1, index, c.lr_at(epoch), &known, &e)),
            Err(e) => return Err(e),
        };
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            let e = Error::NonFinite("gradient".into());
            return Err(diagnose(epoch + 1, index, c.lr_at(epoch), &known, &e));
        }
        clip_gradients(&mut grads, c.clip_norm);
        self.adam.update(&mut self.store, &grads, c.lr_at(epoch));
        if !self.store.all_finite() {
            let e = Error::NonFinite("parameters after update".into());
            return Err(diagnose(epoch + 1, index, c.lr_at(epoch), &known, &e));
        }
        Ok(values)
    }
}

fn mean_values(acc: &LossValues, n: usize) -> LossValues {
    let d = n.max(1) as f64;
    LossValues {
        total: acc.total / d,
        recognition: acc.recognition / d,
        action: acc.action / d,
        time: acc.time / d,
        similarity: acc.similarity / d,
        upper: acc.upper / d,
    }
}

fn add_values(acc: &mut LossValues, v: &LossValues) {
    acc.total += v.total;
    acc.recognition += v.recognition;
    acc.action += v.action;
    acc.time += v.time;
    acc.similarity += v.similarity;
    acc.upper += v.upper;
}

/// Decode cap: `factor` times the longest training future, at least 1.
pub fn max_decode_len(train: &[EvalInstance], factor: f64) -> usize {
    let longest = train.iter().map(|i| i.future.len()).max().unwrap_or(1);
    (libm::ceil(longest as f64 * factor) as usize).max(1)
}

/// Trains on prepared instances. With `start`, training continues from its
/// parameters instead of a fresh draw.
pub fn train_instances(
    config: &TrainConfig,
    train: &[EvalInstance],
    validation: &[EvalInstance],
    num_classes: usize,
    seed: u64,
    start: Option<&TrainedModel>,
) -> Result<RunResult> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Data("training set is empty".into()))?;
    if let Some(bad) = train.iter().flat_map(|i| i.observed.labels().iter().chain(&i.horizon_labels)).find(|&&a| a >= num_classes) {
        return Err(Error::Data(format!("label {bad} outside {num_classes} classes")));
    }
    let dims = model_dims(config, num_classes, first.observed.feature_dim())?;
    let (store, model, max_len) = match start {
        Some(m) => {
            if m.model.dims != dims || m.model.levels != config.levels {
                return Err(Error::Config("starting model does not match the configuration".into()));
            }
            (m.store.clone(), m.model.clone(), m.max_decode_len)
        }
        None => {
            let mut store = ParamStore::new();
            let model = Crnn::init(&mut store, dims, config.levels, config.decoder_init, derive_seed(seed, 1))?;
            (store, model, max_decode_len(train, config.max_decode_factor))
        }
    };
    let samples: Vec<Sample<'_>> = train
        .iter()
        .map(|inst| Sample {
            inst,
            future: inst.future_actions(),
            durations: inst.future_durations(),
        })
        .collect();
    let mut t = Trainer {
        config,
        adam: AdamState::new(&store),
        model,
        store,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2)),
        max_decode_len: max_len,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut t.rng);
        let mut acc = LossValues::default();
        for &i in &order {
            let v = t.step(&samples[i], epoch, i)?;
            add_values(&mut acc, &v);
        }
        let log = EpochLog {
            epoch: epoch + 1,
            lr: config.lr_at(epoch),
            teacher_forcing: config.teacher_forcing_at(epoch),
            loss: mean_values(&acc, samples.len()),
        };
        log::debug!("epoch {} loss {:.5}", log.epoch, log.loss.total);
        curve.push(log);
    }
    let model = TrainedModel {
        store: t.store,
        model: t.model,
        max_decode_len: t.max_decode_len,
    };
    let validation = if validation.is_empty() {
        None
    } else {
        Some(model.evaluate(validation, config.alpha, config.beta)?.0)
    };
    Ok(RunResult {
        model,
        curve,
        validation,
        seed,
    })
}

/// One training run on `videos` with the validation hold-out of `config`.
pub fn train_one(config: &TrainConfig, videos: &[Video], num_classes: usize, seed: u64) -> Result<RunResult> {
    let (train, val) = split_instances(config, videos)?;
    train_instances(config, &train, &val, num_classes, seed, None)
}

/// Instances for the training and validation parts of `videos`.
pub fn split_instances(config: &TrainConfig, videos: &[Video]) -> Result<(Vec<EvalInstance>, Vec<EvalInstance>)> {
    let (tr, va) = holdout(videos.len(), config.validation_fraction, config.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| videos[i].clone()).collect::<Vec<_>>();
    Ok((
        make_instances(&pick(&tr), config.alpha, config.beta)?,
        make_instances(&pick(&va), config.alpha, config.beta)?,
    ))
}

/// Seed of restart `r`; restart 0 uses the configured seed itself.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, 100 + r as u64)
    }
}

/// Index of the run with the highest selection score; ties go to the
/// earliest run.
pub fn select_best(runs: &[RunResult]) -> usize {
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.selection_score() > runs[best].selection_score() {
            best = i;
        }
    }
    best
}

/// `config.restarts` runs combined per `config.restart_mode`.
pub fn train_multi_restart(config: &TrainConfig, videos: &[Video], num_classes: usize) -> Result<MultiRunResult> {
    config.validate()?;
    let (train, val) = split_instances(config, videos)?;
    let mut runs: Vec<RunResult> = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let seed = restart_seed(config.seed, r);
        let start = match config.restart_mode {
            RestartMode::Sequential => runs.last().map(|p| &p.model),
            RestartMode::Best => None,
        };
        let run = train_instances(config, &train, &val, num_classes, seed, start)?;
        log::info!("restart {r} (seed {seed}): selection score {:.4}", run.selection_score());
        runs.push(run);
    }
    let best = match config.restart_mode {
        RestartMode::Best => select_best(&runs),
        RestartMode::Sequential => runs.len() - 1,
    };
    Ok(MultiRunResult { runs, best })
}

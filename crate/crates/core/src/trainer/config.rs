use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::crnn::{DecoderInit, Levels};
use crate::error::{Error, Result};

/// How repeated training runs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestartMode {
    /// Independent runs; the one with the best validation accuracy@1 wins.
    Best,
    /// Each run continues from the previous run's parameters; the last wins.
    Sequential,
}

/// Every training and evaluation knob, addressable as `key=value`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight inside the similarity penalty.
    pub lambda: f64,
    /// Keep probability of each action-loss term.
    pub phi: f64,
    pub threads: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub restarts: usize,
    pub restart_mode: RestartMode,
    pub alpha: f64,
    pub beta: f64,
    pub hidden_lower: usize,
    pub hidden_upper: usize,
    pub embed_dim: usize,
    /// 0 takes the dimension from the data.
    pub feature_dim: usize,
    pub seed: u64,
    /// Initial probability of feeding the ground truth back into a decoder.
    pub teacher_forcing: f64,
    /// Trailing epochs over which teacher forcing decays linearly to 0.
    pub teacher_anneal_epochs: usize,
    /// Cross entropy on the upper-level heads.
    pub upper_supervision: bool,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub decoder_init: DecoderInit,
    pub levels: Levels,
    /// Share of training videos held out for restart selection.
    pub validation_fraction: f64,
    /// Decode cap as a multiple of the longest training future.
    pub max_decode_factor: f64,
    /// Keep every n-th frame when loading data.
    pub downsample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            phi: 0.9,
            threads: 10,
            lr: 0.001,
            lr_decay: 0.8,
            lr_decay_every: 20,
            epochs: 80,
            restarts: 3,
            restart_mode: RestartMode::Best,
            alpha: 0.3,
            beta: 0.5,
            hidden_lower: 64,
            hidden_upper: 64,
            embed_dim: 32,
            feature_dim: 0,
            seed: 0,
            teacher_forcing: 0.5,
            teacher_anneal_epochs: 20,
            upper_supervision: true,
            clip_norm: 5.0,
            decoder_init: DecoderInit::Distinct,
            levels: Levels::Collaborative,
            validation_fraction: 0.1,
            max_decode_factor: 2.0,
            downsample: 1,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "phi",
    "threads",
    "lr",
    "lr_decay",
    "lr_decay_every",
    "epochs",
    "restarts",
    "restart_mode",
    "alpha",
    "beta",
    "hidden_lower",
    "hidden_upper",
    "embed_dim",
    "feature_dim",
    "seed",
    "teacher_forcing",
    "teacher_anneal_epochs",
    "upper_supervision",
    "clip_norm",
    "decoder_init",
    "levels",
    "validation_fraction",
    "max_decode_factor",
    "downsample",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn levels_name(l: Levels) -> &'static str {
    match l {
        Levels::Collaborative => "collaborative",
        Levels::Single => "single",
    }
}

fn init_name(d: DecoderInit) -> &'static str {
    match d {
        DecoderInit::Shared => "shared",
        DecoderInit::Distinct => "distinct",
    }
}

pub fn parse_levels(v: &str) -> Result<Levels> {
    match v.trim() {
        "collaborative" => Ok(Levels::Collaborative),
        "single" => Ok(Levels::Single),
        other => Err(Error::Config(format!("levels must be collaborative or single, got {other:?}"))),
    }
}

impl TrainConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lambda" => self.lambda = parse(key, v)?,
            "phi" => self.phi = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "restarts" => self.restarts = parse(key, v)?,
            "restart_mode" => {
                self.restart_mode = match v {
                    "best" => RestartMode::Best,
                    "sequential" => RestartMode::Sequential,
                    _ => return Err(Error::Config(format!("restart_mode must be best or sequential, got {v:?}"))),
                }
            }
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "hidden_lower" => self.hidden_lower = parse(key, v)?,
            "hidden_upper" => self.hidden_upper = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "feature_dim" => self.feature_dim = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "teacher_forcing" => self.teacher_forcing = parse(key, v)?,
            "teacher_anneal_epochs" => self.teacher_anneal_epochs = parse(key, v)?,
            "upper_supervision" => self.upper_supervision = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "decoder_init" => {
                self.decoder_init = match v {
                    "shared" => DecoderInit::Shared,
                    "distinct" => DecoderInit::Distinct,
                    _ => return Err(Error::Config(format!("decoder_init must be shared or distinct, got {v:?}"))),
                }
            }
            "levels" => self.levels = parse_levels(v)?,
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "max_decode_factor" => self.max_decode_factor = parse(key, v)?,
            "downsample" => self.downsample = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax [`TrainConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda" => self.lambda.to_string(),
            "phi" => self.phi.to_string(),
            "threads" => self.threads.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "epochs" => self.epochs.to_string(),
            "restarts" => self.restarts.to_string(),
            "restart_mode" => match self.restart_mode {
                RestartMode::Best => "best".into(),
                RestartMode::Sequential => "sequential".into(),
            },
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "hidden_lower" => self.hidden_lower.to_string(),
            "hidden_upper" => self.hidden_upper.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "seed" => self.seed.to_string(),
            "teacher_forcing" => self.teacher_forcing.to_string(),
            "teacher_anneal_epochs" => self.teacher_anneal_epochs.to_string(),
            "upper_supervision" => self.upper_supervision.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "decoder_init" => init_name(self.decoder_init).into(),
            "levels" => levels_name(self.levels).into(),
            "validation_fraction" => self.validation_fraction.to_string(),
            "max_decode_factor" => self.max_decode_factor.to_string(),
            "downsample" => self.downsample.to_string(),
            _ => return None,
        })
    }

    /// All fields as `(key, value)` pairs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        CONFIG_KEYS
            .iter()
            .map(|&k| (k, self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid {what}")));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda (need >= 0)");
        }
        if !unit(self.phi) {
            return bad("phi (need [0, 1])");
        }
        if self.threads == 0 {
            return bad("threads (need >= 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr (need > 0)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("learning-rate schedule");
        }
        if self.restarts == 0 {
            return bad("restarts (need >= 1)");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha + self.beta <= 1.0 + 1e-9) {
            return bad("alpha/beta (need positive with alpha + beta <= 1)");
        }
        if self.hidden_lower == 0 || self.hidden_upper == 0 || self.embed_dim == 0 {
            return bad("model dimensions");
        }
        if !unit(self.teacher_forcing) {
            return bad("teacher_forcing (need [0, 1])");
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return bad("clip_norm (need >= 0)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction (need [0, 1))");
        }
        if !(self.max_decode_factor >= 1.0 && self.max_decode_factor.is_finite()) {
            return bad("max_decode_factor (need >= 1)");
        }
        if self.downsample == 0 {
            return bad("downsample (need >= 1)");
        }
        Ok(())
    }

    /// Learning rate used during 0-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let factor = (0..epoch / self.lr_decay_every).fold(1.0, |f, _| f * self.lr_decay);
        self.lr * factor
    }

    /// Teacher-forcing probability during 0-based epoch `epoch`: constant,
    /// then linear to 0 over the trailing anneal window.
    pub fn teacher_forcing_at(&self, epoch: usize) -> f64 {
        let window = self.teacher_anneal_epochs.min(self.epochs);
        let start = self.epochs - window;
        if window == 0 || epoch < start {
            return self.teacher_forcing;
        }
        let left = self.epochs.saturating_sub(epoch + 1);
        self.teacher_forcing * left as f64 / window as f64
    }
}

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::choicetable::ChoiceTable;
use crate::crnn::{Crnn, Decisions, Levels};
use crate::dataio::{EvalInstance, Video};
use crate::error::{Error, Result};
use crate::metrics::{expand_thread, MetricsAccumulator, MetricsReport};
use crate::nn::checkpoint;

const META_CLASSES: &str = "meta.num_classes";
const META_THREADS: &str = "meta.threads";
const META_MAX_LEN: &str = "meta.max_decode_len";
const META_LEVELS: &str = "meta.levels";

/// Parameters plus everything needed to run inference.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub store: ParamStore,
    pub model: Crnn,
    /// Decoder step cap at inference.
    pub max_decode_len: usize,
}

/// Choice table of one observed prefix plus the action used to pad
/// threads that predict nothing.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub table: ChoiceTable,
    /// Last recognized action of the observed part.
    pub fallback: usize,
}

impl Prediction {
    /// Per-frame labels of every thread over `horizon` frames, in rank order.
    pub fn ranked_frames(&self, horizon: usize) -> Vec<Vec<usize>> {
        self.table
            .ranked()
            .into_iter()
            .map(|t| expand_thread(&t.actions, &t.rel_durations, horizon, self.fallback))
            .collect()
    }
}

impl TrainedModel {
    pub fn num_classes(&self) -> usize {
        self.model.dims.num_classes
    }

    pub fn threads(&self) -> usize {
        self.model.dims.threads
    }

    /// Free-running decode of all threads after observing `observed`.
    pub fn predict(&self, observed: &Video) -> Result<Prediction> {
        let mut g = Graph::with_params(&self.store);
        let mut dec = Decisions::record();
        let enc = self.model.encode(&mut g, observed.features(), &mut dec)?;
        let mut threads = Vec::with_capacity(self.threads());
        for k in 0..self.threads() {
            threads.push(self.model.decode_thread(&mut g, k, &enc, self.max_decode_len, None, &mut dec)?);
        }
        let table = ChoiceTable::from_threads(&mut g, &threads)?;
        let eos = self.model.dims.eos();
        // an EOS classification says nothing about the ongoing action
        let fallback = enc
            .frame_actions
            .iter()
            .rev()
            .copied()
            .find(|&a| a != eos)
            .unwrap_or(0);
        Ok(Prediction { table, fallback })
    }

    /// Metrics over `instances` plus each instance's prediction.
    pub fn evaluate(&self, instances: &[EvalInstance], alpha: f64, beta: f64) -> Result<(MetricsReport, Vec<Prediction>)> {
        let mut acc = MetricsAccumulator::new(self.threads(), self.num_classes())?;
        let mut preds = Vec::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if inst.observed.feature_dim() != self.model.dims.feature_dim {
                return Err(Error::Data(format!(
                    "instance {i} has feature dimension {}, model expects {}",
                    inst.observed.feature_dim(),
                    self.model.dims.feature_dim
                )));
            }
            if let Some(&bad) = inst.horizon_labels.iter().find(|&&a| a >= self.num_classes()) {
                return Err(Error::Data(format!(
                    "instance {i} has label {bad}; model knows {} classes",
                    self.num_classes()
                )));
            }
            let p = self.predict(&inst.observed)?;
            acc.add(&p.ranked_frames(inst.horizon), &inst.horizon_labels)?;
            preds.push(p);
        }
        Ok((acc.report(alpha, beta), preds))
    }

    /// Binary checkpoint: all parameters followed by metadata records.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let level = match self.model.levels {
            Levels::Collaborative => 0.0,
            Levels::Single => 1.0,
        };
        let meta = [
            (META_CLASSES, Tensor::scalar(self.num_classes() as f64)),
            (META_THREADS, Tensor::scalar(self.threads() as f64)),
            (META_MAX_LEN, Tensor::scalar(self.max_decode_len as f64)),
            (META_LEVELS, Tensor::scalar(level)),
        ];
        checkpoint::encode(
            self.store
                .iter()
                .map(|(_, n, t)| (n, t))
                .chain(meta.iter().map(|(n, t)| (*n, t))),
        )
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let records = checkpoint::decode(bytes)?;
        let mut store = ParamStore::new();
        let mut meta: Vec<(String, f64)> = Vec::new();
        for (name, t) in records {
            if name.starts_with("meta.") {
                meta.push((name, t.item()?));
            } else {
                store.add(name, t);
            }
        }
        let get = |key: &str| -> Result<usize> {
            let v = meta
                .iter()
                .find(|(n, _)| n == key)
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            if v < 0.0 || libm::trunc(v) != v || v > u32::MAX as f64 {
                return Err(Error::Checkpoint(format!("{key} = {v} is not a count")));
            }
            Ok(v as usize)
        };
        let levels = match get(META_LEVELS)? {
            0 => Levels::Collaborative,
            1 => Levels::Single,
            v => return Err(Error::Checkpoint(format!("unknown levels code {v}"))),
        };
        let model = Crnn::from_store(&store, levels)?;
        if model.dims.num_classes != get(META_CLASSES)? || model.dims.threads != get(META_THREADS)? {
            return Err(Error::Checkpoint("metadata disagrees with parameter shapes".into()));
        }
        let max_decode_len = get(META_MAX_LEN)?;
        if max_decode_len == 0 {
            return Err(Error::Checkpoint("max_decode_len is 0".into()));
        }
        Ok(TrainedModel {
            store,
            model,
            max_decode_len,
        })
    }
}

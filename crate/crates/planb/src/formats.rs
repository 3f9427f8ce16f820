//! Text formats written and read by the command line.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use planb_core::choicetable::LossValues;
use planb_core::metrics::{choice_f1, MetricsReport};
use planb_core::trainer::{EpochLog, Prediction};

use crate::dataset::{write_file, Vocab};
use crate::error::{Error, Result};

/// One line of a long-format metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MetricsRow {
    pub dataset: String,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub acc_at_k: f64,
    pub mpta_at_k: f64,
    pub choice_f1: f64,
}

pub const METRICS_HEADER: &[&str] = &["dataset", "alpha", "beta", "k", "accAtK", "mptaAtK", "choiceF1"];

pub fn metrics_rows(dataset: &str, report: &MetricsReport) -> Vec<MetricsRow> {
    (1..=report.threads)
        .map(|k| MetricsRow {
            dataset: dataset.to_string(),
            alpha: report.alpha,
            beta: report.beta,
            k,
            acc_at_k: report.acc(k),
            mpta_at_k: report.mpta(k),
            choice_f1: report.f1(k),
        })
        .collect()
}

/// JSON form of an evaluation: every report with its per-class table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsFile {
    pub dataset: String,
    pub reports: Vec<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EpochRow {
    pub epoch: usize,
    pub total: f64,
    pub recognition: f64,
    pub action: f64,
    pub time: f64,
    pub similarity: f64,
    pub upper: f64,
    pub lr: f64,
    pub teacher_forcing: f64,
}

impl From<&EpochLog> for EpochRow {
    fn from(e: &EpochLog) -> Self {
        let LossValues {
            total,
            recognition,
            action,
            time,
            similarity,
            upper,
        } = e.loss;
        EpochRow {
            epoch: e.epoch,
            total,
            recognition,
            action,
            time,
            similarity,
            upper,
            lr: e.lr,
            teacher_forcing: e.teacher_forcing,
        }
    }
}

/// Summary of one restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RestartRow {
    pub run: usize,
    pub seed: u64,
    pub final_loss: f64,
    /// Empty when nothing was held out.
    pub validation_acc_at1: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AblationRow {
    pub variant: String,
    pub threads: usize,
    pub lambda: f64,
    pub phi: f64,
    pub levels: String,
    pub acc_at1: f64,
    pub acc_at3: f64,
    pub choice_f1_at3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepRow {
    pub threads: usize,
    pub acc_at1: f64,
    pub acc_at_k: f64,
    pub mpta_at_k: f64,
    pub choice_f1_at_k: f64,
}

pub fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    write_file(path, csv_string(rows, header)?.as_bytes())
}

/// Parses CSV text whose header must equal `header` exactly.
pub fn parse_csv<T: DeserializeOwned>(path: &Path, text: &str, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let found = r.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    if !found.iter().eq(header.iter().copied()) {
        return Err(Error::parse(
            path,
            1,
            format!("columns {:?} do not match the expected {header:?}", found.iter().collect::<Vec<_>>()),
        ));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(path, i + 2, e.to_string())))
        .collect()
}

pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(path, &text, header)
}

pub const EPOCH_HEADER: &[&str] = &[
    "epoch",
    "total",
    "recognition",
    "action",
    "time",
    "similarity",
    "upper",
    "lr",
    "teacherForcing",
];
pub const RESTART_HEADER: &[&str] = &["run", "seed", "finalLoss", "validationAccAt1", "selected"];
pub const ABLATION_HEADER: &[&str] = &["variant", "threads", "lambda", "phi", "levels", "accAt1", "accAt3", "choiceF1At3"];
pub const SWEEP_HEADER: &[&str] = &["threads", "accAt1", "accAtK", "mptaAtK", "choiceF1AtK"];

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Ranked threads of one video: `rank TAB logprob TAB action:reldur;...`.
pub fn prediction_text(p: &Prediction, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for (rank, t) in p.table.ranked().into_iter().enumerate() {
        let segs = t
            .actions
            .iter()
            .zip(&t.rel_durations)
            .map(|(&a, &d)| {
                let name = vocab
                    .name(a)
                    .ok_or_else(|| Error::Format(format!("predicted action {a} outside the vocabulary")))?;
                Ok(format!("{name}:{d}"))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push_str(&format!("{}\t{}\t{}\n", rank + 1, t.log_prob, segs.join(";")));
    }
    Ok(out)
}

/// One parsed line of a prediction dump.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadLine {
    pub rank: usize,
    pub log_prob: f64,
    pub segments: Vec<(String, f64)>,
}

pub fn parse_prediction_text(path: &Path, text: &str) -> Result<Vec<ThreadLine>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = |m: &str| Error::parse(path, n + 1, m);
        let mut cols = line.split('\t');
        let (Some(rank), Some(lp), Some(segs), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad("expected three tab-separated columns"));
        };
        let segments = if segs.is_empty() {
            Vec::new()
        } else {
            segs.split(';')
                .map(|s| {
                    let (a, d) = s.rsplit_once(':').ok_or_else(|| bad("segment is not action:duration"))?;
                    Ok((a.to_string(), d.parse().map_err(|_| bad("bad duration"))?))
                })
                .collect::<Result<Vec<_>>>()?
        };
        out.push(ThreadLine {
            rank: rank.parse().map_err(|_| bad("bad rank"))?,
            log_prob: lp.parse().map_err(|_| bad("bad log probability"))?,
            segments,
        });
    }
    Ok(out)
}

/// Merges metrics tables into one long-format table sorted by dataset,
/// alpha, beta and k; a (dataset, alpha, beta, k) key may appear once.
pub fn merge_metrics(tables: Vec<Vec<MetricsRow>>) -> Result<Vec<MetricsRow>> {
    let mut rows: Vec<MetricsRow> = tables.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.dataset
            .cmp(&b.dataset)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.beta.total_cmp(&b.beta))
            .then(a.k.cmp(&b.k))
    });
    for w in rows.windows(2) {
        if w[0].dataset == w[1].dataset && w[0].alpha == w[1].alpha && w[0].beta == w[1].beta && w[0].k == w[1].k {
            return Err(Error::Format(format!(
                "duplicate rows for dataset {} alpha {} beta {} k {}",
                w[0].dataset, w[0].alpha, w[0].beta, w[0].k
            )));
        }
    }
    for r in &rows {
        if (choice_f1(r.mpta_at_k, r.acc_at_k) - r.choice_f1).abs() > 1e-12 {
            return Err(Error::Format(format!(
                "choiceF1 {} of {} alpha {} beta {} k {} disagrees with its accuracy columns",
                r.choice_f1, r.dataset, r.alpha, r.beta, r.k
            )));
        }
    }
    Ok(rows)
}

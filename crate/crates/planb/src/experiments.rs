//! Multi-run experiments: parallel restarts, the component ablation and
//! the thread-count sweep.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use planb_core::crnn::Levels;
use planb_core::dataio::{EvalInstance, Video};
use planb_core::metrics::MetricsReport;
use planb_core::trainer::{
    restart_seed, select_best, split_instances, train_instances, train_multi_restart, MultiRunResult, RestartMode,
    TrainConfig,
};

use crate::error::{Error, Result};
use crate::formats::{AblationRow, SweepRow};

/// Applies `f` to every item on up to `jobs` threads; output order follows
/// the input.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = jobs.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Same result as [`train_multi_restart`], with independent restarts
/// spread over `jobs` threads.
pub fn train_restarts(config: &TrainConfig, videos: &[Video], num_classes: usize, jobs: usize) -> Result<MultiRunResult> {
    if config.restart_mode == RestartMode::Sequential || jobs <= 1 || config.restarts == 1 {
        return Ok(train_multi_restart(config, videos, num_classes)?);
    }
    config.validate()?;
    let (train, val) = split_instances(config, videos)?;
    let seeds: Vec<u64> = (0..config.restarts).map(|r| restart_seed(config.seed, r)).collect();
    let runs = par_map(&seeds, jobs, |&s| train_instances(config, &train, &val, num_classes, s, None))
        .into_iter()
        .collect::<planb_core::Result<Vec<_>>>()?;
    let best = select_best(&runs);
    Ok(MultiRunResult { runs, best })
}

/// Cumulative component variants, weakest first.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let few = base.threads.min(3);
    let baseline = TrainConfig {
        threads: few,
        lambda: 0.0,
        phi: 1.0,
        levels: Levels::Single,
        ..base.clone()
    };
    let diverse = TrainConfig {
        lambda: base.lambda,
        phi: base.phi,
        ..baseline.clone()
    };
    let many = TrainConfig {
        threads: base.threads,
        ..diverse.clone()
    };
    let crnn = TrainConfig {
        levels: Levels::Collaborative,
        ..many.clone()
    };
    vec![
        ("multi-decoder", baseline),
        ("+sp-rln", diverse),
        ("+k-threads", many),
        ("+crnn", crnn),
    ]
}

fn levels_name(l: Levels) -> &'static str {
    match l {
        Levels::Collaborative => "collaborative",
        Levels::Single => "single",
    }
}

/// Trains with restarts and evaluates the selected model on `test`.
pub fn train_and_evaluate(
    config: &TrainConfig,
    train: &[Video],
    test: &[EvalInstance],
    num_classes: usize,
    jobs: usize,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Usage("no evaluation videos".into()));
    }
    let multi = train_restarts(config, train, num_classes, jobs)?;
    Ok(multi.best().model.evaluate(test, config.alpha, config.beta)?.0)
}

pub fn ablate(
    base: &TrainConfig,
    train: &[Video],
    test: &[EvalInstance],
    num_classes: usize,
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    let variants = ablation_variants(base);
    let reports = par_map(&variants, jobs, |(_, c)| train_and_evaluate(c, train, test, num_classes, 1));
    variants
        .iter()
        .zip(reports)
        .map(|((name, c), r)| {
            let r = r?;
            let k3 = c.threads.min(3);
            Ok(AblationRow {
                variant: name.to_string(),
                threads: c.threads,
                lambda: c.lambda,
                phi: c.phi,
                levels: levels_name(c.levels).into(),
                acc_at1: r.acc(1),
                acc_at3: r.acc(k3),
                choice_f1_at3: r.f1(k3),
            })
        })
        .collect()
}

pub fn sweep_threads(
    base: &TrainConfig,
    ks: &[usize],
    train: &[Video],
    test: &[EvalInstance],
    num_classes: usize,
    jobs: usize,
) -> Result<Vec<(SweepRow, MetricsReport)>> {
    if ks.is_empty() {
        return Err(Error::Usage("thread list is empty".into()));
    }
    let reports = par_map(ks, jobs, |&k| {
        let c = TrainConfig {
            threads: k,
            ..base.clone()
        };
        train_and_evaluate(&c, train, test, num_classes, 1)
    });
    ks.iter()
        .zip(reports)
        .map(|(&k, r)| {
            let r = r?;
            let row = SweepRow {
                threads: k,
                acc_at1: r.acc(1),
                acc_at_k: r.acc(k),
                mpta_at_k: r.mpta(k),
                choice_f1_at_k: r.f1(k),
            };
            Ok((row, r))
        })
        .collect()
}

//! Training loop, restarts, inference and evaluation.

mod config;
mod model;
mod train;

pub use config::{parse_levels, RestartMode, TrainConfig, CONFIG_KEYS};
pub use model::{Prediction, TrainedModel};
pub use train::{
    holdout, make_instances, max_decode_len, restart_seed, select_best, split_instances, train_instances,
    train_multi_restart, train_one, EpochLog, MultiRunResult, RunResult,
};

//! Layers, losses and the optimizer, all built on [`crate::autodiff`].

mod adam;
pub mod checkpoint;
mod layers;
mod loss;

pub use adam::{AdamState, BETA1, BETA2, EPS_HAT};
pub use layers::{xavier_uniform, Embedding, Gru, Linear};
pub use loss::{cross_entropy, time_loss, TimeLoss};

//! Two-level collaborative encoder/decoder over frame features.
//!
//! The lower encoder GRU classifies every frame; the upper GRU only steps
//! when that classification changes. Decoders emit one `(action, raw
//! duration)` pair per step until they predict EOS.

mod decisions;
mod forward;
mod losses;
mod model;

pub use decisions::Decisions;
pub use forward::{DecodeStep, DecodedThread, EncoderOutput, Teacher};
pub use losses::{encoder_recognition_loss, scored_positions, thread_action_loss, upper_level_loss};
pub use model::{Crnn, Decoder, DecoderInit, Encoder, Levels, ModelDims};

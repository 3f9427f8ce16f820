#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod choicetable;
pub mod crnn;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

//! Dataset files, report formats, experiments and the `planb` command line
//! on top of [`planb_core`].

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod formats;

pub use error::{Error, Result};

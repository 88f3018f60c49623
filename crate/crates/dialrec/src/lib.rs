//! File formats, checkpoints, configuration and the experiment harness on
//! top of `dialrec-core`.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use error::{HarnessError, Result};

//! Runtime companion to `mrhs-core`: threaded executor, in-process halo
//! exchange, field snapshots, run configs, bandwidth benchmarks, roofline
//! reports and the `mrhs` command line.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod halo;
pub mod report;
pub mod snapshot;
pub mod stream;
pub mod threads;

pub use error::{Error, Result};

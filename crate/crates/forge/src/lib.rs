//! File formats, parallel drivers, benchmarks and widefield tooling built on
//! [`odmr_core`].

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod infer;
pub mod simulate;
pub mod svg;
pub mod train;
pub mod widefield;

pub use error::{ForgeError, Result};

//! File formats, dataset manifests, run configuration and the stage commands
//! behind the `spnet` binary.

pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use manifest::{Manifest, Record, Split};

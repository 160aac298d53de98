//! Command-line pipeline for part-configuration discovery.
//!
//! The binary wires the library stages together; everything here is plain
//! library code so integration tests can drive stages in-process. Stages
//! communicate exclusively through files in a working directory:
//!
//! ```text
//! synth        → manifest.jsonl, features.pcfv, gt.json
//! discover     → clusters.json
//! mine-configs → configs.json, estimates.json
//! hardneg      → hardneg.json
//! train        → model.json
//! evaluate     → report.json
//! oracle       → oracle.json
//! ```

pub mod config;
pub mod error;
pub mod stages;
pub mod training;

pub use config::{NegativeSource, PipelineConfig};
pub use error::{CliError, Result};

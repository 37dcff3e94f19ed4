//! Pipeline wiring for the `iasplat` command: configuration, synthetic
//! scenes, on-disk layout and the `synth`, `init`, `train`, `eval` and
//! `render` commands.

pub mod cli;
pub mod config;
pub mod error;
pub mod layout;
pub mod pipeline;
pub mod synth;

pub use config::{PipelineConfig, Profile};
pub use error::CliError;

//! Configuration, orchestration and output for `glbranch` runs.

pub mod config;
pub mod pipeline;
pub mod plots;

use std::path::PathBuf;

pub use config::{FieldError, Geometry, Mode, RunConfig, TGrid, Tolerances};
pub use pipeline::{run, RunManifest};
pub use plots::emit_plots;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("invalid configuration: {}", join_fields(.0))]
    Invalid(Vec<FieldError>),
}

fn join_fields(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] glbranch_core::Error),

    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot serialize manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("cannot start worker pool: {0}")]
    Workers(#[from] rayon::ThreadPoolBuildError),
}

//! Experiment driver: configuration, the identify / fair-train / evaluate
//! pipeline, ablations, sweeps and result files.

pub mod commands;
pub mod config;
pub mod persist;
pub mod pipeline;
pub mod stats;

use std::path::PathBuf;

pub use config::{DatasetSource, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fairglite_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} runs failed")]
    Partial { failed: usize, total: usize },
    #[error("run panicked: {0}")]
    Panic(String),
}

impl CliError {
    /// 2 config, 3 data, 4 partial failure, 5 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use fairglite_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidArgument(_)) => 2,
            CliError::Core(E::Divergence { .. }) => 5,
            CliError::Core(
                E::Parse { .. }
                | E::Io { .. }
                | E::Data(_)
                | E::EmptyGroup(_)
                | E::DegenerateSupervision(_)
                | E::Shape { .. }
                | E::UndefinedMetric(_),
            ) => 3,
            CliError::Partial { .. } => 4,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

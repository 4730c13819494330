//! Command implementations behind the `completeness` binary.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod filter;
pub mod report;

use completeness_core::Error as CoreError;
use thiserror::Error;

pub use commands::{run, Args, Command};
pub use config::RunConfig;
pub use report::Report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at row {row}, column `{column}`: {message}")]
    Schema { row: usize, column: String, message: String },
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn root_cause(e: &CoreError) -> &CoreError {
    match e {
        CoreError::FoldTraining { source, .. } => root_cause(source),
        other => other,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::Config { .. } => 4,
            CliError::Io(_) => 1,
            CliError::Core(e) => match root_cause(e) {
                CoreError::DegenerateBenchmark { .. } => 3,
                CoreError::ArityMismatch { .. }
                | CoreError::MixedFeatureKind { .. }
                | CoreError::OutcomeKind { .. }
                | CoreError::EmptyDataset
                | CoreError::LengthMismatch { .. } => 2,
                CoreError::InvalidFolds { .. }
                | CoreError::SubsampleTooSmall { .. }
                | CoreError::InvalidFractions(_)
                | CoreError::InvalidDomain { .. }
                | CoreError::Config(_)
                | CoreError::TooFewSubjects { .. } => 4,
                _ => 1,
            },
        }
    }
}

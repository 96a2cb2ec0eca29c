//! Batch runner for `monospde` studies: config parsing, regime validation,
//! seeded execution, artifact persistence and verdict reports.

pub mod config;
pub mod regime;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use regime::{validate, RegimeReport};
pub use report::{report, ReportSummary};
pub use run::{run, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("mixed config digests: {0}")]
    MixedDigest(String),
    #[error(transparent)]
    Core(#[from] monospde::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

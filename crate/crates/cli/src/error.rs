use std::path::Path;
use std::process::ExitCode;

use lrselect_core::corpus::CorpusError;
use lrselect_core::gmm::GmmError;
use lrselect_core::scoring::ScoreError;
use lrselect_core::selection::SelectionError;
use lrselect_core::synthbench::SynthError;
use thiserror::Error;

/// A failed command, classified by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing or malformed inputs.
    #[error("{0}")]
    Usage(String),
    /// Failure writing an output.
    #[error("{0}")]
    Io(String),
    /// The numerics could not proceed on otherwise valid input.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn write_failed(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GmmError> for CliError {
    fn from(e: GmmError) -> Self {
        match e {
            GmmError::TooFewFrames { .. } | GmmError::DegenerateData { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::TooFewScores { .. } | SelectionError::DegenerateScores => {
                CliError::Numerical(e.to_string())
            }
            SelectionError::Gmm(g) => g.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

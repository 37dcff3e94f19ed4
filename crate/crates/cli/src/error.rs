use std::path::PathBuf;

use iasplat::geometry::GeometryError;
use iasplat::handles::HandleError;
use iasplat::trainer::TrainError;
use iasplat::IoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("scene initialization: {0}")]
    Geometry(#[from] GeometryError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
}

impl CliError {
    /// Machine-parseable category printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::ConfigParse { .. } | CliError::Config(_) => "config",
            CliError::Spec(_) => "spec",
            CliError::Precondition(_) => "precondition",
            CliError::Io(IoError::Missing(_)) => "missing-input",
            CliError::Io(IoError::Parse { .. } | IoError::Image { .. }) => "format",
            CliError::Io(IoError::Io { .. }) => "io",
            CliError::Geometry(GeometryError::Handle { source, .. }) => match source {
                HandleError::Refine(e) => e.category(),
                HandleError::Failed(_) => "handle-failed",
            },
            CliError::Geometry(_) => "geometry",
            CliError::Train(TrainError::Io(IoError::Missing(_))) => "missing-input",
            CliError::Train(e) => e.category(),
        }
    }
}

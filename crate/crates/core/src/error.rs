use std::path::{Path, PathBuf};

use thiserror::Error;

/// File-format and filesystem failures shared by every text/PNG codec.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: image codec: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing file: {0}")]
    Missing(PathBuf),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return IoError::Missing(path.to_path_buf());
        }
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn image(path: &Path, err: image::ImageError) -> Self {
        if let image::ImageError::IoError(e) = err {
            return Self::io(path, e);
        }
        IoError::Image {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input data: bad PLY layout, manifest violations, mask/image
    /// dimension mismatches.
    #[error("format error: {0}")]
    Format(String),

    /// Invalid station pose: non-orthonormal rotation, station inside scene
    /// geometry, unknown station id.
    #[error("pose error: {0}")]
    Pose(String),

    /// Out-of-range or inconsistent parameter / configuration value.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation errors (exit code 2) versus runtime errors (exit code 1).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("beat grid has no usable downbeats")]
    NoBeats,
    #[error("bar segment of {seconds:.4} s is shorter than 100 ms")]
    SegmentTooShort { seconds: f64 },
    #[error("stretch ratio {ratio:.3} outside [0.5, 2.0]")]
    ExtremeStretch { ratio: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{n_clips} clips cannot cover {n_classes} classes")]
    TooFewClips { n_clips: usize, n_classes: usize },
    #[error("training diverged at step {step}; restored state from step {restored_step}")]
    TrainingDiverged { step: usize, restored_step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Format { what: what.into(), detail: detail.to_string() }
    }

    /// True for errors caused by user input or configuration rather than by
    /// a failure during computation.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::TrainingDiverged { .. } | Error::Numerical(_) | Error::Io { .. })
    }
}

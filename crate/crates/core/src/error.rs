use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error in {op}: entry {index} has value {value}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("invalid axis {axis} for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this tape; call zero_grad before running it again")]
    BackwardTwice,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("degenerate supervision: {0}")]
    DegenerateSupervision(String),
    #[error("training diverged at epoch {epoch}: {what}")]
    Divergence { epoch: usize, what: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

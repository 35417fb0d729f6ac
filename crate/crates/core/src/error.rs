use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data failed a validity check (non-finite samples, bad scores, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("shape error: {op}: got {got:?}, expected {expected:?}")]
    Shape {
        op: &'static str,
        got: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("weight transfer error: {0}")]
    Transfer(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, got: &[usize], expected: &[usize]) -> Self {
        Error::Shape {
            op,
            got: got.to_vec(),
            expected: expected.to_vec(),
        }
    }
}

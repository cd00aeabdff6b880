use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient for weight `{0}`")]
    NonFiniteGradient(String),

    #[error("slice {slice}: CG pixel outside WG at (row {row}, col {col})")]
    MaskViolation { slice: usize, row: usize, col: usize },

    #[error("{path}: unexpected mask label {label} at (row {row}, col {col})")]
    BadMaskLabel {
        path: PathBuf,
        label: u8,
        row: usize,
        col: usize,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("leakage: test patient {patient} of dataset {dataset} is in the training folds of round {round}")]
    Leakage {
        dataset: String,
        patient: String,
        round: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

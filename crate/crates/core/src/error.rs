use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate sample id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },

    #[error("manifest {0:?} contains no samples")]
    EmptyManifest(String),

    #[error("invalid sample {id:?}: {message}")]
    InvalidSample { id: String, message: String },

    #[error("invalid annotation for {id:?}: {message}")]
    InvalidAnnotation { id: String, message: String },

    #[error("unknown task category {0:?}")]
    UnknownCategory(String),

    #[error("no category source for dataset {0:?}")]
    NoCategorySource(String),

    #[error("sample {id:?} is missing {what}")]
    MissingAnnotation { id: String, what: &'static str },

    #[error("metric {0} is undefined for this dataset")]
    UndefinedMetric(&'static str),

    #[error("value {value} for {name} is outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("image for sample {id:?} could not be decoded: {message}")]
    Image { id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("dataset {dataset:?}: axis {axis} cannot be computed: {cause}")]
    MissingAxis {
        dataset: String,
        axis: &'static str,
        cause: String,
    },

    #[error("malformed ranked subsets: {0}")]
    MalformedRanking(String),

    #[error("sample {id:?} needs a judge verdict but none is annotated")]
    JudgeRequired { id: String },

    #[error("no caption-category datasets available for the alignment stages")]
    NoCaptionData,

    #[error("sample {id:?} exceeds pack limits on its own ({tokens} tokens, {images} images)")]
    OversizeSample { id: String, tokens: u64, images: u32 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

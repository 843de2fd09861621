use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::SegmentLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("segment label {label:?} at row {row} violates canonical ordering")]
    LabelOrderViolation { row: usize, label: SegmentLabel },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroRow { row: usize },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("document has no rows")]
    EmptyDocument,

    #[error("input has no rows")]
    EmptyInput,

    #[error("query has no rows")]
    EmptyQuery,

    #[error("sequence has no query-labeled rows")]
    NoQueryTokens,

    #[error("missing segment: {0}")]
    MissingSegment(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid fragment: {0}")]
    InvalidFragment(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("index is empty")]
    EmptyIndex,

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("checksum mismatch in {file}")]
    ChecksumMismatch { file: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    VersionUnsupported { found: u32, supported: u32 },

    #[error("corrupt embedding file: {0}")]
    CorruptEmbeddings(String),

    #[error("missing embedding for {0}")]
    MissingEmbedding(String),

    #[error("unknown tool {0:?}")]
    UnknownTool(String),

    #[error("malformed tool call: {0}")]
    MalformedToolCall(String),

    #[error("page {0:?} has no paragraphs")]
    NoParagraphs(String),

    #[error("unknown root category {0:?}")]
    UnknownRoot(String),

    #[error("graph edge references unknown node {0:?}")]
    UnknownNode(String),

    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },

    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },

    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),

    #[error("no candidates to predict from")]
    EmptyCandidates,

    #[error("k must be >= 1, got {0}")]
    InvalidK(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

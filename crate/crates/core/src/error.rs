use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FairlensError> = std::result::Result<T, E>;

/// Every failure the metric library can report.
///
/// Variants split into two families: input problems (bad files, broken
/// invariants, missing joins) and metrics that are mathematically undefined
/// on otherwise valid input. [`FairlensError::is_undefined_metric`] tells
/// them apart so front ends can map them to different exit codes.
#[derive(Debug, Error)]
pub enum FairlensError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId { path: String, line: usize, id: String },

    #[error("{path}:{line}: ranking `{query_id}` repeats image `{image_id}`")]
    DuplicateInRanking {
        path: String,
        line: usize,
        query_id: String,
        image_id: String,
    },

    #[error("{path}:{line}: {field} = {value} is not a probability in [0, 1]")]
    ProbabilityOutOfRange {
        path: String,
        line: usize,
        field: String,
        value: f64,
    },

    #[error("text contains the reserved token [GENDER]: {0:?}")]
    ReservedToken(String),

    #[error("gender lexicon lists words as both male and female: {}", .0.join(", "))]
    OverlappingLexicon(Vec<String>),

    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),

    #[error("reference caption list is empty")]
    EmptyReferences,

    #[error("no gold gender label for image `{0}`")]
    MissingGoldLabel(String),

    #[error("image `{0}` is not in the gender catalog")]
    MissingCatalogEntry(String),

    #[error("prediction/reference join failed: {0}")]
    JoinMismatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("classifier training needs both genders; only {0} present")]
    DegenerateTraining(String),

    #[error("corpus too small to stratify: {0}")]
    TooSmallToStratify(String),

    #[error("word list overlaps the gender lexicon: {}", .0.join(", "))]
    WordListOverlap(Vec<String>),

    #[error("anchor `{0}` never occurs in the co-occurrence table")]
    UnknownAnchor(String),

    #[error("co-occurrence tables were built over different word lists")]
    WordListMismatch,

    #[error("hierarchy has a cycle: {}", .0.join(" -> "))]
    CyclicHierarchy(Vec<String>),

    #[error("surface form `{surface}` maps to both `{first}` and `{second}`")]
    AmbiguousSurfaceForm {
        surface: String,
        first: String,
        second: String,
    },

    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("`{0}` is not a canonical object of the hierarchy")]
    UnknownObject(String),

    #[error("image `{0}` has neither annotations nor reference captions")]
    NoGroundTruth(String),

    #[error("query `{0}` has an empty relevant set")]
    InvalidQuery(String),

    #[error("invalid desired distribution: {0}")]
    InvalidDesired(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl FairlensError {
    /// True when the input was valid but the requested quantity has no value
    /// (zero denominators and similar).
    pub fn is_undefined_metric(&self) -> bool {
        matches!(self, FairlensError::UndefinedMetric(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FairlensError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn undefined(what: impl Into<String>) -> Self {
        FairlensError::UndefinedMetric(what.into())
    }
}

//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KgdgError>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, bad config, violated preconditions.
    Validation,
    /// Malformed or inconsistent input data.
    Data,
    /// An internal invariant fired (e.g. the leakage guard).
    Internal,
}

#[derive(Debug, Error)]
pub enum KgdgError {
    #[error("negative probability {value} at grade {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probability vector sums to {sum}, outside the renormalization tolerance")]
    SumOutOfTolerance { sum: f64 },
    #[error("expected {expected} values, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("invalid grade {0}; grades are 0..=4")]
    InvalidGrade(i64),
    #[error("unknown lesion kind `{0}`")]
    UnknownLesionKind(String),
    #[error("bounding box out of bounds: {0}")]
    BoxOutOfBounds(String),
    #[error("invalid domain name `{0}`")]
    InvalidDomain(String),
    #[error("invalid feature vector: {0}")]
    InvalidFeatures(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("bad cell at line {line}, column `{column}`: {reason}")]
    NonNumericCell { line: usize, column: String, reason: String },
    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),
    #[error("unknown image id `{0}`")]
    UnknownImageId(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt model artifact: {0}")]
    CorruptArtifact(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training data contains a single grade ({0})")]
    SingleClassTrain(u8),
    #[error("grade {grade} has {count} examples, fewer than {folds} folds")]
    TooFewPerClass { grade: u8, count: usize, folds: usize },
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("no grade has both positive and negative examples")]
    NoQualifyingClass,
    #[error("domain `{0}` has no neural probability table")]
    MissingProbabilityTable(String),
    #[error("unknown reference `{0}`")]
    UnknownReference(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("leakage guard: image `{0}` appears in training and evaluation data")]
    LeakageDetected(String),
}

impl KgdgError {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        use KgdgError::*;
        match self {
            NegativeProbability { .. } => "negative_probability",
            SumOutOfTolerance { .. } => "sum_out_of_tolerance",
            WrongArity { .. } => "wrong_arity",
            InvalidGrade(_) => "invalid_grade",
            UnknownLesionKind(_) => "unknown_lesion_kind",
            BoxOutOfBounds(_) => "box_out_of_bounds",
            InvalidDomain(_) => "invalid_domain",
            InvalidFeatures(_) => "invalid_features",
            MissingColumn(_) => "missing_column",
            NonNumericCell { .. } => "non_numeric_cell",
            DuplicateImageId(_) => "duplicate_image_id",
            UnknownImageId(_) => "unknown_image_id",
            SchemaMismatch(_) => "schema_mismatch",
            CorruptArtifact(_) => "corrupt_artifact",
            Malformed(_) => "malformed_input",
            Io { .. } => "io_error",
            SingleClassTrain(_) => "single_class_train",
            TooFewPerClass { .. } => "too_few_per_class",
            EmptyEvaluation => "empty_evaluation",
            NoQualifyingClass => "no_qualifying_class",
            MissingProbabilityTable(_) => "missing_probability_table",
            UnknownReference(_) => "unknown_reference",
            InvalidConfig(_) => "invalid_config",
            LeakageDetected(_) => "leakage_detected",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use KgdgError::*;
        match self {
            InvalidConfig(_) | UnknownReference(_) | TooFewPerClass { .. } => ErrorClass::Validation,
            LeakageDetected(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        KgdgError::Io { path: path.display().to_string(), source }
    }
}

use alloc::string::String;

use crate::dataset::Space;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: &'static str, reason: String },

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("feature id {id} is outside the embedding vocabulary of {vocab} rows")]
    OutOfVocabulary { id: u32, vocab: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("forward trace does not match the parameters it is applied to: {0}")]
    TraceMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch belongs to the {found} space, expected {expected}")]
    SpaceMismatch { expected: Space, found: Space },

    #[error("dataset contract violated: {0}")]
    DatasetContract(String),

    #[error("AUC is undefined with {positives} positives and {negatives} negatives")]
    UndefinedAuc { positives: usize, negatives: usize },

    #[error("mean ground-truth probability is zero")]
    ZeroGroundTruth,

    #[error("dataset for the {0} space is empty")]
    EmptyDataset(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

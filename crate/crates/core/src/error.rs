use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dialogue {id}: {reason}")]
    InvalidDialogue { id: String, reason: String },

    #[error("invalid question {id}: {reason}")]
    InvalidQuestion { id: String, reason: String },

    #[error("question {question}: answer text {expected:?} does not match dialogue words {found:?}")]
    SpanTextMismatch {
        question: String,
        expected: String,
        found: String,
    },

    #[error("sequence of {len} tokens exceeds the maximum of {max}; utterances {dropped:?} would be dropped")]
    SequenceTooLong {
        len: usize,
        max: usize,
        dropped: Vec<usize>,
    },

    #[error("answer span in utterance {utterance} cannot be mapped onto the token sequence")]
    UnmappableSpan { utterance: usize },

    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: empty token interval")]
    EmptyInterval { op: &'static str },

    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),

    #[error("unknown parameter {0}")]
    UnknownParameter(String),

    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("loss function is not deterministic: {first} then {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("no embedding record for sequence {0}")]
    MissingEmbedding(String),

    #[error("embedding record for sequence {id} has shape {found:?}, expected {expected:?}")]
    EmbeddingShape {
        id: String,
        expected: [usize; 2],
        found: [usize; 2],
    },

    #[error("corpus contains no questions")]
    EmptyCorpus,

    #[error("key set is empty")]
    EmptyKeySet,

    #[error("graph node {node} maps outside the context")]
    NodeOutOfContext { node: usize },

    #[error("prediction for unknown question {0}")]
    UnknownQuestion(String),

    #[error("no prediction for question {0}")]
    MissingPrediction(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

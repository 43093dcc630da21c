use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum ColoError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("rank error: {0}")]
    Rank(String),

    #[error("empty pool: mask selects no positions")]
    EmptyPool,

    #[error("degenerate vector: zero norm input to cosine similarity")]
    DegenerateVector,

    #[error("vocabulary error: token id {id} out of range for vocabulary of {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("length error: {what} has length {len}, maximum is {max}")]
    Length { what: &'static str, len: usize, max: usize },

    #[error("lexicon error: {0}")]
    Lexicon(String),

    #[error("infeasible negative: {0}")]
    InfeasibleNegative(String),

    #[error("invalid loss value: {0}")]
    InvalidLoss(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("alignment error: {candidates} candidates vs {references} references")]
    Alignment { candidates: usize, references: usize },

    #[error("numeric abort at step {step}: {detail}")]
    NumericAbort { step: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing parameter {0}")]
    MissingParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ColoError> = std::result::Result<T, E>;

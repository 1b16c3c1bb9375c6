use thiserror::Error;

pub type Result<T> = std::result::Result<T, SelexError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelexError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("not enough candidate rows for novel centers: need {needed}, have {available}")]
    NotEnoughCandidates { needed: usize, available: usize },

    #[error("known category {0} has no labeled rows")]
    EmptyKnownCategory(usize),

    #[error("known category {0} has no rows")]
    EmptyCategory(usize),

    #[error("level {level} out of range (valid: {min}..={max})")]
    LevelOutOfRange { level: usize, min: usize, max: usize },

    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

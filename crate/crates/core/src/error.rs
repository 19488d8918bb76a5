use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("insufficient studies: need {needed} usable estimates, found {found}")]
    InsufficientStudies { needed: usize, found: usize },

    #[error("subgroup has no data: {0}")]
    SubgroupHasNoData(String),

    #[error("no study reports both subgroups; the interaction is not estimable")]
    NoTwoArmStudy,

    #[error("weight on absent estimate at position {0}")]
    WeightOnAbsent(usize),

    #[error("scheme weights incompatible with contrast pooling: study `{0}` lacks a subgroup")]
    IncompatibleWeights(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("dataset failed validation ({} violation(s)): {}", .0.len(), first_violation(.0))]
    Validation(Vec<Violation>),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular system: {0}")]
    Singular(String),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|x| x.to_string()).unwrap_or_default()
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

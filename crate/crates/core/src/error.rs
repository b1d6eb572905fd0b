use thiserror::Error;

use crate::lasso::LassoPath;

pub type Result<T> = std::result::Result<T, TehError>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum TehError {
    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("cannot parse value {value:?} at data row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix decomposition failed: {0}")]
    Decomposition(String),

    #[error("fit did not converge after {iterations} iterations: {diagnostic}")]
    FitFailure {
        iterations: usize,
        diagnostic: String,
        last_coefficients: Vec<f64>,
    },

    #[error("perfect or quasi-perfect separation detected (max |coefficient| = {max_coefficient:.3e})")]
    Separation { max_coefficient: f64 },

    #[error("models are not nested: {0}")]
    Nesting(String),

    #[error("standard error of arm difference {index} is zero")]
    DegenerateVariance { index: usize },

    #[error("no covariates selected for the interaction test")]
    EmptySelection,

    #[error("substage screening selected no variables")]
    EmptyScreen,

    #[error("insufficient data: need at least {needed} observations, got {n}")]
    InsufficientData { n: usize, needed: usize },

    #[error("lasso path failed to converge at lambda index {lambda_index}")]
    PathFailure {
        lambda_index: usize,
        partial: Box<LassoPath>,
    },

    #[error("null simulation unreliable: {failures} of {reps} replicates failed")]
    NullSimUnreliable { failures: usize, reps: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TehError {
    pub fn class(&self) -> ErrorClass {
        match self {
            TehError::Config(_) => ErrorClass::Config,
            TehError::MissingColumn(_)
            | TehError::Parse { .. }
            | TehError::DegenerateDesign(_)
            | TehError::InvalidInput(_)
            | TehError::InsufficientData { .. }
            | TehError::Io(_)
            | TehError::Csv(_) => ErrorClass::Data,
            _ => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            TehError::MissingColumn(_) => "missing_column",
            TehError::Parse { .. } => "parse",
            TehError::DegenerateDesign(_) => "degenerate_design",
            TehError::InvalidInput(_) => "invalid_input",
            TehError::Decomposition(_) => "decomposition",
            TehError::FitFailure { .. } => "fit_failure",
            TehError::Separation { .. } => "separation",
            TehError::Nesting(_) => "nesting",
            TehError::DegenerateVariance { .. } => "degenerate_variance",
            TehError::EmptySelection => "empty_selection",
            TehError::EmptyScreen => "empty_screen",
            TehError::InsufficientData { .. } => "insufficient_data",
            TehError::PathFailure { .. } => "path_failure",
            TehError::NullSimUnreliable { .. } => "null_sim_unreliable",
            TehError::Config(_) => "config",
            TehError::Io(_) => "io",
            TehError::Csv(_) => "csv",
        }
    }
}

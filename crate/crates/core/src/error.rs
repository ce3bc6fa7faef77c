use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("row {row}: unknown label `{label}` for factor `{factor}`")]
    UnknownLabel {
        row: usize,
        factor: String,
        label: String,
    },

    #[error("unknown defect `{0}`")]
    UnknownDefect(String),

    #[error("continuous factor `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("LM breakdown: damped system singular at lambda_max")]
    LmBreakdown,

    #[error("all {} restarts broke down", .0.restarts.len())]
    AllRestartsFailed(Box<crate::train::TrainReport>),

    #[error("no actual positives; non-detection rate undefined")]
    NoPositives,

    #[error("zero denominator for false-positive proportion ({0})")]
    ZeroDenominator(&'static str),

    #[error("factor `{0}` is not controllable")]
    NotControllable(String),

    #[error("factor `{0}` is not used by the model")]
    FactorNotInModel(String),

    #[error("factor `{0}` has no value")]
    MissingValue(String),

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),

    #[error("factor `{factor}`: value {value} outside [{min}, {max}]")]
    OutOfRange {
        factor: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("factor `{factor}`: {message}")]
    InvalidValue { factor: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used for machine-parseable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Csv { .. } => "csv",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::UnknownDefect(_) => "unknown_defect",
            Error::ZeroVariance(_) => "zero_variance",
            Error::Split(_) => "split",
            Error::Dimension { .. } => "dimension",
            Error::Model(_) => "model",
            Error::Config(_) => "config",
            Error::LmBreakdown => "lm_breakdown",
            Error::AllRestartsFailed(_) => "all_restarts_failed",
            Error::NoPositives => "no_positives",
            Error::ZeroDenominator(_) => "zero_denominator",
            Error::NotControllable(_) => "not_controllable",
            Error::FactorNotInModel(_) => "factor_not_in_model",
            Error::MissingValue(_) => "missing_value",
            Error::UnknownFactor(_) => "unknown_factor",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InvalidValue { .. } => "invalid_value",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Factor name the error refers to, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Csv { column, .. } => Some(column),
            Error::UnknownLabel { factor, .. }
            | Error::OutOfRange { factor, .. }
            | Error::InvalidValue { factor, .. } => Some(factor),
            Error::ZeroVariance(f)
            | Error::NotControllable(f)
            | Error::FactorNotInModel(f)
            | Error::MissingValue(f)
            | Error::UnknownFactor(f) => Some(f),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

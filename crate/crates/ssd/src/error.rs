//! Error type shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SsdError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("operation requires a {expected} layer, found {found}")]
    WrongLayerClass {
        expected: &'static str,
        found: &'static str,
    },

    #[error("layer {0} has no exact-expectation evaluator")]
    UnsupportedExactEval(usize),

    #[error("non-smooth layer {0} has a noisy argument (inner stochastic oracle)")]
    NonsmoothNoisyUnsupported(usize),

    #[error("missing bound: {0}")]
    MissingBound(String),

    #[error("explicit dual row left its domain at layer {layer} row {row}")]
    DomainViolation { layer: usize, row: usize },

    #[error("missing tagged sample: layer {layer}, tag {tag}")]
    MissingSample { layer: usize, tag: usize },

    #[error("stepsize division guard tripped: {0}")]
    DivisionGuard(String),

    #[error("composition violates outer non-negativity at layer {0}")]
    MonotonicityViolation(usize),

    #[error("non-finite iterate at t={t}: {what}")]
    NonFinite { t: usize, what: &'static str },

    #[error("reference solvers disagree: {0}")]
    NoConvergenceCertificate(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SsdError> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors raised by the measurement-theory routines.
///
/// Every variant names the invariant that failed and, where one exists, the
/// residual that exceeded its tolerance.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimension overflow: {0} x {1}")]
    DimensionOverflow(usize, usize),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("NotHermitian: residual {residual:.3e}")]
    NotHermitian { residual: f64 },

    #[error("NotPositive: minimum eigenvalue {min_eigenvalue:.3e}")]
    NotPositive { min_eigenvalue: f64 },

    #[error("TraceNotOne: trace {trace:.12}")]
    TraceNotOne { trace: f64 },

    #[error("NotOrthonormal: residual {residual:.3e}")]
    NotOrthonormal { residual: f64 },

    #[error("EmptyPovm: at least one outcome is required")]
    EmptyPovm,

    #[error("NotEffect({label}): eigenvalues in [{min:.3e}, {max:.12}]")]
    NotEffect { label: String, min: f64, max: f64 },

    #[error("NotNormalized: residual {residual:.3e}")]
    NotNormalized { residual: f64 },

    #[error("ZeroEffect({label})")]
    ZeroEffect { label: String },

    #[error("DuplicateLabel({label})")]
    DuplicateLabel { label: String },

    #[error("NotTotal: residual {residual:.3e}")]
    NotTotal { residual: f64 },

    #[error("EmptyOutcome({label}): no Kraus operators given")]
    EmptyOutcome { label: String },

    #[error("NotPVM({label}): idempotence/orthogonality residual {residual:.3e}")]
    NotPvm { label: String, residual: f64 },

    #[error("NotCompatible({label}): residual {residual:.3e}")]
    NotCompatible { label: String, residual: f64 },

    #[error("NotRank1({label}): multiplicity {multiplicity}")]
    NotRank1 { label: String, multiplicity: usize },

    #[error("NotUnit({label},{k}): norm {norm:.12}")]
    NotUnit { label: String, k: usize, norm: f64 },

    #[error("NotMaximallyRefinable({label}): {reason}")]
    NotMaximallyRefinable { label: String, reason: String },

    #[error("label structure violation: {label:?} is not of the form (base,k)")]
    LabelStructure { label: String },

    #[error("UnknownLabel({label})")]
    UnknownLabel { label: String },

    #[error("ZeroProbabilityBranch({label}): probability {probability:.3e}")]
    ZeroProbabilityBranch { label: String, probability: f64 },

    #[error("NotInRange({k}): residual {residual:.3e}")]
    NotInRange { k: usize, residual: f64 },

    #[error("InsufficientK: {available} multiplicity projections, need {required}")]
    InsufficientK { available: usize, required: usize },

    #[error("IncompatibleFirst({label}): residual {residual:.3e}")]
    IncompatibleFirst { label: String, residual: f64 },

    #[error("AllZeroProbabilities: outcome probabilities sum to {total:.3e}")]
    AllZeroProbabilities { total: f64 },

    #[error("invalid measurement model: {0}")]
    InvalidModel(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

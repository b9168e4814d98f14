use thiserror::Error;

/// Errors raised by table construction, solvers and checks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid variable `{name}`: {reason}")]
    InvalidVariable { name: String, reason: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("label `{label}` is not in the alphabet of `{variable}`")]
    UnknownLabel { variable: String, label: String },

    #[error("assignment {0} does not bind every variable of the table")]
    PartialAssignment(String),

    #[error("duplicate assignment {0}")]
    DuplicateAssignment(String),

    #[error("negative probability {p} at {at}")]
    NegativeMass { at: String, p: f64 },

    #[error("total mass {total} is not within {tol:e} of 1")]
    NotNormalized { total: f64, tol: f64 },

    #[error("context {0} has zero probability")]
    ZeroMassContext(String),

    #[error("pmi undefined: P({outcome} | {context}) = 0")]
    UndefinedPmi { outcome: String, context: String },

    #[error("variable groups overlap on `{0}`")]
    OverlappingGroups(String),

    #[error("candidate puts mass {mass} on outcome {index}, outside the prior support")]
    SupportViolation { index: usize, mass: f64 },

    #[error("prior has empty support")]
    DegenerateProblem,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite {what}: {value}")]
    NonFinite { what: String, value: f64 },

    #[error("inverse temperature must be positive and finite, got {0}")]
    InvalidAlpha(f64),

    #[error("gauge shift has no entry for context {0}")]
    MissingShift(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("signal is not admissible: residual {residual:e} exceeds {tol:e}")]
    InadmissibleSignal { residual: f64, tol: f64 },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("log-normalizer is not certified finite (status: {0})")]
    NotFinite(String),

    #[error("coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("missing entry: {0}")]
    MissingEntry(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

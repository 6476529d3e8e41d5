use thiserror::Error;

use crate::config::ConfigViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("configuration key `{0}` is missing")]
    MissingKey(String),

    #[error("configuration line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("x = {x} lies on the coefficient discontinuity at {interface}")]
    OnDiscontinuity { x: f64, interface: f64 },

    #[error("element {element} has nonpositive length {length}")]
    SingularMass { element: usize, length: f64 },

    #[error("degenerate coefficient a(lambda) = {value:e} for lambda = {lambda}")]
    DegenerateCoefficient { lambda: num_complex::Complex64, value: f64 },

    #[error("a root lies on (or too close to) the contour near {near}")]
    BoundaryRoot { near: num_complex::Complex64 },

    #[error("contour sampling did not converge within {samples} samples")]
    NonConvergedSampling { samples: usize },

    #[error("root refinement did not converge after {iterations} iterations (last {last})")]
    NoConvergence { iterations: usize, last: num_complex::Complex64 },

    #[error("root refinement stalled near {near}: multiple root suspected")]
    MultipleRootSuspected { near: num_complex::Complex64 },

    #[error("system is near singular at lambda = {lambda} (condition estimate {condition:e})")]
    NearSingular { lambda: f64, condition: f64 },

    #[error("factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("dense eigensolver did not converge")]
    QrNoConvergence,

    #[error("vector is identically zero")]
    ZeroVector,

    #[error("no certified eigenpairs")]
    NoCertifiedPairs,

    #[error("energy Gram matrix Cholesky failed")]
    CholeskyFailure,

    #[error("scan has {decades:.2} converged decades, at least 2 are required")]
    InsufficientConvergedRange { decades: f64 },

    #[error("energy dropped only by a factor {factor:.3} over the fit window")]
    InsufficientDecay { factor: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn format_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

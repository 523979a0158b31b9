use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpgError {
    #[error("quadrature degree {0} is outside the supported range")]
    QuadratureDegree(usize),
    #[error("polynomial degree {0} is outside the supported range")]
    BasisDegree(usize),
    #[error("degenerate field on element {0}")]
    DegenerateField(usize),
    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
    #[error("mesh format error at line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },
    #[error("line y = {0} does not meet the element")]
    OutsideShadow(f64),
    #[error("element diameter {diam} exceeds |b| = {speed}")]
    EquivalenceRegime { diam: f64, speed: f64 },
    #[error("element has no inflow face")]
    NoInflowFace,
    #[error("local Gram matrix of cell {cell} (macro element {element}) is not positive definite")]
    LocalGram { element: usize, cell: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("iterative solver stalled at relative residual {0:e}")]
    NoConvergence(f64),
    #[error("problem has no exact solution")]
    MissingExactSolution,
    #[error("problem has inhomogeneous inflow data but no extension of it")]
    MissingExtension,
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("system too large for dense eigensolve: {0} unknowns")]
    TooLarge(usize),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DpgError>;

impl From<std::io::Error> for DpgError {
    fn from(e: std::io::Error) -> Self {
        DpgError::Io(e.to_string())
    }
}

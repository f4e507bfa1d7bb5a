use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular saddle-point matrix: {0}")]
    SingularSaddle(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank deficient block: |R[{column},{column}]| = {value:e} below tolerance {tol:e}")]
    RankDeficient { column: usize, value: f64, tol: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed ({invariant}): {detail}")]
    Validation { invariant: &'static str, detail: String },

    #[error("infeasible synthetic specification: {0}")]
    InfeasibleSpec(String),

    /// The extended Krylov space could not be enlarged at `iteration`
    /// (0 means the starting block itself was rank deficient).
    #[error("Krylov breakdown at iteration {iteration}: column {column} lost rank ({value:e} < {tol:e})")]
    Breakdown {
        iteration: usize,
        column: usize,
        value: f64,
        tol: f64,
    },

    #[error("basis mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("shift lies on the pencil spectrum: {0}")]
    SingularShift(String),

    #[error("residual {residual:e} not below tolerance after {iterations} iterations")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("singular feedback capture matrix: {0}")]
    SingularCapture(String),

    #[error("simulation diverged at step {step} (t = {time})")]
    SimulationDiverged { step: usize, time: f64 },

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("dense oracle size cap exceeded: n = {n} > {cap}")]
    SizeCapExceeded { n: usize, cap: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::SingularSaddle(_) => "SingularSaddle",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::NoConvergence(_) => "NoConvergence",
            Error::Parse(_) => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::InfeasibleSpec(_) => "InfeasibleSpec",
            Error::Breakdown { .. } => "Breakdown",
            Error::ModeMismatch(_) => "ModeMismatch",
            Error::SingularShift(_) => "SingularShift",
            Error::MaxIterations { .. } => "MaxIterations",
            Error::NoStabilizingSolution(_) => "NoStabilizingSolution",
            Error::SingularCapture(_) => "SingularCapture",
            Error::SimulationDiverged { .. } => "SimulationDiverged",
            Error::InvalidInitialState(_) => "InvalidInitialState",
            Error::SizeCapExceeded { .. } => "SizeCapExceeded",
            Error::Io(_) => "IoError",
        }
    }
}

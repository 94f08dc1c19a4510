use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("design is rank deficient at column {column}")]
    RankDeficient { column: usize },
    #[error("column {column} is collinear with the current model")]
    CollinearColumn { column: usize },
    #[error("model size {size} exceeds s0 = {s0}")]
    SizeExceeded { size: usize, s0: usize },
    #[error("illegal move: {0}")]
    IllegalMove(String),
    #[error("empty neighborhood")]
    EmptyNeighborhood,
    #[error("initial model has size {size} > s0 = {s0}")]
    InitTooLarge { size: usize, s0: usize },
    #[error("initial model is rank deficient at column {column}")]
    CollinearInit { column: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("sample covariance is singular")]
    SingularCovariance,
    #[error("q = {q} does not divide p = {p}")]
    QNotDividingP { p: usize, q: usize },
    #[error("model space has {size} models, cap is {cap}")]
    SpaceTooLarge { size: u128, cap: usize },
    #[error("chain did not mix within {horizon} steps")]
    Nonconvergent { horizon: usize },
    #[error("precondition ({condition}) violated: {detail}")]
    PreconditionViolated { condition: String, detail: String },
    #[error("bound violated at state {state}, t = {t}: tv = {tv:e} > bound = {bound:e}")]
    BoundViolated {
        state: usize,
        t: usize,
        tv: f64,
        bound: f64,
    },
    #[error("generating function diverges: restricted spectral radius {radius} >= {lambda}")]
    Divergent { radius: f64, lambda: f64 },
    #[error("split decomposition infeasible at state {state}")]
    DecompositionInfeasible { state: usize },
    #[error("Gram matrix is not positive definite")]
    GramNotPD,
    #[error("{path}: parse error at row {row}, column {col}: {msg}")]
    ParseError {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("column {column} has zero variance")]
    ZeroVarianceColumn { column: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("not enough distinct models: need {need}, have {have}")]
    InsufficientModels { need: usize, have: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

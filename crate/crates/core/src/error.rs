use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("point coincides with the projection pole")]
    PoleSingularity,
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("K is not positive: K = {value} at {point:?}")]
    Positivity { value: f64, point: [f64; 5] },
    #[error("critical point search incomplete: {diverged} of {starts} starts diverged")]
    SearchIncomplete { diverged: usize, starts: usize },
    #[error("coincident points (distance {0:e})")]
    CoincidentPoints(f64),
    #[error("point lies on the boundary (distance {0:e}); the regular part diverges")]
    BoundaryPoint(f64),
    #[error("bubble outside the asymptotic regime: {0}")]
    Regime(String),
    #[error("quadrature budget exceeded: estimate {estimate:e} after {cells} cells")]
    QuadratureBudgetExceeded { estimate: f64, cells: usize },
    #[error("too many flagged points: {l} > {l_max}")]
    TooManyFlagged { l: usize, l_max: usize },
    #[error("interaction dominated: eps[{i}][{j}] = {eps} >= {cap}")]
    InteractionDominated { i: usize, j: usize, eps: f64, cap: f64 },
    #[error("step size underflow at t = {time} (h = {step:e})")]
    StepFailure { time: f64, step: f64 },
    #[error("flagged critical point {index} is not a Morse point")]
    NonMorseFlagged { index: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value in report at {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

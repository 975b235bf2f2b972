use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. Variants are grouped by the
/// subsystem that raises them; `Error::exit_code` maps each group to a
/// distinct process exit status for the command-line runner.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    // metric
    #[error("tangent vector is zero (norm {0:e})")]
    ZeroVector(f64),
    #[error("covector is zero (norm {0:e})")]
    ZeroCovector(f64),
    #[error("point ({0}, {1}) lies outside the chart domain")]
    OutsideChart(f64, f64),
    #[error("point ({0}, {1}) is within the pole margin of a revolution chart")]
    PoleProximity(f64, f64),
    #[error("fundamental tensor is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("support-function maximizer not bracketed: {0}")]
    MaximizerNotFound(String),
    #[error("angular solve did not converge: {0}")]
    NoConvergence(String),
    #[error("vector is not unit speed: F = {0}")]
    NotUnitSpeed(f64),
    #[error("quadrature under-resolved: refinements differ by {0:e}")]
    QuadratureUnderResolved(f64),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    // integration
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),

    // orbits
    #[error("no section return within time horizon {0}")]
    NoReturn(f64),
    #[error("flow is tangent to the section (normal component {0:e})")]
    Tangency(f64),
    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("unknown orbit family: {0}")]
    UnknownFamily(String),
    #[error("unknown orbit id {0}")]
    UnknownOrbit(usize),

    // poincare
    #[error("symplectic frame is degenerate: {0}")]
    DegenerateFiber(String),
    #[error("frame pairing is singular")]
    FramePairingSingular,
    #[error("matrix is not symplectic: det = {0}")]
    NotSymplectic(f64),

    // local model
    #[error("inadmissible local model form: {0}")]
    InadmissibleForm(String),
    #[error("window too wide: [{0}, {1}] must lie inside (0, 1)")]
    WindowTooWide(f64, f64),

    // perturbation
    #[error("tube window meets a self-intersection of the geodesic")]
    SelfIntersection,
    #[error("window outside the regular set: {0}")]
    WindowOutsideRegularSet(String),
    #[error("perturbation destroys fiber convexity (bound {0:e})")]
    ConvexityLost(f64),
    #[error("time {0} is outside the perturbation window")]
    OutsideWindow(f64),
    #[error("amplitude budget exhausted: {0}")]
    BudgetExhausted(String),

    // equidistribution
    #[error("current has no orbits")]
    EmptyCurrent,

    // configuration
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error{}: {message}", position.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Validation {
        position: Option<(usize, usize)>,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl Error {
    /// Process exit status used by the runner. 0 is success, 1 is reserved
    /// for panics and argument errors.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Parse { .. } | Validation { .. } => 2,
            Io(_) => 3,
            ZeroVector(_) | ZeroCovector(_) | OutsideChart(..) | PoleProximity(..)
            | NotPositiveDefinite(_) | MaximizerNotFound(_) | NoConvergence(_)
            | NotUnitSpeed(_) | QuadratureUnderResolved(_) | InvalidMetric(_) => 10,
            StepUnderflow(_) => 11,
            NoReturn(_) | Tangency(_) | NewtonDiverged(_) | UnknownFamily(_) | UnknownOrbit(_) => 12,
            DegenerateFiber(_) | FramePairingSingular | NotSymplectic(_) => 13,
            InadmissibleForm(_) | WindowTooWide(..) => 14,
            SelfIntersection | WindowOutsideRegularSet(_) | ConvexityLost(_) | OutsideWindow(_)
            | BudgetExhausted(_) => 15,
            EmptyCurrent => 16,
            VerificationFailed(_) => 20,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

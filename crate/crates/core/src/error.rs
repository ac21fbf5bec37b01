use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("tangent shape {tangent:?} does not match input shape {input:?}")]
    TangentShape {
        input: Vec<usize>,
        tangent: Vec<usize>,
    },

    #[error("{0} is not differentiable")]
    NotDifferentiable(String),

    #[error("scalar output required, got shape {0:?}")]
    ScalarOutputRequired(Vec<usize>),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected} input columns, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("unknown parameter path `{0}`")]
    UnknownParamPath(String),

    #[error("missing equation parameter `{0}`")]
    MissingEqParam(String),

    #[error("missing coordinate `{0}`")]
    MissingCoordinate(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("grid size: {0}")]
    GridSize(String),

    #[error("stationary problem has no initial condition")]
    StationaryProblem,

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("batch size must be at least 1 and at most {0}")]
    BatchSize(usize),

    #[error("empty term: `{0}` has positive weight but no points")]
    EmptyTerm(&'static str),

    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("degenerate reference: zero norm")]
    DegenerateReference,

    #[error("expression error: {0}")]
    Expr(String),

    #[error("observation file: {0}")]
    Observations(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("no reference available for problem `{0}`")]
    NoReference(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerics during a run rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

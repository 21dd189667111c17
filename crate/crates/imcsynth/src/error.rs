use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} is not available at state {state}")]
    InvalidAction { state: usize, action: usize },
    #[error("model has {n} states, above the enumeration limit of {limit}")]
    SizeLimit { n: usize, limit: usize },
    #[error("parse error at line {line}, field `{field}`: {msg}")]
    Parse {
        line: usize,
        field: String,
        msg: String,
    },
    #[error("transition function is not total, missing (state, label) pairs: {missing:?}")]
    NotTotal { missing: Vec<(usize, Vec<String>)> },
    #[error("label set {0:?} is not in the automaton alphabet")]
    AlphabetMismatch(Vec<String>),
    #[error("reachability target is empty")]
    EmptyTarget,
    #[error("row bounds at state {state} cannot sum to one")]
    InfeasibleRow { state: usize },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cell {cell} straddles the boundary of label region `{prop}`")]
    Labeling { cell: usize, prop: String },
    #[error("rectangle has zero extent")]
    DegenerateRect,
    #[error("reach over-approximation of cell {cell} misses the image point {point:?}")]
    OracleUnsound { cell: usize, point: Vec<f64> },
    #[error("partition is not a refinement: {0}")]
    NotRefinement(String),
    #[error("policy has no input for cell {cell} at automaton state {dra_state}")]
    IncompletePolicy { cell: usize, dra_state: usize },
    #[error("input region is empty")]
    EmptyInputRegion,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidAction { .. } => "invalid-action",
            Error::SizeLimit { .. } => "size-limit",
            Error::Parse { .. } => "parse",
            Error::NotTotal { .. } => "not-total",
            Error::AlphabetMismatch(_) => "alphabet-mismatch",
            Error::EmptyTarget => "empty-target",
            Error::InfeasibleRow { .. } => "infeasible-row",
            Error::Singular(_) => "singular",
            Error::Dimension { .. } => "dimension-mismatch",
            Error::Labeling { .. } => "labeling-conformance",
            Error::DegenerateRect => "degenerate-rect",
            Error::OracleUnsound { .. } => "oracle-unsound",
            Error::NotRefinement(_) => "not-a-refinement",
            Error::IncompletePolicy { .. } => "incomplete-policy",
            Error::EmptyInputRegion => "empty-input-region",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

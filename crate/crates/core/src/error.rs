use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text. `line` is 1-based; `field` names the offending key when known.
    #[error("line {line}{}: {message}", field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
    Parse {
        line: usize,
        field: Option<String>,
        message: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("base pitch {pitch} rad is within {margin} rad of the XYZ Euler singularity")]
    EulerSingularity { pitch: f64, margin: f64 },

    #[error("unknown contact point `{0}`")]
    UnknownContact(String),

    #[error("constraint inertia matrix is singular")]
    SingularConstraintInertia,

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible bounds for {name}: min {min} > max {max}")]
    InfeasibleBounds { name: String, min: f64, max: f64 },

    #[error("Riccati weight R is not positive definite")]
    RiccatiWeight,

    #[error("t = {time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in {what} at t = {time}")]
    NonFinite { what: &'static str, time: f64 },

    #[error("solver: {0}")]
    Solver(String),

    #[error("provenance check failed: {0}")]
    Provenance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, field: Option<&str>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.map(str::to_owned),
            message: message.into(),
        }
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        match self {
            e @ Error::Node { .. } => e,
            e => Error::Node {
                node,
                source: Box::new(e),
            },
        }
    }
}

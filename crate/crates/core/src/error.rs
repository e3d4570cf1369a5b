use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("graph is disconnected ({reached} of {n} nodes reachable from node 0)")]
    DisconnectedGraph { n: usize, reached: usize },
    #[error("edge list contains a self loop at node {0}")]
    SelfLoopInEdgeList(usize),
    #[error("node index {index} out of range for a graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("graph must contain at least one node")]
    EmptyGraph,
    #[error("edge list parse error on line {line}: {reason}")]
    EdgeListParse { line: usize, reason: String },

    #[error("shrink factor {0} is outside (0, 1]")]
    InvalidShrink(f64),
    #[error("mixing matrix has a non-positive diagonal entry at node {0}")]
    NonPositiveDiagonal(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value produced by node {node} ({what})")]
    NonFiniteValue { node: usize, what: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("node {node} is missing the {what} message from neighbor {neighbor} in round {round}")]
    MissingNeighborMessage {
        node: usize,
        neighbor: usize,
        round: usize,
        what: &'static str,
    },
    #[error("locality violation: node {reader} accessed state of non-neighbor {owner}")]
    LocalityViolation { reader: usize, owner: usize },

    #[error("problem is infeasible: constraint residual stalled at {residual:e}")]
    Infeasible { residual: f64 },
    #[error("no Slater point found after {samples} interior samples")]
    NoSlaterPoint { samples: usize },
    #[error("step size {gamma} makes C negative ({c:e}); C >= 0 holds for gamma in (0, {gamma_max}]")]
    NegativeC { gamma: f64, c: f64, gamma_max: f64 },

    #[error("serialization: {0}")]
    Serialization(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

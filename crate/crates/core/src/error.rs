use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("kernel is reducible: support digraph is not strongly connected")]
    ReducibleKernel,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("laziness parameter {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("kernel is not reversible (detailed-balance residual {0:.3e})")]
    NotReversible(f64),
    #[error("target set is empty or unreachable from state {0}")]
    UnreachableTarget(usize),
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("excursions from block {0} do not return (I - K_BB singular)")]
    SingularReturn(usize),
    #[error("block {0} has no reachable exit")]
    NoExit(usize),
    #[error("projected kernel has an absorbing block {0}")]
    AbsorbingBlock(usize),
    #[error("{got} blocks exceeds the exact-mode limit of {limit}")]
    TooManyBlocks { got: usize, limit: usize },
    #[error("no block subset reaches the required mass {0}")]
    NoQualifyingSet(f64),
    #[error("state space of {got} states exceeds the limit {limit}")]
    TooLarge { got: usize, limit: usize },
    #[error("product space of {got} pairs exceeds the limit {limit}")]
    ProductSpaceTooLarge { got: usize, limit: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no feasible horizon found up to {0}")]
    NoFeasibleT(u64),
    #[error("no fixed point found up to {0}")]
    NoFixedPoint(u64),
    #[error("drift condition violated: {0}")]
    DriftViolated(String),
    #[error("sublevel threshold M = {m} is below 4b/a = {required}")]
    MTooSmall { m: f64, required: f64 },
    #[error("contraction too weak: beta = {beta} is not below alpha/2 = {half_alpha}")]
    ContractionTooWeak { beta: f64, half_alpha: f64 },
    #[error("epsilon = {0} must be below 1/4")]
    EpsilonTooLarge(f64),
    #[error("block graph G_c is disconnected (diameter infinite)")]
    DisconnectedGc,
    #[error("kernel does not have the form of a lazy walk on a tree: {0}")]
    NotTreeWalk(String),
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error("random regular graph generation failed after {0} attempts")]
    GraphGenerationFailed(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("assertion failed: {0}")]
    AssertionFailed(String),
    #[error("suite {name} failed: measured {measured}, threshold {threshold}")]
    SuiteFailed {
        name: String,
        measured: String,
        threshold: String,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

//! Crate-wide error type. One enum keeps cross-module pipelines (graph ->
//! detector -> attack -> recovery -> harness) on a single `Result` alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // numeric core
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("backward: loss must be 1x1, got {rows}x{cols}")]
    NotScalarLoss { rows: usize, cols: usize },
    #[error("backward called twice on the same tape")]
    BackwardTwice,
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGrad { name: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("duplicate parameter name {name}")]
    DuplicateParam { name: String },
    #[error("checkpoint: {msg} (line {line})")]
    Checkpoint { line: usize, msg: String },
    #[error("checkpoint is missing tensor {name}")]
    MissingTensor { name: String },

    // graph model
    #[error("graph parse error at line {line}: {msg}")]
    GraphParse { line: usize, msg: String },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("edge endpoint {id} out of range (k = {k})")]
    DanglingEdge { id: usize, k: usize },
    #[error("duplicate node id {id}")]
    DuplicateNode { id: usize },
    #[error("duplicate edge {src} -> {dst}")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("node id {id} out of range (k = {k})")]
    NodeOutOfRange { id: usize, k: usize },
    #[error("bot fraction must lie strictly between 0 and 1, got {value}")]
    InvalidFraction { value: f64 },
    #[error("invalid average degree {value} for {n} nodes")]
    InvalidDegree { value: f64, n: usize },
    #[error("graph too small: need at least {need} nodes, got {got}")]
    TooSmall { need: usize, got: usize },
    #[error("subgraph size {size} out of range for graph with {k} nodes")]
    BadSubgraphSize { size: usize, k: usize },

    // pipeline
    #[error("model dimension {d} must be divisible by 4")]
    BadModelDim { d: usize },
    #[error("layer count {layers} outside supported range 1..=3")]
    BadLayerCount { layers: usize },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("no training pairs available for {what}")]
    NoTrainingData { what: String },
    #[error("node {id} is not a bot, cannot target it")]
    NotABot { id: usize },
    #[error("config: unknown key {key} (line {line})")]
    UnknownConfigKey { key: String, line: usize },
    #[error("config: bad value for {key}: {msg}")]
    BadConfigValue { key: String, msg: String },
    #[error("config: malformed line {line} (expected `key = value`)")]
    MalformedConfigLine { line: usize },
    #[error("transfer setup: {msg}")]
    Transfer { msg: String },
    #[error("seed {seed}, stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{what}: expected {expected}, found {found}")]
    Mismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

use crate::train::TrainTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("context unseen: {0:?}")]
    ContextUnseen(Vec<u32>),

    #[error("infinite loss: model assigns zero probability to token {token} after {context:?}")]
    InfiniteLoss { context: Vec<u32>, token: u32 },

    #[error("token {token} out of range for vocabulary of size {omega}")]
    TokenOutOfRange { token: u32, omega: usize },

    #[error("depth exceeded: requested length {requested}, space depth {depth}")]
    DepthExceeded { requested: usize, depth: usize },

    #[error("empty context not in domain")]
    EmptyContext,

    #[error("boundary target: entry {index} is {value}, expected strictly positive")]
    BoundaryTarget { index: usize, value: f64 },

    #[error("injectivity sampling failed after {attempts} attempts")]
    InjectivitySamplingFailed { attempts: usize },

    #[error("rank deficiency: condition estimate {condition:e}")]
    RankDeficiency { condition: f64 },

    #[error("verification failed: max simplex error {max_error:e} exceeds {tolerance:e}")]
    VerificationFailed { max_error: f64, tolerance: f64 },

    #[error("degenerate b: entries must be nonzero and pairwise distinct")]
    DegenerateB,

    #[error("enumeration bound exceeded: {size} > {limit}")]
    EnumerationBoundExceeded { size: usize, limit: usize },

    #[error("divergence at iteration {iteration}")]
    Divergence {
        iteration: usize,
        last: Option<Box<TrainTrace>>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCorpus => "empty_corpus",
            Error::ContextUnseen(_) => "context_unseen",
            Error::InfiniteLoss { .. } => "infinite_loss",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::DepthExceeded { .. } => "depth_exceeded",
            Error::EmptyContext => "empty_context",
            Error::BoundaryTarget { .. } => "boundary_target",
            Error::InjectivitySamplingFailed { .. } => "injectivity_sampling_failed",
            Error::RankDeficiency { .. } => "rank_deficiency",
            Error::VerificationFailed { .. } => "verification_failed",
            Error::DegenerateB => "degenerate_b",
            Error::EnumerationBoundExceeded { .. } => "enumeration_bound_exceeded",
            Error::Divergence { .. } => "divergence",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

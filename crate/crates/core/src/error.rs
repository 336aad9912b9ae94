use thiserror::Error;

use crate::quad::QuadError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid subordinator spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("unbounded mass: {0}")]
    UnboundedMass(String),
    #[error("divergent moment: {0}")]
    DivergentMoment(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precision unattainable: {0}")]
    PrecisionUnattainable(String),
    #[error("dynamic range exceeded: {0}")]
    DynamicRange(String),
    #[error("singular region: {0}")]
    SingularRegion(String),
    #[error("recipe inapplicable at n = {n}: {reason}")]
    RecipeInapplicable { n: u32, reason: String },
    #[error("no large jumps beyond b_n = {0:e}")]
    NoLargeJumps(f64),
    #[error("unknown catalog example `{0}`")]
    UnknownExample(String),
    #[error("path simulation with positive drift is unsupported")]
    DriftPathsUnsupported,
    #[error("truncation required: {0}")]
    TruncationRequired(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

use thiserror::Error;

use crate::latent::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("timestep {t} out of range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },
    #[error("alpha_bar[{t}] = {alpha_bar:e} is below the projection floor")]
    DegenerateAlpha { t: usize, alpha_bar: f64 },
    #[error("step count {k} out of range [{min}, {max}]")]
    StepsOutOfRange { k: usize, min: usize, max: usize },
    #[error("timestep order violated: {from} -> {to}")]
    TimestepOrder { from: usize, to: usize },
    #[error("timestep {0} is not on the sampling grid")]
    NotOnGrid(usize),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid low-pass cutoff d0 = {0}")]
    InvalidCutoff(f64),
    #[error("mask shape mismatch: {0}")]
    MaskShapeMismatch(String),
    #[error("frames are ragged: {0}")]
    RaggedFrames(String),
    #[error("incompatible shape: {0}")]
    IncompatibleShape(String),
    #[error("need at least {needed} frames, found {found}")]
    TooFewFrames { needed: usize, found: usize },
    #[error("frame {0} has zero norm")]
    ZeroFrame(usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("timestep {0} is not a refining step")]
    StepNotRefinable(usize),
    #[error("invalid plan: {0}")]
    PlanInvalid(String),
}

use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("temporal kernel size {0} is even")]
    EvenKernel(usize),
    #[error("unsupported stride {0}")]
    InvalidStride(usize),
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backpropagation requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("skeleton graph is disconnected: joint {0} unreachable from root")]
    DisconnectedGraph(usize),
    #[error("joint index {index} out of range for {num_joints} joints")]
    IndexOutOfRange { index: usize, num_joints: usize },
    #[error("invalid mirror map: {0}")]
    InvalidMirror(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("interval {tau} is too large for a sequence of {frames} frames")]
    IntervalTooLarge { tau: usize, frames: usize },
    #[error("operator requires {expected}-dimensional coordinates, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("sequence of {frames} frames is too short (need at least {needed})")]
    TooShort { frames: usize, needed: usize },
    #[error("every frame is degenerate for Procrustes alignment")]
    DegenerateFrame,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("point behind camera (depth {0})")]
    PointBehindCamera(f64),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

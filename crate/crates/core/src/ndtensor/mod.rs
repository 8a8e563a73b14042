//! Dense tensors and a reverse-mode tape covering the operations the
//! encoders, decoder, baselines and losses need.

mod tape;
mod tensor;

pub use tape::{
    sigmoid, BatchStats, Gradients, Mode, RunningStats, Tape, Var, BCE_EPS, BN_EPS, BN_MOMENTUM,
};
pub use tensor::Tensor;
pub(crate) use tensor::{read_f64, read_u32, read_u64};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch in {0}")]
    Dimension(String),
    #[error("batch norm needs at least 2 rows in training mode, got {0}")]
    BatchSize(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
}

//! Self-supervised link-prediction training, early stopping and scoring of
//! new transactions.

mod adam;
mod config;
mod fit;
mod scoring;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::TrainingConfig;
pub use fit::{
    evaluation_loss, fit, fit_model, link_loss, prepare_batch, train_step, EpochRecord, FitResult, PreparedBatch,
};
pub use scoring::{heldout_examples, heldout_pairs, score_transactions, AnomalyResult, HeldoutPair, Scorer};

use std::io::Write;

use thiserror::Error;

use crate::graph::GraphError;
use crate::model::ModelError;
use crate::ndtensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training aborted: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for TrainingError {
    fn from(e: TensorError) -> Self {
        TrainingError::Model(ModelError::Tensor(e))
    }
}

impl TrainingError {
    /// Turns non-finite numeric errors into an abort naming the epoch and step.
    pub(crate) fn locate(self, epoch: usize, step: usize) -> Self {
        let where_ = if step == usize::MAX {
            format!("epoch {epoch}, validation")
        } else {
            format!("epoch {epoch}, step {step}")
        };
        match self {
            TrainingError::Model(ModelError::Tensor(TensorError::NonFinite(op))) => {
                TrainingError::NonFinite(format!("non-finite value in {op} at {where_}"))
            }
            other => other,
        }
    }
}

/// Writes the per-epoch metrics log as comma-separated rows with a header.
pub fn write_metrics<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(w, "{},{:.17e},{:.17e}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;

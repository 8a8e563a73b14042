//! Heterogeneous message-passing encoders (GAT, SAGE, GIN) over the
//! customer/transaction graph, and the link decoder.

mod checkpoint;
mod encoder;
mod layers;
mod params;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{decode_direct, Encoded, Model};
pub use layers::AttentionMap;
pub use params::{Bound, ParamId, ParamStore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndtensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gat,
    Sage,
    Gin,
}

impl std::str::FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(EncoderKind::Gat),
            "sage" => Ok(EncoderKind::Sage),
            "gin" => Ok(EncoderKind::Gin),
            other => Err(ModelError::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

/// Encoder architecture.
///
/// `hidden` is the output width of every layer. For GAT it is the width
/// after concatenating the heads, so each head has `hidden / heads` units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn defaults(kind: EncoderKind) -> Self {
        let (hidden, heads) = match kind {
            EncoderKind::Gat => (32, 4),
            EncoderKind::Sage => (256, 1),
            EncoderKind::Gin => (64, 1),
        };
        Self {
            kind,
            layers: 3,
            hidden,
            heads,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(ModelError::Config("layers and hidden width must be positive".into()));
        }
        if self.kind == EncoderKind::Gat && (self.heads == 0 || self.hidden % self.heads != 0) {
            return Err(ModelError::Config(format!(
                "hidden width {} is not a multiple of {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::defaults(EncoderKind::Gat)
    }
}

/// `1 - y`.
pub fn anomaly_score(y: f64) -> f64 {
    1.0 - y
}

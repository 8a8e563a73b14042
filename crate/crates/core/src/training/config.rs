use serde::{Deserialize, Serialize};

use crate::graph::SplitRatios;
use crate::model::{EncoderConfig, EncoderKind};

use super::TrainingError;

/// Hyperparameters of link-prediction training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Negatives drawn per positive edge.
    pub negatives: usize,
    pub fanout: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub split: SplitRatios,
}

impl TrainingConfig {
    pub fn defaults(kind: EncoderKind) -> Self {
        let enc = EncoderConfig::defaults(kind);
        Self {
            kind,
            layers: enc.layers,
            hidden: enc.hidden,
            heads: enc.heads,
            dropout: enc.dropout,
            learning_rate: 0.001,
            batch_size: 128,
            negatives: 1,
            fanout: 32,
            max_epochs: 50,
            patience: 6,
            seed: 0,
            split: SplitRatios::default(),
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            kind: self.kind,
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        self.encoder().validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("fanout", self.fanout),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TrainingError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainingError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }

    /// Parses a TOML document. Keys left out fall back to the defaults of
    /// the chosen `kind`, which itself defaults to `gat`.
    pub fn from_toml(text: &str) -> Result<Self, TrainingError> {
        let partial: PartialConfig = toml::from_str(text).map_err(|e| TrainingError::Config(e.to_string()))?;
        let mut c = Self::defaults(partial.kind.unwrap_or(EncoderKind::Gat));
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = partial.$f { c.$f = v; } )* };
        }
        take!(layers, hidden, heads, dropout, learning_rate, batch_size, negatives, fanout, max_epochs, patience, seed, split);
        c.validate()?;
        Ok(c)
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::defaults(EncoderKind::Gat)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    kind: Option<EncoderKind>,
    layers: Option<usize>,
    hidden: Option<usize>,
    heads: Option<usize>,
    dropout: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    negatives: Option<usize>,
    fanout: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    split: Option<SplitRatios>,
}

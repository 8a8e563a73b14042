//! Binary checkpoint: header, tensors in declaration order, running stats.

use std::io::{Read, Write};

use crate::ndtensor::{read_f64, read_u32, read_u64, RunningStats, Tensor};

use super::{EncoderConfig, EncoderKind, Model, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMLC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn kind_code(k: EncoderKind) -> u32 {
    match k {
        EncoderKind::Gat => 0,
        EncoderKind::Sage => 1,
        EncoderKind::Gin => 2,
    }
}

impl Model {
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&kind_code(self.config.kind).to_le_bytes())?;
        for v in [
            self.config.layers,
            self.config.hidden,
            self.config.heads,
            self.dims[0],
            self.dims[1],
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.config.dropout.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for t in self.params.values() {
            t.write_to(w)?;
        }
        w.write_all(&(self.running.len() as u64).to_le_bytes())?;
        for s in &self.running {
            Tensor::vector(s.mean.clone()).write_to(w)?;
            Tensor::vector(s.var.clone()).write_to(w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("not an encoder checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = match read_u32(r)? {
            0 => EncoderKind::Gat,
            1 => EncoderKind::Sage,
            2 => EncoderKind::Gin,
            k => return Err(ModelError::Format(format!("unknown encoder kind {k}"))),
        };
        let mut head = [0usize; 5];
        for h in &mut head {
            *h = read_u64(r)? as usize;
        }
        let dropout = read_f64(r)?;
        let config = EncoderConfig {
            kind,
            layers: head[0],
            hidden: head[1],
            heads: head[2],
            dropout,
        };
        let mut model = Model::new(config, head[3], head[4], 0)?;
        let n = read_u64(r)? as usize;
        if n != model.params.len() {
            return Err(ModelError::Format(format!(
                "checkpoint holds {n} tensors, architecture declares {}",
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let t = Tensor::read_from(r)?;
            if t.shape() != model.params.get(id).shape() {
                return Err(ModelError::Format(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    model.params.name(id),
                    t.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = t;
        }
        let n_stats = read_u64(r)? as usize;
        if n_stats != model.running.len() {
            return Err(ModelError::Format("batch-norm state count mismatch".into()));
        }
        for s in &mut model.running {
            let mean = Tensor::read_from(r)?.into_data();
            let var = Tensor::read_from(r)?.into_data();
            if mean.len() != s.mean.len() || var.len() != s.var.len() {
                return Err(ModelError::Format("batch-norm state width mismatch".into()));
            }
            *s = RunningStats { mean, var };
        }
        Ok(model)
    }

    /// Copies parameters and running statistics from a model of the same architecture.
    pub fn load_state(&mut self, other: &Model) -> Result<(), ModelError> {
        if self.config != other.config || self.dims != other.dims {
            return Err(ModelError::Config("architectures differ".into()));
        }
        let frozen: Vec<bool> = self.params.ids().map(|id| self.params.is_frozen(id)).collect();
        self.params = other.params.clone();
        for (id, f) in self.params.ids().collect::<Vec<_>>().into_iter().zip(frozen) {
            self.params.set_frozen(id, f);
        }
        self.running = other.running.clone();
        Ok(())
    }
}

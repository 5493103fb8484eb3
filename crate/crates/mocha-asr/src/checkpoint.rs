//! Model checkpoints.
//!
//! Layout: magic `MSTR`, `u32` format version, `u64` training step, the
//! configuration as `key = value` text, then a tensor table.

use std::path::Path;

use mocha_asr_core::config::RunConfig;
use mocha_asr_core::numerics::Real;
use mocha_asr_core::Model;

use crate::container::{read_file, write_atomic, Decoder, Encoder, RawTensor};
use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 4] = b"MSTR";
pub const VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub tensors: Vec<RawTensor>,
}

impl Checkpoint {
    pub fn of_model<R: Real>(model: &Model<R>, step: u64) -> Self {
        let tensors = model.store.ids().map(|id| RawTensor::from_tensor(model.store.name(id), model.store.tensor(id))).collect();
        Checkpoint {
            step,
            config: model.config.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::default();
        e.bytes(MAGIC);
        e.u32(VERSION);
        e.u64(self.step);
        e.str(&self.config.to_kv_text());
        e.table(&self.tensors);
        e.buf
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> AppResult<Self> {
        let mut d = Decoder::new(path, bytes);
        d.header(MAGIC, VERSION)?;
        let step = d.u64("step")?;
        let text = d.str("config")?;
        let config = RunConfig::from_kv_text(&text)?;
        let tensors = d.table()?;
        Ok(Checkpoint { step, config, tensors })
    }

    /// Rebuilds the model; every tensor name must belong to the architecture.
    pub fn into_model<R: Real>(self) -> AppResult<Model<R>> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| Ok((t.name.clone(), t.to_tensor::<R>()?)))
            .collect::<AppResult<Vec<_>>>()?;
        Ok(Model::from_tensors(self.config, tensors)?)
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}

pub fn save_model<R: Real>(path: &Path, model: &Model<R>, step: u64) -> AppResult<()> {
    Checkpoint::of_model(model, step).save(path)
}

pub fn load_model<R: Real>(path: &Path) -> AppResult<(Model<R>, u64)> {
    let ck = Checkpoint::load(path)?;
    let step = ck.step;
    let model = ck.into_model().map_err(|e| match e {
        AppError::Core(c) => AppError::format(path, c.to_string()),
        other => other,
    })?;
    Ok((model, step))
}

//! The complete parameter set: encoder and adaptor, policy network, language
//! model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LoraPolicy, RunConfig};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::layers::lora_apply;
use crate::lm::LmParams;
use crate::mocha::PolicyParams;
use crate::numerics::{ParamId, ParamStore, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<R: Real = f64> {
    pub config: RunConfig,
    pub store: ParamStore<R>,
    pub encoder: EncoderParams,
    pub policy: PolicyParams,
    pub lm: LmParams,
}

impl<R: Real> Model<R> {
    /// Fresh parameters drawn from `seed`; trainability follows the LoRA policy.
    pub fn new(config: RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vocab = config.vocab_size();
        let encoder = EncoderParams::init(&mut store, &mut rng, &config.encoder, &config.lm);
        let policy = PolicyParams::init(&mut store, &mut rng, &config.mocha, config.lm.d_model, vocab);
        let lm = LmParams::init(&mut store, &mut rng, &config.lm, vocab)?;
        let mut model = Model {
            config,
            store,
            encoder,
            policy,
            lm,
        };
        model.apply_lora_policy();
        Ok(model)
    }

    /// Freezes the language-model base tensors under the adapters-only policy.
    pub fn apply_lora_policy(&mut self) {
        let adapters = self.lm.adapter_ids();
        let frozen = self.config.lm.lora_policy == LoraPolicy::AdaptersOnly;
        for id in self.lm.param_ids() {
            let trainable = !frozen || adapters.contains(&id);
            self.store.set_trainable(id, trainable);
        }
    }

    /// Language-model tensors that are not adapters.
    pub fn lm_base_ids(&self) -> Vec<ParamId> {
        let adapters = self.lm.adapter_ids();
        self.lm.param_ids().into_iter().filter(|id| !adapters.contains(id)).collect()
    }

    /// Builds the architecture for `config` and fills it with `tensors`.
    /// Every model tensor must be supplied once with a matching shape.
    pub fn from_tensors(config: RunConfig, tensors: Vec<(String, Tensor<R>)>) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        let mut seen = alloc::vec![false; model.store.len()];
        for (name, t) in tensors {
            let id = model
                .store
                .get(&name)
                .ok_or_else(|| Error::Config(format!("unknown tensor {name}")))?;
            let want = model.store.tensor(id).shape();
            if want != t.shape() {
                return Err(Error::Shape {
                    op: "load",
                    detail: format!("tensor {name}: expected {want:?}, found {:?}", t.shape()),
                });
            }
            if seen[id.index()] {
                return Err(Error::Config(format!("tensor {name} appears twice")));
            }
            seen[id.index()] = true;
            model.store.set(id, t);
        }
        if let Some(missing) = model.store.ids().find(|id| !seen[id.index()]) {
            return Err(Error::Config(format!("tensor {} missing", model.store.name(missing))));
        }
        Ok(model)
    }

    /// Equivalent model with every adapter folded into its base matrix
    /// (`W + s·A·B`) and no adapters left.
    pub fn merged_lora(&self) -> Result<Self> {
        let mut config = self.config.clone();
        config.lm.lora_policy = LoraPolicy::BaseOnly;
        let mut merged: Vec<(ParamId, Tensor<R>)> = Vec::new();
        let mut dropped = Vec::new();
        for b in &self.lm.blocks {
            for l in [&b.q, &b.k, &b.v, &b.o] {
                if let Some(a) = &l.lora {
                    let w = lora_apply(self.store.tensor(l.w), self.store.tensor(a.a), self.store.tensor(a.b), a.scale)?;
                    merged.push((l.w, w));
                    dropped.extend([a.a, a.b]);
                }
            }
        }
        let tensors = self
            .store
            .ids()
            .filter(|id| !dropped.contains(id))
            .map(|id| {
                let t = merged.iter().find(|(m, _)| *m == id).map_or_else(|| self.store.tensor(id).clone(), |(_, t)| t.clone());
                (String::from(self.store.name(id)), t)
            })
            .collect();
        Model::from_tensors(config, tensors)
    }
}

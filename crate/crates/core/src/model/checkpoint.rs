use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::transformer::Model;
use crate::numerics::{load_container, save_container, ParamStore, Tensor};

const KIND: &str = "checkpoint";

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ModelConfig,
    step: u64,
    rng: ChaCha8Rng,
}

/// Model parameters together with the training position they belong to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64) -> Self {
        Checkpoint { model, step: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Meta {
            kind: KIND.into(),
            config: self.model.config.clone(),
            step: self.step,
            rng: self.rng.clone(),
        };
        save_container(path, &serde_json::to_value(&meta)?, self.model.params.as_map())
    }

    /// Loads and checks that the tensors are exactly those the stored
    /// configuration implies.
    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_container(path)?;
        Checkpoint::from_container(meta, tensors)
    }

    fn from_container(meta: serde_json::Value, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let meta: Meta = serde_json::from_value(meta)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if meta.kind != KIND {
            return Err(Error::Format(format!("expected a checkpoint, found `{}`", meta.kind)));
        }
        let model = Model::from_parts(meta.config, ParamStore::from_map(tensors))?;
        Ok(Checkpoint { model, step: meta.step, rng: meta.rng })
    }

    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.step == other.step && self.rng == other.rng && self.model.bit_eq(&other.model)
    }
}

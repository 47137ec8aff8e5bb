//! Bidirectional joint training and unidirectional fine-tuning.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, Forward, Graph, Model};
use crate::numerics::Var;
use crate::objectives::optim::AdamConfig;
use crate::objectives::train::{pick, train_step, Sampler, TrainState};

/// `CE(y|x) + CE(x|y)` on one batch of pairs, both directions on one tape.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    model: &Model,
    g: &mut Graph,
    x: &[Vec<usize>],
    y: &[Vec<usize>],
    lang_x: &str,
    lang_y: &str,
    smoothing: f64,
    fwd: &mut Forward,
) -> Result<Var> {
    let a = model.translation_loss(g, x, y, lang_x, lang_y, None, smoothing, fwd)?;
    let b = model.translation_loss(g, y, x, lang_y, lang_x, None, smoothing, fwd)?;
    g.tape.add(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Child model initialised from `parent`, then trained on the `src -> tgt`
/// direction only.
pub fn finetune(
    parent: &Checkpoint,
    src: &[Vec<usize>],
    tgt: &[Vec<usize>],
    src_lang: &str,
    tgt_lang: &str,
    cfg: &FinetuneConfig,
) -> Result<(Checkpoint, TrainState)> {
    let pc = &parent.model.config;
    pc.lang_index(src_lang)?;
    pc.lang_index(tgt_lang)?;
    if src.len() != tgt.len() {
        return Err(Error::Input(format!("{} sources but {} targets", src.len(), tgt.len())));
    }
    let mut child = parent.clone();
    let mut state = TrainState::new(cfg.adam, cfg.seed);
    if cfg.steps == 0 {
        return Ok((child, state));
    }
    let mut sampler = Sampler::new(src.len(), cfg.batch_size)?;
    let mut order_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let objective = format!("finetune:{src_lang}-{tgt_lang}");
    for _ in 0..cfg.steps {
        let idx = sampler.next(&mut order_rng);
        let (xs, ys) = (pick(src, &idx), pick(tgt, &idx));
        train_step(&mut child.model, &mut state, &objective, |m, g, fwd, _| {
            m.translation_loss(g, &xs, &ys, src_lang, tgt_lang, None, cfg.smoothing, fwd).map(Some)
        })?;
        child.step += 1;
    }
    Ok((child, state))
}

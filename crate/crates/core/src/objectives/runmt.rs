//! Round-robin training loop for reference-language UNMT with one shared
//! multilingual model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeOptions, Model};
use crate::objectives::train::{pick, train_step, Sampler, TrainState};
use crate::objectives::unmt::{
    agreed_translations, bt_batch, dae_batch, pseudo_loss, rabt_batches, rat_batches, xbt_generate, LanguageTriple,
    PseudoBatch,
};
use crate::objectives::{joint_loss, mlm_loss, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Masked LM on every language's monolingual text.
    Mlm,
    Dae,
    /// Online back-translation between the target and the other two.
    Bt,
    /// Bidirectional training on the source-reference parallel data.
    Supervised,
    Rat,
    Rabt,
    Xbt,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::Dae => "dae",
            Objective::Bt => "bt",
            Objective::Supervised => "supervised",
            Objective::Rat => "rat",
            Objective::Rabt => "rabt",
            Objective::Xbt => "xbt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunmtConfig {
    pub langs: LanguageTriple,
    /// Objectives visited once per round, in this order.
    pub objectives: Vec<Objective>,
    pub batch_size: usize,
    /// Length limit for on-the-fly generation.
    pub max_len: usize,
    #[serde(default)]
    pub loss: LossConfig,
    /// Beam width of the joint decoding that produces agreed translations.
    #[serde(default = "one")]
    pub agreement_beam: usize,
}

fn one() -> usize {
    1
}

/// Monolingual text per language plus the source-reference bitext.
#[derive(Debug, Clone, Default)]
pub struct RunmtData {
    pub mono: BTreeMap<String, Vec<Vec<usize>>>,
    pub parallel_source: Vec<Vec<usize>>,
    pub parallel_reference: Vec<Vec<usize>>,
}

pub struct RunmtTrainer {
    pub config: RunmtConfig,
    mono: BTreeMap<String, Sampler>,
    parallel: Sampler,
    /// Latest RAT batch and its agreed translations, reused by RABT.
    agreed: Option<(Vec<usize>, Vec<Vec<usize>>)>,
}

impl RunmtTrainer {
    pub fn new(config: RunmtConfig, data: &RunmtData) -> Result<Self> {
        config.loss.validate()?;
        if config.objectives.is_empty() {
            return Err(Error::Config("no RUNMT objectives selected".into()));
        }
        let mut mono = BTreeMap::new();
        for l in config.langs.all() {
            let n = data.mono.get(l).map_or(0, Vec::len);
            mono.insert(l.to_string(), Sampler::new(n, config.batch_size)?);
        }
        if data.parallel_source.len() != data.parallel_reference.len() {
            return Err(Error::Input("source-reference bitext sides differ in length".into()));
        }
        let parallel = Sampler::new(data.parallel_source.len(), config.batch_size)?;
        Ok(RunmtTrainer { config, mono, parallel, agreed: None })
    }

    fn opts(&self) -> DecodeOptions {
        DecodeOptions::greedy(self.config.max_len)
    }

    fn mono_batch(&mut self, data: &RunmtData, lang: &str, state: &mut TrainState) -> Vec<Vec<usize>> {
        let idx = self.mono.get_mut(lang).expect("sampler per language").next(&mut state.rng);
        pick(&data.mono[lang], &idx)
    }

    /// One pass over the configured objectives; returns the step losses.
    pub fn round(&mut self, model: &mut Model, state: &mut TrainState, data: &RunmtData) -> Result<Vec<(Objective, f64)>> {
        let mut out = Vec::new();
        for obj in self.config.objectives.clone() {
            if let Some(l) = self.step(obj, model, state, data)? {
                out.push((obj, l));
            }
        }
        Ok(out)
    }

    pub fn step(&mut self, obj: Objective, model: &mut Model, state: &mut TrainState, data: &RunmtData) -> Result<Option<f64>> {
        let langs = self.config.langs.clone();
        let loss_cfg = self.config.loss;
        let opts = self.opts();
        match obj {
            Objective::Mlm => {
                let batches: Vec<(String, Vec<Vec<usize>>)> = langs
                    .all()
                    .iter()
                    .map(|l| (l.to_string(), self.mono_batch(data, l, state)))
                    .collect();
                train_step(model, state, obj.name(), |m, g, fwd, rng| {
                    let mut total = None;
                    for (l, b) in &batches {
                        if let Some(x) = mlm_loss(m, g, b, l, loss_cfg.mask_prob, rng, fwd)? {
                            total = Some(match total {
                                None => x,
                                Some(t) => g.tape.add(t, x)?,
                            });
                        }
                    }
                    Ok(total)
                })
            }
            Objective::Dae => {
                let mut batches = Vec::new();
                for l in langs.all() {
                    let x = self.mono_batch(data, l, state);
                    batches.push(dae_batch(&x, l, loss_cfg.noise, &mut state.rng));
                }
                self.train_on(obj, model, state, &batches)
            }
            Objective::Bt => {
                let t = langs.target.as_str();
                let mut batches = Vec::new();
                for other in [langs.source.as_str(), langs.reference.as_str()] {
                    let y = self.mono_batch(data, t, state);
                    batches.push(bt_batch(model, &y, t, other, opts)?);
                    let y = self.mono_batch(data, other, state);
                    batches.push(bt_batch(model, &y, other, t, opts)?);
                }
                self.train_on(obj, model, state, &batches)
            }
            Objective::Supervised => {
                let idx = self.parallel.next(&mut state.rng);
                let (s, r) = (pick(&data.parallel_source, &idx), pick(&data.parallel_reference, &idx));
                train_step(model, state, obj.name(), |m, g, fwd, _| {
                    joint_loss(m, g, &s, &r, &langs.source, &langs.reference, loss_cfg.smoothing, fwd).map(Some)
                })
            }
            Objective::Rat | Objective::Rabt => {
                let (idx, t_a) = match (obj, self.agreed.take()) {
                    (Objective::Rabt, Some(cached)) => cached,
                    _ => {
                        let idx = self.parallel.next(&mut state.rng);
                        let (s, r) = (pick(&data.parallel_source, &idx), pick(&data.parallel_reference, &idx));
                        let joint = DecodeOptions { beam: self.config.agreement_beam, ..opts };
                        let t_a = agreed_translations(model, model, &s, &r, &langs, joint)?;
                        (idx, t_a)
                    }
                };
                let (s, r) = (pick(&data.parallel_source, &idx), pick(&data.parallel_reference, &idx));
                let batches = if obj == Objective::Rat {
                    self.agreed = Some((idx, t_a.clone()));
                    rat_batches(&s, &r, &t_a, &langs, loss_cfg.smoothing)
                } else {
                    rabt_batches(&s, &r, &t_a, &langs)
                };
                self.train_on(obj, model, state, &batches)
            }
            Objective::Xbt => {
                let idx = self.parallel.next(&mut state.rng);
                let (s, r) = (pick(&data.parallel_source, &idx), pick(&data.parallel_reference, &idx));
                let batches = xbt_generate(model, model, &s, &r, &langs, opts)?;
                self.train_on(obj, model, state, &batches)
            }
        }
    }

    fn train_on(&self, obj: Objective, model: &mut Model, state: &mut TrainState, batches: &[PseudoBatch]) -> Result<Option<f64>> {
        train_step(model, state, obj.name(), |m, g, fwd, _| pseudo_loss(m, g, batches, fwd))
    }
}

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Forward, Graph, Model};
use crate::numerics::{load_container, save_container, Var};
use crate::objectives::optim::{Adam, AdamConfig};

/// One line of the metric history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub objective: String,
    pub loss: f64,
    #[serde(default)]
    pub dev_bleu: Option<f64>,
}

/// Everything besides the parameters needed to resume training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricRow>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    adam: AdamConfig,
    step: u64,
    rng: ChaCha8Rng,
    history: Vec<MetricRow>,
}

impl TrainState {
    pub fn new(adam: AdamConfig, seed: u64) -> Self {
        TrainState { adam: Adam::new(adam), rng: ChaCha8Rng::seed_from_u64(seed), history: Vec::new() }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Meta {
            kind: "train-state".into(),
            adam: self.adam.config,
            step: self.adam.step,
            rng: self.rng.clone(),
            history: self.history.clone(),
        };
        save_container(path, &serde_json::to_value(&meta)?, &self.adam.tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_container(path)?;
        let meta: Meta = serde_json::from_value(meta).map_err(|e| Error::Format(format!("train state header: {e}")))?;
        if meta.kind != "train-state" {
            return Err(Error::Format(format!("expected a train state, found `{}`", meta.kind)));
        }
        Ok(TrainState {
            adam: Adam::from_tensors(meta.adam, meta.step, tensors)?,
            rng: meta.rng,
            history: meta.history,
        })
    }

    /// Appends a dev-BLEU row at the current step.
    pub fn record_bleu(&mut self, objective: &str, bleu: f64) {
        self.history.push(MetricRow {
            step: self.step(),
            objective: objective.to_string(),
            loss: f64::NAN,
            dev_bleu: Some(bleu),
        });
    }

    /// `step,objective,loss,dev_bleu`; missing values are empty cells.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("step,objective,loss,dev_bleu\n");
        for r in &self.history {
            let loss = if r.loss.is_finite() { format!("{:.6}", r.loss) } else { String::new() };
            let bleu = r.dev_bleu.map(|b| format!("{b:.4}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.step, r.objective, loss, bleu);
        }
        out
    }
}

/// Builds a loss with `build`, backpropagates and applies one Adam update.
/// `build` returning `None` skips the step (nothing to learn from); the
/// optimizer step counter does not advance then.
pub fn train_step<F>(model: &mut Model, state: &mut TrainState, objective: &str, build: F) -> Result<Option<f64>>
where
    F: FnOnce(&Model, &mut Graph, &mut Forward, &mut ChaCha8Rng) -> Result<Option<Var>>,
{
    let mut drop_rng = ChaCha8Rng::seed_from_u64(state.rng.gen());
    let (loss, grads) = {
        let mut g = if model.config.freeze_plm { Graph::new(model) } else { Graph::unfrozen(model) };
        let mut fwd = Forward::training(&mut drop_rng);
        let Some(l) = build(model, &mut g, &mut fwd, &mut state.rng)? else {
            return Ok(None);
        };
        let loss = g.tape.scalar(l)?;
        let mut grads = g.tape.backward(l)?;
        (loss, g.binder.collect_grads(&g.tape, &mut grads))
    };
    let frozen: &[&str] = if model.config.freeze_plm { &["plm."] } else { &[] };
    state.adam.apply(&mut model.params, &grads, frozen)?;
    state.history.push(MetricRow {
        step: state.adam.step,
        objective: objective.to_string(),
        loss,
        dev_bleu: None,
    });
    Ok(Some(loss))
}

/// Shuffled mini-batches over `n` items; each pass visits every item once.
#[derive(Debug, Clone)]
pub struct Sampler {
    order: Vec<usize>,
    at: usize,
    batch: usize,
}

impl Sampler {
    pub fn new(n: usize, batch: usize) -> Result<Self> {
        if n == 0 || batch == 0 {
            return Err(Error::Input(format!("cannot sample batches of {batch} from {n} items")));
        }
        Ok(Sampler { order: (0..n).collect(), at: n, batch })
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch.min(self.order.len()) {
            if self.at == self.order.len() {
                self.order.shuffle(rng);
                self.at = 0;
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

pub fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Gradients of a loss for every parameter, for tests and diagnostics.
pub fn gradients<F>(model: &Model, build: F) -> Result<(f64, BTreeMap<String, Vec<f64>>)>
where
    F: FnOnce(&Model, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(model);
    let l = build(model, &mut g)?;
    let loss = g.tape.scalar(l)?;
    let mut grads = g.tape.backward(l)?;
    Ok((loss, g.binder.collect_grads(&g.tape, &mut grads)))
}

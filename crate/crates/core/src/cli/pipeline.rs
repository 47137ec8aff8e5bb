use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{execute, Manifest, COMMANDS};
use crate::error::{Error, Result};
use crate::io::write_json_atomic;

/// A string config value `@stage/file` names an artifact of an earlier stage.
pub const REF_PREFIX: char = '@';

/// A stage graph run into one output directory, one subdirectory per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    /// Subcommand name, e.g. `train`.
    pub command: String,
    #[serde(default)]
    pub after: Vec<String>,
    #[serde(default)]
    pub config: Map<String, Value>,
}

fn refs(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => {
            if let Some(rest) = s.strip_prefix(REF_PREFIX) {
                out.push(rest.split('/').next().unwrap_or("").to_string());
            }
        }
        Value::Array(a) => a.iter().for_each(|x| refs(x, out)),
        Value::Object(o) => o.values().for_each(|x| refs(x, out)),
        _ => {}
    }
}

fn resolve(v: &Value, root: &Path) -> Value {
    match v {
        Value::String(s) => match s.strip_prefix(REF_PREFIX) {
            Some(rest) => Value::String(root.join(rest).to_string_lossy().into_owned()),
            None => v.clone(),
        },
        Value::Array(a) => Value::Array(a.iter().map(|x| resolve(x, root)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), resolve(x, root))).collect()),
        _ => v.clone(),
    }
}

impl ExperimentConfig {
    /// Stage indices in execution order. Stage names are unique, commands
    /// known, dependencies declared and acyclic, and every `@stage/...`
    /// reference points at a (transitive) dependency.
    pub fn order(&self) -> Result<Vec<usize>> {
        let mut index = BTreeMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if s.name.is_empty() || s.name.contains('/') {
                return Err(Error::Config(format!("stage name `{}` must be non-empty without `/`", s.name)));
            }
            if index.insert(s.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("stage `{}` declared twice", s.name)));
            }
            if !COMMANDS.contains(&s.command.as_str()) {
                return Err(Error::Config(format!("stage `{}`: unknown command `{}`", s.name, s.command)));
            }
        }
        let mut deps = vec![Vec::new(); self.stages.len()];
        for (i, s) in self.stages.iter().enumerate() {
            for d in &s.after {
                let j = *index
                    .get(d.as_str())
                    .ok_or_else(|| Error::Config(format!("stage `{}` depends on unknown stage `{d}`", s.name)))?;
                deps[i].push(j);
            }
        }
        // Kahn's algorithm, lowest declaration index first.
        let mut done = vec![false; self.stages.len()];
        let mut order = Vec::new();
        while order.len() < self.stages.len() {
            let next = (0..self.stages.len()).find(|&i| !done[i] && deps[i].iter().all(|&j| done[j]));
            let Some(i) = next else {
                return Err(Error::Config("stage dependencies form a cycle".into()));
            };
            done[i] = true;
            order.push(i);
        }
        for (i, s) in self.stages.iter().enumerate() {
            let mut ancestors = BTreeSet::new();
            let mut stack = deps[i].clone();
            while let Some(j) = stack.pop() {
                if ancestors.insert(j) {
                    stack.extend(&deps[j]);
                }
            }
            let mut named = Vec::new();
            refs(&Value::Object(s.config.clone()), &mut named);
            for r in named {
                match index.get(r.as_str()) {
                    Some(j) if ancestors.contains(j) => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "stage `{}` reads `@{r}` without depending on stage `{r}`",
                            s.name
                        )))
                    }
                }
            }
        }
        Ok(order)
    }
}

/// Runs every stage in dependency order. A failing stage stops the run;
/// artifacts of finished stages stay in place.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Vec<(String, Manifest)>> {
    let order = cfg.order()?;
    let mut done = Vec::new();
    for i in order {
        let s = &cfg.stages[i];
        let dir = cfg.out.join(&s.name);
        log::info!("stage {} ({})", s.name, s.command);
        let Value::Object(config) = resolve(&Value::Object(s.config.clone()), &cfg.out) else {
            unreachable!("objects resolve to objects")
        };
        let m = execute(&s.command, config, Some(cfg.seed), Some(&dir))?;
        done.push((s.name.clone(), m));
    }
    let names: Vec<&str> = done.iter().map(|(n, _)| n.as_str()).collect();
    write_json_atomic(&cfg.out.join("pipeline.json"), &serde_json::json!({ "seed": cfg.seed, "order": names }))?;
    Ok(done)
}

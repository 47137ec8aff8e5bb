use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_config, parse_config_at, report, Run};
use crate::align::{align_paragraphs, GcParams};
use crate::error::{Error, Result};
use crate::io::{read_lines, write_json_atomic, write_string_atomic};
use crate::metrics::{corpus_bleu, BleuScore, BleuTokenizer};
use crate::model::{joint_decode, Checkpoint, DecodeOptions, Hypothesis, Member, Model, ModelConfig};
use crate::objectives::{
    clm_loss, finetune, joint_loss, mlm_loss, pick, plm_mlm_loss, tlm_loss, train_step, AdamConfig, FinetuneConfig,
    LanguageTriple, LossConfig, Objective, RunmtConfig, RunmtData, RunmtTrainer, Sampler, TrainState,
};
use crate::retrieval::{select_topk, Bm25Index, Bm25Params, TopKMode, DEFAULT_TOP_K};
use crate::selftrain::{btbleu_filter, CfstConfig, LengthBag, DEFAULT_GAMMA};
use crate::text::corpus::blocks;
use crate::text::{default_joint_merges, words, Corpus, SubwordModel, Tokenizer, Vocab};

pub(super) fn dispatch(command: &str, config: Value, run: &mut Run) -> Result<Value> {
    match command {
        "learn-bpe" => go(config, run, learn_bpe),
        "align" => go(config, run, align),
        "pretrain" => go(config, run, pretrain),
        "train" => go(config, run, train),
        "translate" => go(config, run, translate),
        "ensemble-decode" => go(config, run, ensemble_decode),
        "cfst" => go(config, run, cfst),
        "bm25-select" => go(config, run, bm25_select),
        "finetune" => go(config, run, finetune_stage),
        "score" => go(config, run, score),
        "report" => go(config, run, report::report),
        other => Err(Error::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn go<C>(config: Value, run: &mut Run, stage: fn(&C, &mut Run) -> Result<()>) -> Result<Value>
where
    C: DeserializeOwned + Serialize,
{
    let c: C = parse_config(config)?;
    stage(&c, run)?;
    Ok(serde_json::to_value(&c)?)
}

fn empty_object() -> Value {
    json!({})
}
fn d_steps() -> u64 {
    1000
}
fn d_batch() -> usize {
    32
}
fn d_max_len() -> usize {
    64
}
fn d_decode_len() -> usize {
    128
}
fn d_beam() -> usize {
    4
}
fn d_one() -> usize {
    1
}
fn d_mask() -> f64 {
    0.15
}
fn d_smoothing() -> f64 {
    0.1
}
fn d_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn d_k() -> usize {
    DEFAULT_TOP_K
}
fn d_backward_steps() -> u64 {
    200
}

pub const BPE_FILE: &str = "bpe.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.ck";
pub const STATE_FILE: &str = "train_state.bin";
pub const METRICS_FILE: &str = "metrics.csv";

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn load_tokenizer(run: &mut Run, dir: &Path) -> Result<Tokenizer> {
    let bpe = SubwordModel::load(&run.input(&dir.join(BPE_FILE)))
        .map_err(|e| Error::Input(format!("tokenizer {}: {e}", dir.display())))?;
    let vocab = Vocab::load(&run.input(&dir.join(VOCAB_FILE)))
        .map_err(|e| Error::Input(format!("tokenizer {}: {e}", dir.display())))?;
    Ok(Tokenizer { bpe, vocab })
}

fn load_checkpoint(run: &mut Run, path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(&run.input(path)).map_err(|e| Error::Input(format!("checkpoint {}: {e}", path.display())))
}

fn read_text(run: &mut Run, path: &Path) -> Result<Vec<String>> {
    read_lines(&run.input(path))
}

fn encode(tok: &Tokenizer, lines: &[String]) -> Vec<Vec<usize>> {
    lines.iter().map(|l| tok.encode(l)).collect()
}

fn check_vocab(tok: &Tokenizer, model: &Model) -> Result<()> {
    let langs: Vec<&str> = tok.vocab.languages().iter().map(String::as_str).collect();
    if model.config.vocab_size != tok.vocab.len() || model.config.languages != langs {
        return Err(Error::Config(format!(
            "checkpoint vocabulary ({} ids, {:?}) does not match the tokenizer ({} ids, {:?})",
            model.config.vocab_size,
            model.config.languages,
            tok.vocab.len(),
            langs
        )));
    }
    Ok(())
}

/// Small-model defaults overlaid with the config's `model` object; the
/// vocabulary size and languages always come from the tokenizer.
pub fn model_config(tok: &Tokenizer, overrides: &Value) -> Result<ModelConfig> {
    let langs: Vec<&str> = tok.vocab.languages().iter().map(String::as_str).collect();
    let vocab = tok.vocab.len();
    let mut base = serde_json::to_value(ModelConfig::small(vocab, &langs))?;
    let Value::Object(o) = overrides else {
        return Err(Error::Usage("config field `model`: expected an object".into()));
    };
    let fields = base.as_object_mut().expect("struct");
    for (k, v) in o {
        if k == "vocab_size" || k == "languages" {
            return Err(Error::Usage(format!("config field `model.{k}`: set by the tokenizer")));
        }
        if !fields.contains_key(k) {
            return Err(Error::Usage(format!("config field `model.{k}`: unknown field")));
        }
        fields.insert(k.clone(), v.clone());
    }
    if let Some(Value::Object(plm)) = fields.get_mut("plm") {
        plm.entry("vocab_size").or_insert(json!(vocab));
    }
    let cfg: ModelConfig = parse_config_at("model", base)?;
    cfg.validate()?;
    Ok(cfg)
}

fn initial_model(run: &mut Run, tok: &Tokenizer, init: &Option<PathBuf>, model: &Value) -> Result<Model> {
    let m = match init {
        Some(p) => {
            if model.as_object().is_some_and(|o| !o.is_empty()) {
                run.warn("`model` is ignored when starting from a checkpoint".into());
            }
            load_checkpoint(run, p)?.model
        }
        None => Model::new(model_config(tok, model)?, run.seed)?,
    };
    check_vocab(tok, &m)?;
    Ok(m)
}

fn save_training(run: &mut Run, model: Model, state: &TrainState) -> Result<()> {
    let mut ck = Checkpoint::new(model, run.seed);
    ck.step = state.step();
    ck.rng = state.rng.clone();
    ck.save(&run.file(CHECKPOINT_FILE))?;
    state.save(&run.file(STATE_FILE))?;
    write_string_atomic(&run.file(METRICS_FILE), &state.history_csv())?;
    if let Some(last) = state.history.iter().rev().find(|r| r.loss.is_finite()) {
        run.metrics.insert("final_loss".into(), last.loss);
    }
    run.metrics.insert("steps".into(), state.step() as f64);
    Ok(())
}

/// Drops pairs with an empty side or a side longer than `max_len`.
fn filter_pairs(run: &mut Run, src: Vec<Vec<usize>>, tgt: Vec<Vec<usize>>, max_len: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if src.len() != tgt.len() {
        return Err(Error::Input(format!("{} source but {} target lines", src.len(), tgt.len())));
    }
    let n = src.len();
    let (a, b): (Vec<_>, Vec<_>) = src
        .into_iter()
        .zip(tgt)
        .filter(|(x, y)| !x.is_empty() && !y.is_empty() && x.len() <= max_len && y.len() <= max_len)
        .unzip();
    if a.len() < n {
        run.warn(format!("dropped {} of {n} pairs that were empty or longer than {max_len} tokens", n - a.len()));
    }
    if a.is_empty() {
        return Err(Error::Input("no usable training pairs".into()));
    }
    Ok((a, b))
}

fn filter_mono(seqs: Vec<Vec<usize>>, max_len: usize) -> Vec<Vec<usize>> {
    seqs.into_iter().filter(|s| !s.is_empty() && s.len() <= max_len).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFiles {
    pub src: PathBuf,
    pub reference: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
}

/// Translates `e.src`, writes `<name>.hyp` and scores it against `e.reference`.
fn evaluate(run: &mut Run, model: &Model, tok: &Tokenizer, e: &EvalFiles, opts: DecodeOptions, name: &str) -> Result<BleuScore> {
    let src = read_text(run, &e.src)?;
    let refs = read_text(run, &e.reference)?;
    let hyps: Vec<String> = model
        .translate_best(&encode(tok, &src), &e.src_lang, &e.tgt_lang, opts)?
        .iter()
        .map(|h| tok.decode(h))
        .collect();
    write_string_atomic(&run.file(&format!("{name}.hyp")), &lines_text(&hyps))?;
    corpus_bleu(&hyps, &refs, BleuTokenizer::default())
}

fn lines_text<S: AsRef<str>>(lines: &[S]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(&clean(l.as_ref()));
        s.push('\n');
    }
    s
}

fn final_eval(run: &mut Run, model: &Model, tok: &Tokenizer, dev: &Option<EvalFiles>, test: &Option<EvalFiles>, opts: DecodeOptions) -> Result<()> {
    for (name, set) in [("dev", dev), ("test", test)] {
        if let Some(e) = set {
            let b = evaluate(run, model, tok, e, opts, name)?;
            log::info!("{name} BLEU {:.2}", b.bleu);
            run.metrics.insert(format!("{name}_bleu"), b.bleu);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnBpeConfig {
    /// Language name to monolingual text file.
    pub corpus: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub merges: Option<usize>,
}

fn learn_bpe(c: &LearnBpeConfig, run: &mut Run) -> Result<()> {
    if c.corpus.is_empty() {
        return Err(Error::Usage("config field `corpus`: at least one language required".into()));
    }
    let langs: Vec<&str> = c.corpus.keys().map(String::as_str).collect();
    let mut corpora = Vec::new();
    for p in c.corpus.values() {
        corpora.push(Corpus::from_lines(read_text(run, p)?));
    }
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let merges = c.merges.unwrap_or_else(|| default_joint_merges(langs.len()));
    let tok = Tokenizer::learn(&langs, &refs, merges)?;
    tok.bpe.save(&run.file(BPE_FILE))?;
    tok.vocab.save(&run.file(VOCAB_FILE))?;
    let mut failures = 0;
    for s in refs.iter().flat_map(|c| c.sentences()) {
        if tok.decode_words(&tok.encode_words(s)) != *s {
            failures += 1;
        }
    }
    if failures > 0 {
        run.warn(format!("{failures} sentences do not survive an encode/decode round trip"));
    }
    run.metrics.insert("merges".into(), tok.bpe.merge_count() as f64);
    run.metrics.insert("vocab_size".into(), tok.vocab.len() as f64);
    run.metrics.insert("roundtrip_failures".into(), failures as f64);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    /// Paragraphs separated by blank lines, one sentence per line.
    pub src: PathBuf,
    pub tgt: PathBuf,
    #[serde(default)]
    pub params: GcParams,
}

fn align(c: &AlignConfig, run: &mut Run) -> Result<()> {
    c.params.validate()?;
    let src = std::fs::read_to_string(run.input(&c.src))?;
    let tgt = std::fs::read_to_string(run.input(&c.tgt))?;
    let (sp, tp) = (blocks(&src), blocks(&tgt));
    if sp.len() != tp.len() {
        return Err(Error::Input(format!("{} source but {} target paragraphs", sp.len(), tp.len())));
    }
    let paragraphs: Vec<(Vec<&str>, Vec<&str>)> = sp.into_iter().zip(tp).collect();
    let aligned = align_paragraphs(&paragraphs, &c.params)?;
    let mut pairs = String::new();
    for (s, t) in &aligned.pairs {
        writeln!(pairs, "{}\t{}", clean(s), clean(t)).expect("string write");
    }
    let mut dropped = String::new();
    for (side, s) in &aligned.dropped {
        writeln!(dropped, "{side}\t{}", clean(s)).expect("string write");
    }
    write_string_atomic(&run.file("aligned.tsv"), &pairs)?;
    write_string_atomic(&run.file("dropped.tsv"), &dropped)?;
    write_json_atomic(&run.file("beads.json"), &aligned.counts)?;
    run.metrics.insert("pairs".into(), aligned.pairs.len() as f64);
    run.metrics.insert("dropped".into(), aligned.dropped.len() as f64);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainObjective {
    #[default]
    Mlm,
    Clm,
    Tlm,
    /// MLM on the fused PLM, which is unfrozen for the run.
    PlmMlm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelFiles {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub tokenizer: PathBuf,
    #[serde(default)]
    pub mono: BTreeMap<String, PathBuf>,
    /// Required by TLM.
    #[serde(default)]
    pub parallel: Option<ParallelFiles>,
    #[serde(default)]
    pub objective: PretrainObjective,
    #[serde(default = "empty_object")]
    pub model: Value,
    #[serde(default)]
    pub init: Option<PathBuf>,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "d_mask")]
    pub mask_prob: f64,
}

fn pretrain(c: &PretrainConfig, run: &mut Run) -> Result<()> {
    let tok = load_tokenizer(run, &c.tokenizer)?;
    let mut model = initial_model(run, &tok, &c.init, &c.model)?;
    let mut state = TrainState::new(c.adam, run.seed);
    let obj = c.objective;
    let name = serde_json::to_value(obj)?.as_str().unwrap_or("pretrain").to_string();
    if obj == PretrainObjective::Tlm {
        let p = c.parallel.as_ref().ok_or_else(|| Error::Usage("config field `parallel`: required for tlm".into()))?;
        let a = encode(&tok, &read_text(run, &p.src)?);
        let b = encode(&tok, &read_text(run, &p.tgt)?);
        let (a, b) = filter_pairs(run, a, b, c.max_len)?;
        let mut sampler = Sampler::new(a.len(), c.batch_size)?;
        for _ in 0..c.steps {
            let idx = sampler.next(&mut state.rng);
            let (x, y) = (pick(&a, &idx), pick(&b, &idx));
            train_step(&mut model, &mut state, &name, |m, g, fwd, rng| {
                tlm_loss(m, g, &x, &y, &p.src_lang, &p.tgt_lang, c.mask_prob, rng, fwd)
            })?;
        }
    } else {
        if c.mono.is_empty() {
            return Err(Error::Usage("config field `mono`: at least one language required".into()));
        }
        let mut data = Vec::new();
        for (lang, path) in &c.mono {
            let seqs = filter_mono(encode(&tok, &read_text(run, path)?), c.max_len);
            let sampler = Sampler::new(seqs.len(), c.batch_size)?;
            data.push((lang.clone(), seqs, sampler));
        }
        let plm = obj == PretrainObjective::PlmMlm;
        if plm {
            if model.config.plm.is_none() {
                return Err(Error::Config("plm-mlm needs a model with a `plm` section".into()));
            }
            model.config.freeze_plm = false;
        }
        for _ in 0..c.steps {
            let batches: Vec<(String, Vec<Vec<usize>>)> = data
                .iter_mut()
                .map(|(l, seqs, s)| (l.clone(), pick(seqs, &s.next(&mut state.rng))))
                .collect();
            train_step(&mut model, &mut state, &name, |m, g, fwd, rng| {
                let mut total = None;
                for (l, b) in &batches {
                    let part = match obj {
                        PretrainObjective::Mlm => mlm_loss(m, g, b, l, c.mask_prob, rng, fwd)?,
                        PretrainObjective::Clm => Some(clm_loss(m, g, b, l, fwd)?),
                        _ => plm_mlm_loss(m, g, b, c.mask_prob, rng)?,
                    };
                    if let Some(x) = part {
                        total = Some(match total {
                            None => x,
                            Some(t) => g.tape.add(t, x)?,
                        });
                    }
                }
                Ok(total)
            })?;
        }
        model.config.freeze_plm = true;
    }
    save_training(run, model, &state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainTask {
    Supervised {
        src: PathBuf,
        tgt: PathBuf,
        src_lang: String,
        tgt_lang: String,
        /// Train both directions with the summed joint loss.
        #[serde(default)]
        bidirectional: bool,
    },
    /// Reference-language unsupervised training; `steps` counts rounds.
    Runmt {
        langs: LanguageTriple,
        mono: BTreeMap<String, PathBuf>,
        parallel_source: PathBuf,
        parallel_reference: PathBuf,
        objectives: Vec<Objective>,
        #[serde(default = "d_one")]
        agreement_beam: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub tokenizer: PathBuf,
    #[serde(default)]
    pub init: Option<PathBuf>,
    #[serde(default = "empty_object")]
    pub model: Value,
    pub task: TrainTask,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub dev: Option<EvalFiles>,
    #[serde(default)]
    pub test: Option<EvalFiles>,
    /// Dev BLEU is logged to the metrics every this many steps (0 = never).
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default = "d_one")]
    pub beam: usize,
    #[serde(default = "d_decode_len")]
    pub decode_max_len: usize,
}

fn dev_bleu_every(run: &mut Run, model: &Model, tok: &Tokenizer, c: &TrainConfig, state: &mut TrainState, step: u64) -> Result<()> {
    if let Some(dev) = &c.dev {
        if c.eval_every > 0 && (step + 1) % c.eval_every == 0 {
            let b = evaluate(run, model, tok, dev, DecodeOptions { beam: c.beam, max_len: c.decode_max_len }, "dev")?;
            state.record_bleu("dev", b.bleu);
        }
    }
    Ok(())
}

fn train(c: &TrainConfig, run: &mut Run) -> Result<()> {
    c.loss.validate()?;
    let tok = load_tokenizer(run, &c.tokenizer)?;
    let mut model = initial_model(run, &tok, &c.init, &c.model)?;
    let mut state = TrainState::new(c.adam, run.seed);
    match &c.task {
        TrainTask::Supervised { src, tgt, src_lang, tgt_lang, bidirectional } => {
            let a = encode(&tok, &read_text(run, src)?);
            let b = encode(&tok, &read_text(run, tgt)?);
            let (a, b) = filter_pairs(run, a, b, c.max_len)?;
            let mut sampler = Sampler::new(a.len(), c.batch_size)?;
            for step in 0..c.steps {
                let idx = sampler.next(&mut state.rng);
                let (x, y) = (pick(&a, &idx), pick(&b, &idx));
                let smoothing = c.loss.smoothing;
                train_step(&mut model, &mut state, "supervised", |m, g, fwd, _| {
                    if *bidirectional {
                        joint_loss(m, g, &x, &y, src_lang, tgt_lang, smoothing, fwd).map(Some)
                    } else {
                        m.translation_loss(g, &x, &y, src_lang, tgt_lang, None, smoothing, fwd).map(Some)
                    }
                })?;
                dev_bleu_every(run, &model, &tok, c, &mut state, step)?;
            }
        }
        TrainTask::Runmt { langs, mono, parallel_source, parallel_reference, objectives, agreement_beam } => {
            let mut data = RunmtData::default();
            for l in langs.all() {
                let p = mono.get(l).ok_or_else(|| Error::Usage(format!("config field `task.mono.{l}`: missing")))?;
                data.mono.insert(l.to_string(), filter_mono(encode(&tok, &read_text(run, p)?), c.max_len));
            }
            let s = encode(&tok, &read_text(run, parallel_source)?);
            let r = encode(&tok, &read_text(run, parallel_reference)?);
            (data.parallel_source, data.parallel_reference) = filter_pairs(run, s, r, c.max_len)?;
            let cfg = RunmtConfig {
                langs: langs.clone(),
                objectives: objectives.clone(),
                batch_size: c.batch_size,
                max_len: c.max_len,
                loss: c.loss,
                agreement_beam: *agreement_beam,
            };
            let mut trainer = RunmtTrainer::new(cfg, &data)?;
            for step in 0..c.steps {
                trainer.round(&mut model, &mut state, &data)?;
                dev_bleu_every(run, &model, &tok, c, &mut state, step)?;
            }
        }
    }
    final_eval(run, &model, &tok, &c.dev, &c.test, DecodeOptions { beam: c.beam, max_len: c.decode_max_len })?;
    save_training(run, model, &state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneStageConfig {
    pub tokenizer: PathBuf,
    pub parent: PathBuf,
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    #[serde(default = "d_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub dev: Option<EvalFiles>,
    #[serde(default)]
    pub test: Option<EvalFiles>,
    #[serde(default = "d_one")]
    pub beam: usize,
    #[serde(default = "d_decode_len")]
    pub decode_max_len: usize,
}

fn finetune_stage(c: &FinetuneStageConfig, run: &mut Run) -> Result<()> {
    let tok = load_tokenizer(run, &c.tokenizer)?;
    let parent = load_checkpoint(run, &c.parent)?;
    check_vocab(&tok, &parent.model)?;
    let a = encode(&tok, &read_text(run, &c.src)?);
    let b = encode(&tok, &read_text(run, &c.tgt)?);
    let (a, b) = filter_pairs(run, a, b, c.max_len)?;
    let cfg = FinetuneConfig { steps: c.steps, batch_size: c.batch_size, smoothing: c.smoothing, adam: c.adam, seed: run.seed };
    let (child, state) = finetune(&parent, &a, &b, &c.src_lang, &c.tgt_lang, &cfg)?;
    final_eval(run, &child.model, &tok, &c.dev, &c.test, DecodeOptions { beam: c.beam, max_len: c.decode_max_len })?;
    child.save(&run.file(CHECKPOINT_FILE))?;
    state.save(&run.file(STATE_FILE))?;
    write_string_atomic(&run.file(METRICS_FILE), &state.history_csv())?;
    run.metrics.insert("steps".into(), child.step as f64);
    Ok(())
}

#[derive(Serialize)]
struct NbestHyp {
    tokens: Vec<String>,
    logprob: f64,
}

#[derive(Serialize)]
struct NbestLine<'a> {
    src: &'a str,
    hyps: Vec<NbestHyp>,
}

fn write_translations(run: &mut Run, tok: &Tokenizer, src: &[String], nbest: &[Vec<Hypothesis>], keep: usize, reference: &Option<PathBuf>) -> Result<()> {
    let best: Vec<String> = nbest.iter().map(|n| tok.decode(&n[0].tokens)).collect();
    let mut jsonl = String::new();
    for (s, n) in src.iter().zip(nbest) {
        let hyps = n
            .iter()
            .take(keep.max(1))
            .map(|h| NbestHyp { tokens: tok.vocab.decode(&h.tokens), logprob: h.logprob })
            .collect();
        jsonl.push_str(&serde_json::to_string(&NbestLine { src: s, hyps })?);
        jsonl.push('\n');
    }
    write_string_atomic(&run.file("translations.txt"), &lines_text(&best))?;
    write_string_atomic(&run.file("nbest.jsonl"), &jsonl)?;
    if let Some(r) = reference {
        let refs = read_text(run, r)?;
        run.metrics.insert("bleu".into(), corpus_bleu(&best, &refs, BleuTokenizer::default())?.bleu);
    }
    run.metrics.insert("sentences".into(), src.len() as f64);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateConfig {
    pub tokenizer: PathBuf,
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(default = "d_beam")]
    pub beam: usize,
    #[serde(default = "d_decode_len")]
    pub max_len: usize,
    /// Hypotheses per source in `nbest.jsonl`.
    #[serde(default = "d_one")]
    pub nbest: usize,
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

fn translate(c: &TranslateConfig, run: &mut Run) -> Result<()> {
    let tok = load_tokenizer(run, &c.tokenizer)?;
    let model = load_checkpoint(run, &c.checkpoint)?.model;
    check_vocab(&tok, &model)?;
    let src = read_text(run, &c.input)?;
    let nbest = model.translate(&encode(&tok, &src), &c.src_lang, &c.tgt_lang, DecodeOptions { beam: c.beam, max_len: c.max_len })?;
    write_translations(run, &tok, &src, &nbest, c.nbest, &c.reference)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberFiles {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub src_lang: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub tokenizer: PathBuf,
    pub members: Vec<MemberFiles>,
    pub tgt_lang: String,
    #[serde(default = "d_beam")]
    pub beam: usize,
    #[serde(default = "d_decode_len")]
    pub max_len: usize,
    #[serde(default = "d_one")]
    pub nbest: usize,
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

fn ensemble_decode(c: &EnsembleConfig, run: &mut Run) -> Result<()> {
    if c.members.is_empty() {
        return Err(Error::Usage("config field `members`: at least one member required".into()));
    }
    let tok = load_tokenizer(run, &c.tokenizer)?;
    let mut models = Vec::new();
    let mut texts = Vec::new();
    for m in &c.members {
        let model = load_checkpoint(run, &m.checkpoint)?.model;
        check_vocab(&tok, &model)?;
        models.push(model);
        texts.push(read_text(run, &m.input)?);
    }
    let sources: Vec<Vec<Vec<usize>>> = texts.iter().map(|t| encode(&tok, t)).collect();
    let members: Vec<Member> = c
        .members
        .iter()
        .zip(&models)
        .zip(&sources)
        .map(|((spec, model), src)| Member::new(model, src, &spec.src_lang))
        .collect();
    let (nbest, stats) = joint_decode(&members, &c.tgt_lang, DecodeOptions { beam: c.beam, max_len: c.max_len })?;
    run.metrics.insert("max_normalization_error".into(), stats.max_normalization_error);
    write_translations(run, &tok, &texts[0], &nbest, c.nbest, &c.reference)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfstStageConfig {
    pub tokenizer: PathBuf,
    /// Forward `src -> tgt` checkpoint.
    pub forward: PathBuf,
    /// Starting point of both backward models; defaults to `forward`.
    #[serde(default)]
    pub backward: Option<PathBuf>,
    pub unlabeled: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Explicit bags; overrides `gamma`.
    #[serde(default)]
    pub bags: Option<Vec<LengthBag>>,
    #[serde(default = "d_backward_steps")]
    pub backward_steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: Option<AdamConfig>,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    #[serde(default = "d_one")]
    pub min_split: usize,
}

#[derive(Serialize)]
struct BagRow {
    bag: usize,
    max_len: Option<usize>,
    gamma: f64,
    total: usize,
    kept: usize,
    rate: f64,
}

fn cfst(c: &CfstStageConfig, run: &mut Run) -> Result<()> {
    let tok = load_tokenizer(run, &c.tokenizer)?;
    let forward = load_checkpoint(run, &c.forward)?.model;
    check_vocab(&tok, &forward)?;
    let backward = match &c.backward {
        Some(p) => load_checkpoint(run, p)?.model,
        None => forward.clone(),
    };
    check_vocab(&tok, &backward)?;
    let lines = read_text(run, &c.unlabeled)?;
    let u = encode(&tok, &lines);
    let mut cfg = CfstConfig::new(c.gamma, run.seed);
    if let Some(b) = &c.bags {
        cfg.bags = b.clone();
    }
    cfg.backward.steps = c.backward_steps;
    cfg.backward.batch_size = c.batch_size;
    if let Some(a) = c.adam {
        cfg.backward.adam = a;
    }
    cfg.max_len = c.max_len;
    cfg.min_split = c.min_split;
    let state = btbleu_filter(&forward, &backward, &u, &c.src_lang, &c.tgt_lang, &cfg)?;
    state.check_invariants()?;
    let mut q = String::new();
    for &i in &state.selected {
        writeln!(
            q,
            "{}\t{}\t{:.4}\t{}",
            clean(&lines[i]),
            clean(&tok.decode(&state.translations[i])),
            state.scores[i],
            state.bags[i]
        )
        .expect("string write");
    }
    write_string_atomic(&run.file("q.tsv"), &q)?;
    let bags: Vec<BagRow> = state
        .bag_report(cfg.bags.len())
        .into_iter()
        .map(|(bag, total, kept)| BagRow {
            bag,
            max_len: cfg.bags[bag].max_len,
            gamma: cfg.bags[bag].gamma,
            total,
            kept,
            rate: if total == 0 { 0.0 } else { kept as f64 / total as f64 },
        })
        .collect();
    let report = json!({
        "total": u.len(),
        "selected": state.selected.len(),
        "split": [state.split[0].len(), state.split[1].len()],
        "bags": bags,
    });
    write_json_atomic(&run.file("filter_report.json"), &report)?;
    run.metrics.insert("selected".into(), state.selected.len() as f64);
    run.metrics.insert("acceptance_rate".into(), state.selected.len() as f64 / u.len() as f64);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25StageConfig {
    /// Training pairs as `source<TAB>target` lines (or plain source lines).
    pub corpus: PathBuf,
    pub queries: PathBuf,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: TopKMode,
    #[serde(default)]
    pub params: Bm25Params,
}

fn bm25_select(c: &Bm25StageConfig, run: &mut Run) -> Result<()> {
    c.params.validate()?;
    let lines = read_text(run, &c.corpus)?;
    let sources: Vec<Vec<String>> = lines.iter().map(|l| words(l.split('\t').next().unwrap_or(""))).collect();
    let queries: Vec<Vec<String>> = read_text(run, &c.queries)?.iter().map(|l| words(l)).collect();
    let index = Bm25Index::build(&sources, c.params)?;
    let sel = select_topk(&index, &queries, c.k, c.mode)?;
    if sel.truncated_k {
        run.warn(format!("k = {} exceeds the corpus size {}; everything selected", c.k, index.len()));
    }
    let picked: Vec<&String> = sel.indices.iter().map(|&i| &lines[i]).collect();
    write_string_atomic(&run.file("selected.tsv"), &lines_text(&picked))?;
    index.save(&run.file("index.bin"))?;
    let (min, mean, max) = sel.score_summary();
    let report = json!({
        "k": c.k,
        "mode": c.mode,
        "selected": sel.indices.len(),
        "truncated_k": sel.truncated_k,
        "score": {"min": min, "mean": mean, "max": max},
        "per_query": sel.per_query,
    });
    write_json_atomic(&run.file("report.json"), &report)?;
    run.metrics.insert("selected".into(), sel.indices.len() as f64);
    run.metrics.insert("mean_score".into(), mean);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub hyp: PathBuf,
    pub reference: PathBuf,
    #[serde(default)]
    pub tokenize: BleuTokenizer,
}

/// Scores as printed by `score`.
pub fn score_json(b: &BleuScore) -> Value {
    json!({
        "bleu": b.bleu,
        "precisions": b.precisions,
        "bp": b.bp,
        "lengths": {"hyp": b.hyp_len, "ref": b.ref_len},
    })
}

fn score(c: &ScoreConfig, run: &mut Run) -> Result<()> {
    let hyps = read_text(run, &c.hyp)?;
    let refs = read_text(run, &c.reference)?;
    let b = corpus_bleu(&hyps, &refs, c.tokenize)?;
    let out = score_json(&b);
    eprintln!("bleu={:.1}", b.bleu);
    println!("{}", serde_json::to_string(&out)?);
    if !run.out.as_os_str().is_empty() {
        write_json_atomic(&run.file("score.json"), &out)?;
    }
    run.metrics.insert("bleu".into(), b.bleu);
    Ok(())
}

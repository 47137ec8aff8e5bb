//! Command-line front end. Every subcommand resolves a typed JSON config
//! (file, then flag overrides), writes its artifacts atomically into
//! `--out`, and finishes with a `manifest.json` listing them.

mod pipeline;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_json_atomic;

pub use pipeline::{run_pipeline, ExperimentConfig, StageSpec};
pub use report::{report_rows, ReportRow};

pub const MANIFEST: &str = "manifest.json";

pub const COMMANDS: [&str; 11] = [
    "learn-bpe",
    "align",
    "pretrain",
    "train",
    "translate",
    "ensemble-decode",
    "cfst",
    "bm25-select",
    "finetune",
    "score",
    "report",
];

#[derive(Parser, Debug)]
#[command(name = "nmtkit", version, about = "Desk-scale neural machine translation experiments")]
pub struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a joint BPE model and vocabulary.
    LearnBpe(LearnBpeArgs),
    /// Sentence-align paragraph-aligned files.
    Align(AlignArgs),
    /// Language-model pretraining (MLM, CLM, TLM or PLM MLM).
    Pretrain(PretrainArgs),
    /// Supervised or reference-language unsupervised training.
    Train(TrainArgs),
    /// Translate a file with a single checkpoint.
    Translate(TranslateArgs),
    /// Joint decoding with per-step averaged member distributions.
    EnsembleDecode(EnsembleArgs),
    /// BT-BLEU filtered pseudo-parallel data.
    Cfst(CfstArgs),
    /// BM25 selection of training pairs close to a query set.
    Bm25Select(Bm25Args),
    /// Fine-tune a parent checkpoint on parallel data.
    Finetune(FinetuneArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score(ScoreArgs),
    /// Collect run manifests into CSV and JSON tables.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
pub struct LearnBpeArgs {
    /// Monolingual corpus as LANG=PATH; repeat per language.
    #[arg(long = "corpus", value_name = "LANG=PATH")]
    pub corpus: Vec<String>,
    #[arg(long)]
    pub merges: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct AlignArgs {
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long)]
    pub tgt: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct PretrainArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct TranslateArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub src_lang: Option<String>,
    #[arg(long)]
    pub tgt_lang: Option<String>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Member as CHECKPOINT:LANG:INPUT; repeat per member.
    #[arg(long = "member", value_name = "CHECKPOINT:LANG:INPUT")]
    pub member: Vec<String>,
    #[arg(long)]
    pub tgt_lang: Option<String>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct CfstArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub forward: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct Bm25Args {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub parent: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// 13a, char or none.
    #[arg(long)]
    pub tokenize: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ReportArgs {
    /// Directory whose subdirectories hold run manifests.
    pub run_dir: Option<PathBuf>,
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn put<T: Serialize>(o: &mut Map<String, Value>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        o.insert(key.to_string(), serde_json::to_value(v).expect("plain value"));
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::LearnBpe(_) => "learn-bpe",
            Command::Align(_) => "align",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Translate(_) => "translate",
            Command::EnsembleDecode(_) => "ensemble-decode",
            Command::Cfst(_) => "cfst",
            Command::Bm25Select(_) => "bm25-select",
            Command::Finetune(_) => "finetune",
            Command::Score(_) => "score",
            Command::Report(_) => "report",
        }
    }

    /// Flag values as top-level config keys.
    pub fn overrides(&self) -> Result<Map<String, Value>> {
        let mut o = Map::new();
        match self {
            Command::LearnBpe(a) => {
                if !a.corpus.is_empty() {
                    let mut c = Map::new();
                    for spec in &a.corpus {
                        let (lang, path) = spec
                            .split_once('=')
                            .ok_or_else(|| Error::Usage(format!("--corpus expects LANG=PATH, got `{spec}`")))?;
                        c.insert(lang.to_string(), Value::String(path.to_string()));
                    }
                    o.insert("corpus".into(), Value::Object(c));
                }
                put(&mut o, "merges", &a.merges);
            }
            Command::Align(a) => {
                put(&mut o, "src", &a.src.as_deref().map(path_value));
                put(&mut o, "tgt", &a.tgt.as_deref().map(path_value));
            }
            Command::Pretrain(a) => {
                put(&mut o, "tokenizer", &a.tokenizer.as_deref().map(path_value));
                put(&mut o, "steps", &a.steps);
            }
            Command::Train(a) => {
                put(&mut o, "tokenizer", &a.tokenizer.as_deref().map(path_value));
                put(&mut o, "init", &a.init.as_deref().map(path_value));
                put(&mut o, "steps", &a.steps);
            }
            Command::Translate(a) => {
                put(&mut o, "tokenizer", &a.tokenizer.as_deref().map(path_value));
                put(&mut o, "checkpoint", &a.checkpoint.as_deref().map(path_value));
                put(&mut o, "input", &a.input.as_deref().map(path_value));
                put(&mut o, "src_lang", &a.src_lang);
                put(&mut o, "tgt_lang", &a.tgt_lang);
                put(&mut o, "beam", &a.beam);
            }
            Command::EnsembleDecode(a) => {
                put(&mut o, "tokenizer", &a.tokenizer.as_deref().map(path_value));
                if !a.member.is_empty() {
                    let mut ms = Vec::new();
                    for spec in &a.member {
                        let parts: Vec<&str> = spec.splitn(3, ':').collect();
                        let [ck, lang, input] = parts[..] else {
                            return Err(Error::Usage(format!("--member expects CHECKPOINT:LANG:INPUT, got `{spec}`")));
                        };
                        ms.push(json!({"checkpoint": ck, "src_lang": lang, "input": input}));
                    }
                    o.insert("members".into(), Value::Array(ms));
                }
                put(&mut o, "tgt_lang", &a.tgt_lang);
                put(&mut o, "beam", &a.beam);
            }
            Command::Cfst(a) => {
                put(&mut o, "tokenizer", &a.tokenizer.as_deref().map(path_value));
                put(&mut o, "forward", &a.forward.as_deref().map(path_value));
                put(&mut o, "unlabeled", &a.unlabeled.as_deref().map(path_value));
                put(&mut o, "gamma", &a.gamma);
            }
            Command::Bm25Select(a) => {
                put(&mut o, "corpus", &a.corpus.as_deref().map(path_value));
                put(&mut o, "queries", &a.queries.as_deref().map(path_value));
                put(&mut o, "k", &a.k);
            }
            Command::Finetune(a) => {
                put(&mut o, "tokenizer", &a.tokenizer.as_deref().map(path_value));
                put(&mut o, "parent", &a.parent.as_deref().map(path_value));
                put(&mut o, "steps", &a.steps);
            }
            Command::Score(a) => {
                put(&mut o, "hyp", &a.hyp.as_deref().map(path_value));
                put(&mut o, "reference", &a.reference.as_deref().map(path_value));
                put(&mut o, "tokenize", &a.tokenize);
            }
            Command::Report(a) => {
                put(&mut o, "run_dir", &a.run_dir.as_deref().map(path_value));
            }
        }
        Ok(o)
    }
}

/// Parses a config value into `T`, naming the offending field on error.
pub fn parse_config<T: DeserializeOwned>(value: Value) -> Result<T> {
    parse_config_at("", value)
}

/// As [`parse_config`] for a value nested under `prefix`.
pub fn parse_config_at<T: DeserializeOwned>(prefix: &str, value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = match (prefix, e.path().to_string()) {
            (p, inner) if inner == "." => p.to_string(),
            ("", inner) => inner,
            (p, inner) => format!("{p}.{inner}"),
        };
        let inner = e.into_inner();
        if path.is_empty() {
            Error::Usage(format!("config: {inner}"))
        } else {
            Error::Usage(format!("config field `{path}`: {inner}"))
        }
    })
}

/// Reads a JSON config object; a missing path gives `{}`.
pub fn read_config(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Usage(format!("config {} must hold a JSON object", path.display()))),
        Err(e) => Err(Error::Usage(format!("config {}: {e}", path.display()))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileEntry {
    pub fn of(path: &Path, name: String) -> Result<Self> {
        let data = fs::read(path)?;
        Ok(FileEntry { path: name, bytes: data.len() as u64, sha256: hex(&Sha256::digest(&data)) })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the resolved config as compact JSON with sorted keys.
    pub config_sha256: String,
    pub config: Value,
    /// On-disk format versions of the artifacts.
    pub formats: BTreeMap<String, u32>,
    pub inputs: Vec<FileEntry>,
    /// Produced files, relative to the run directory.
    pub files: Vec<FileEntry>,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Where a subcommand writes, plus what it read and measured.
pub struct Run {
    pub out: PathBuf,
    pub seed: u64,
    files: Vec<String>,
    inputs: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Run {
    pub fn new(out: PathBuf, seed: u64) -> Self {
        Run { out, seed, files: Vec::new(), inputs: Vec::new(), metrics: BTreeMap::new(), warnings: Vec::new() }
    }

    /// Path of an artifact, registered for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn input(&mut self, path: &Path) -> PathBuf {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    pub fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    fn finish(self, command: &str, config: Value) -> Result<Manifest> {
        let canonical = serde_json::to_string(&config)?;
        let mut files = Vec::new();
        for name in &self.files {
            files.push(FileEntry::of(&self.out.join(name), name.clone())?);
        }
        let mut inputs = Vec::new();
        for p in &self.inputs {
            if p.is_file() {
                inputs.push(FileEntry::of(p, p.to_string_lossy().into_owned())?);
            }
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: self.seed,
            config_sha256: sha256_hex(canonical.as_bytes()),
            config,
            formats: BTreeMap::from([("container".to_string(), crate::numerics::container::VERSION)]),
            inputs,
            files,
            metrics: self.metrics,
            warnings: self.warnings,
        };
        write_json_atomic(&self.out.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }
}

/// Runs one subcommand on a config object. `seed` and `out` override the
/// config's own fields.
pub fn execute(command: &str, mut config: Map<String, Value>, seed: Option<u64>, out: Option<&Path>) -> Result<Manifest> {
    if let Some(s) = seed {
        config.insert("seed".into(), json!(s));
    }
    let seed = match config.get("seed") {
        None => 0,
        Some(v) => v.as_u64().ok_or_else(|| Error::Usage("config field `seed`: expected an unsigned integer".into()))?,
    };
    config.remove("seed");
    let out = match (out, command) {
        (Some(o), _) => o.to_path_buf(),
        (None, "report") => match config.get("run_dir").and_then(Value::as_str) {
            Some(d) => PathBuf::from(d),
            None => return Err(Error::Usage("report needs a run directory".into())),
        },
        (None, "score") => PathBuf::new(),
        (None, _) => return Err(Error::Usage(format!("{command} needs --out"))),
    };
    let mut run = Run::new(out, seed);
    let resolved = stages::dispatch(command, Value::Object(config), &mut run)?;
    if command == "score" && run.out.as_os_str().is_empty() {
        // Nothing to record without an output directory.
        return Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            seed,
            config_sha256: sha256_hex(serde_json::to_string(&resolved)?.as_bytes()),
            config: resolved,
            formats: BTreeMap::new(),
            inputs: Vec::new(),
            files: Vec::new(),
            metrics: run.metrics,
            warnings: run.warnings,
        });
    }
    fs::create_dir_all(&run.out)?;
    let mut full = resolved;
    if let Value::Object(m) = &mut full {
        m.insert("seed".into(), json!(seed));
    }
    run.finish(command, full)
}

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on any other failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = cli
        .command
        .overrides()
        .and_then(|o| {
            let mut config = read_config(cli.config.as_deref())?;
            config.extend(o);
            execute(cli.command.name(), config, cli.seed, cli.out.as_deref())
        });
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

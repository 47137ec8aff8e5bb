//! Pre-norm transformer encoder-decoder over packed (unpadded) batches.
//!
//! Token embeddings are shared by encoder, decoder and the output layer.
//! The decoder starts from the target-language tag; the encoder reads the
//! source followed by EOS.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::dropnet::{drop_net_sample, Branch};
use crate::model::pattern::AttentionPattern;
use crate::numerics::{AllKeys, AttnSegment, Binder, CausalKeys, KeySelector, ParamStore, Tape, Tensor, Var};
use crate::text::vocab::{CLS, EOS};

/// Sinusoidal position table `[rows, width]`.
pub fn sinusoid_table(rows: usize, width: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * width];
    for pos in 0..rows {
        for i in 0..width {
            let k = (i / 2 * 2) as f64 / width as f64;
            let angle = pos as f64 / 10000f64.powf(k);
            t[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Row layout of sequences packed back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packed {
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Packed {
    pub fn new(lens: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(lens.len());
        let mut at = 0;
        for &l in &lens {
            offsets.push(at);
            at += l;
        }
        Packed { offsets, lens }
    }

    pub fn of<T>(seqs: &[Vec<T>]) -> Self {
        Packed::new(seqs.iter().map(Vec::len).collect())
    }

    pub fn total(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn self_segments(&self) -> Vec<AttnSegment> {
        self.offsets
            .iter()
            .zip(&self.lens)
            .map(|(&o, &l)| AttnSegment::square(o, l))
            .collect()
    }

    /// Sequence `i` of `self` attends to sequence `i` of `keys`.
    pub fn cross_segments(&self, keys: &Packed) -> Vec<AttnSegment> {
        (0..self.len())
            .map(|i| AttnSegment {
                q_start: self.offsets[i],
                q_len: self.lens[i],
                k_start: keys.offsets[i],
                k_len: keys.lens[i],
            })
            .collect()
    }

    /// Position of every packed row inside its sequence.
    pub fn positions(&self) -> Vec<usize> {
        self.lens.iter().flat_map(|&l| 0..l).collect()
    }
}

/// PLM output placed on a tape, one block of rows per sequence.
#[derive(Debug, Clone)]
pub struct PlmCtx {
    pub h: Var,
    pub pack: Packed,
}

/// Training or inference behaviour of a forward pass.
pub struct Forward<'r> {
    rng: Option<&'r mut ChaCha8Rng>,
    /// Branch used by each fused sublayer, in execution order.
    pub branches: Vec<Branch>,
}

impl<'r> Forward<'r> {
    pub fn inference() -> Self {
        Forward { rng: None, branches: Vec::new() }
    }

    /// Training mode: drop-net samples a branch per fused layer per call.
    pub fn training(rng: &'r mut ChaCha8Rng) -> Self {
        Forward { rng: Some(rng), branches: Vec::new() }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    fn branch(&mut self, p_net: f64) -> Branch {
        let b = match self.rng.as_deref_mut() {
            Some(rng) => drop_net_sample(p_net, rng),
            None => Branch::BothAveraged,
        };
        self.branches.push(b);
        b
    }
}

/// A tape plus the model parameters bound onto it.
pub struct Graph<'p> {
    pub tape: Tape,
    pub binder: Binder<'p>,
    eps: f64,
}

impl<'p> Graph<'p> {
    /// Recording graph; PLM weights enter as constants when the model
    /// freezes them.
    pub fn new(model: &'p Model) -> Self {
        Graph::with_tape(model, Tape::new())
    }

    /// Value-only graph.
    pub fn inference(model: &'p Model) -> Self {
        Graph::with_tape(model, Tape::inference())
    }

    /// Recording graph that also tracks PLM gradients (PLM pretraining).
    pub fn unfrozen(model: &'p Model) -> Self {
        Graph { tape: Tape::new(), binder: Binder::new(&model.params), eps: model.config.ln_eps }
    }

    fn with_tape(model: &'p Model, tape: Tape) -> Self {
        let mut binder = Binder::new(&model.params);
        if model.config.freeze_plm {
            binder = binder.freeze_prefix("plm.");
        }
        Graph { tape, binder, eps: model.config.ln_eps }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.binder.get(&mut self.tape, name)
    }

    /// Binds every parameter now, so later truncation keeps them.
    pub fn bind_all(&mut self) -> Result<()> {
        let names: Vec<String> = self.binder.store().names().map(str::to_string).collect();
        for n in names {
            self.param(&n)?;
        }
        Ok(())
    }

    /// `x · W + b` with `W: [in, out]`.
    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{prefix}.gamma"))?;
        let b = self.param(&format!("{prefix}.beta"))?;
        self.tape.layer_norm(x, g, b, self.eps)
    }

    pub fn ffn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(&format!("{prefix}.in"), x)?;
        let h = self.tape.relu(h)?;
        self.linear(&format!("{prefix}.out"), h)
    }

    /// Projects queries from `xq` and keys/values from `xkv`, attends and
    /// applies the output projection.
    pub fn attention(
        &mut self,
        prefix: &str,
        heads: usize,
        xq: Var,
        xkv: Var,
        segments: &[AttnSegment],
        selector: &dyn KeySelector,
    ) -> Result<Var> {
        let q = self.linear(&format!("{prefix}.q"), xq)?;
        let k = self.linear(&format!("{prefix}.k"), xkv)?;
        let v = self.linear(&format!("{prefix}.v"), xkv)?;
        let a = self.tape.attention(q, k, v, heads, segments, selector)?;
        self.linear(&format!("{prefix}.o"), a)
    }

    /// Combines two attention outputs according to a drop-net branch.
    pub fn fuse(&mut self, first: Var, second: Option<Var>, branch: Branch) -> Result<Var> {
        match (second, branch) {
            (None, _) | (_, Branch::FirstOnly) => Ok(first),
            (Some(s), Branch::SecondOnly) => Ok(s),
            (Some(s), Branch::BothAveraged) => {
                let sum = self.tape.add(first, s)?;
                self.tape.scale(sum, 0.5)
            }
        }
    }
}

/// Model configuration and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    positions: Arc<Vec<f64>>,
    plm_positions: Arc<Vec<f64>>,
}

/// Per-token language ids for sequences that are all in `lang`.
pub fn uniform_langs(seqs: &[Vec<usize>], lang: usize) -> Vec<Vec<usize>> {
    seqs.iter().map(|s| vec![lang; s.len()]).collect()
}

impl Model {
    /// Fresh parameters: Xavier-uniform weights, zero biases, unit layer
    /// norms, embeddings uniform with variance `1/width`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.expected_params() {
            let t = if name.ends_with(".gamma") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Tensor::zeros(&shape)
            } else if name.starts_with("embed.") || name.starts_with("plm.embed.") {
                let a = (3.0 / shape[1] as f64).sqrt();
                Tensor::uniform(&shape, -a, a, &mut rng)
            } else {
                Tensor::xavier_uniform(&shape, &mut rng)
            };
            params.insert(name, t);
        }
        Model::from_parts(config, params)
    }

    /// Wraps existing parameters after checking they match the config.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.expected_params();
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, config implies {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params
                .get(name)
                .map_err(|_| Error::Format(format!("checkpoint lacks `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
        }
        let positions = Arc::new(sinusoid_table(config.max_positions, config.width));
        let plm_positions = Arc::new(
            config
                .plm
                .as_ref()
                .map_or_else(Vec::new, |p| sinusoid_table(p.max_positions, p.width)),
        );
        Ok(Model { config, params, positions, plm_positions })
    }

    pub fn bit_eq(&self, other: &Model) -> bool {
        self.config == other.config && self.params.bit_eq(&other.params)
    }

    fn check_lengths(&self, seqs: &[Vec<usize>], max: usize, what: &str) -> Result<()> {
        if let Some(s) = seqs.iter().find(|s| s.len() > max) {
            return Err(Error::Input(format!(
                "{what} sequence of {} tokens exceeds {max} positions",
                s.len()
            )));
        }
        if seqs.iter().any(Vec::is_empty) {
            return Err(Error::Input(format!("empty {what} sequence")));
        }
        Ok(())
    }

    /// Scaled token embeddings plus positions (and languages when enabled).
    pub fn embed(&self, g: &mut Graph, seqs: &[Vec<usize>], langs: &[Vec<usize>]) -> Result<Var> {
        self.check_lengths(seqs, self.config.max_positions, "input")?;
        let d = self.config.width;
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let pos = Packed::of(seqs).positions();
        self.embed_rows(g, &ids, &pos, langs.iter().flatten().copied().collect::<Vec<_>>().as_slice(), d)
    }

    /// Embeds rows given token ids, positions and language ids directly.
    pub fn embed_rows(&self, g: &mut Graph, ids: &[usize], pos: &[usize], langs: &[usize], d: usize) -> Result<Var> {
        let table = g.param("embed.tokens")?;
        let x = g.tape.embedding(table, ids)?;
        let x = g.tape.scale(x, (d as f64).sqrt())?;
        let mut pe = Vec::with_capacity(ids.len() * d);
        for &p in pos {
            if p >= self.config.max_positions {
                return Err(Error::Input(format!("position {p} beyond {}", self.config.max_positions)));
            }
            pe.extend_from_slice(&self.positions[p * d..(p + 1) * d]);
        }
        let pe = g.tape.constant_owned(vec![ids.len(), d], pe)?;
        let mut x = g.tape.add(x, pe)?;
        if self.config.lang_embeddings {
            if langs.len() != ids.len() {
                return Err(Error::Config("language ids required for every token".into()));
            }
            let lt = g.param("embed.langs")?;
            let le = g.tape.embedding(lt, langs)?;
            x = g.tape.add(x, le)?;
        }
        Ok(x)
    }

    /// Encoder stack. `causal` replaces every self-attention pattern with a
    /// future mask (used for causal language modelling).
    pub fn encode(
        &self,
        g: &mut Graph,
        seqs: &[Vec<usize>],
        langs: &[Vec<usize>],
        causal: bool,
        plm: Option<&PlmCtx>,
        fwd: &mut Forward,
    ) -> Result<(Var, Packed)> {
        let cfg = &self.config;
        if cfg.fusion.encoder() && plm.is_none() {
            return Err(Error::Config("encoder fusion needs PLM context".into()));
        }
        let pack = Packed::of(seqs);
        let mut x = self.embed(g, seqs, langs)?;
        let segs = pack.self_segments();
        for l in 0..cfg.layers {
            let p = format!("enc.layers.{l}");
            let pattern = cfg.encoder_pattern(l);
            if !causal {
                for &len in &pack.lens {
                    pattern.validate_for(len)?;
                }
            }
            let selector: &dyn KeySelector = if causal { &CausalKeys } else { &pattern };
            let a = g.layer_norm(&format!("{p}.ln1"), x)?;
            let fused = cfg.fusion.encoder();
            let branch = if fused { fwd.branch(cfg.drop_net) } else { Branch::FirstOnly };
            let s = match branch {
                Branch::SecondOnly => None,
                _ => Some(g.attention(&format!("{p}.self_attn"), cfg.heads, a, a, &segs, selector)?),
            };
            let pa = match (plm, fused && branch != Branch::FirstOnly) {
                (Some(ctx), true) => {
                    let cs = pack.cross_segments(&ctx.pack);
                    Some(g.attention(&format!("{p}.plm_attn"), cfg.heads, a, ctx.h, &cs, &AllKeys)?)
                }
                _ => None,
            };
            let y = match (s, pa) {
                (Some(s), pa) => g.fuse(s, pa, branch)?,
                (None, Some(pa)) => pa,
                (None, None) => return Err(Error::Config("encoder fusion needs PLM context".into())),
            };
            x = g.tape.add(x, y)?;
            let a = g.layer_norm(&format!("{p}.ln2"), x)?;
            let f = g.ffn(&format!("{p}.ffn"), a)?;
            x = g.tape.add(x, f)?;
        }
        Ok((g.layer_norm("enc.ln", x)?, pack))
    }

    /// Teacher-forced decoder stack; returns final hidden rows.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        seqs: &[Vec<usize>],
        langs: &[Vec<usize>],
        enc: Var,
        enc_pack: &Packed,
        plm: Option<&PlmCtx>,
        fwd: &mut Forward,
    ) -> Result<Var> {
        let cfg = &self.config;
        if cfg.fusion.decoder() && plm.is_none() {
            return Err(Error::Config("decoder fusion needs PLM context".into()));
        }
        let pack = Packed::of(seqs);
        let mut x = self.embed(g, seqs, langs)?;
        let segs = pack.self_segments();
        let cross = pack.cross_segments(enc_pack);
        for l in 0..cfg.layers {
            let p = format!("dec.layers.{l}");
            let a = g.layer_norm(&format!("{p}.ln1"), x)?;
            let s = g.attention(&format!("{p}.self_attn"), cfg.heads, a, a, &segs, &CausalKeys)?;
            x = g.tape.add(x, s)?;
            let a = g.layer_norm(&format!("{p}.ln2"), x)?;
            let y = self.cross_block(g, l, a, enc, &cross, plm.map(|c| (c, pack.cross_segments(&c.pack))), fwd)?;
            x = g.tape.add(x, y)?;
            let a = g.layer_norm(&format!("{p}.ln3"), x)?;
            let f = g.ffn(&format!("{p}.ffn"), a)?;
            x = g.tape.add(x, f)?;
        }
        g.layer_norm("dec.ln", x)
    }

    /// Encoder cross-attention, averaged with PLM attention when the
    /// decoder is fused.
    pub(crate) fn cross_block(
        &self,
        g: &mut Graph,
        layer: usize,
        a: Var,
        enc: Var,
        cross: &[AttnSegment],
        plm: Option<(&PlmCtx, Vec<AttnSegment>)>,
        fwd: &mut Forward,
    ) -> Result<Var> {
        let cfg = &self.config;
        let p = format!("dec.layers.{layer}");
        let fused = cfg.fusion.decoder();
        let branch = if fused { fwd.branch(cfg.drop_net) } else { Branch::FirstOnly };
        let c = if branch != Branch::SecondOnly {
            Some(g.attention(&format!("{p}.cross_attn"), cfg.heads, a, enc, cross, &AllKeys)?)
        } else {
            None
        };
        let pc = match (plm, fused && branch != Branch::FirstOnly) {
            (Some((ctx, segs)), true) => Some(g.attention(&format!("{p}.plm_attn"), cfg.heads, a, ctx.h, &segs, &AllKeys)?),
            _ => None,
        };
        match (c, pc) {
            (Some(c), pc) => g.fuse(c, pc, branch),
            (None, Some(pc)) => Ok(pc),
            (None, None) => Err(Error::Config("decoder fusion needs PLM context".into())),
        }
    }

    /// Output distribution logits `[rows, vocab]` through the tied embedding.
    pub fn logits(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let table = g.param("embed.tokens")?;
        let bias = g.param("out.bias")?;
        let z = g.tape.matmul_nt(h, table)?;
        g.tape.add_row(z, bias)
    }

    /// Runs the PLM over `seqs` (CLS already included) up to `layer`;
    /// the result is the raw output of that layer.
    pub fn plm_forward(&self, g: &mut Graph, seqs: &[Vec<usize>], layer: usize) -> Result<PlmCtx> {
        let pc = self
            .config
            .plm
            .as_ref()
            .ok_or_else(|| Error::Config("model has no PLM".into()))?;
        if layer > pc.layers {
            return Err(Error::Config(format!("PLM layer {layer} beyond depth {}", pc.layers)));
        }
        self.check_lengths(seqs, pc.max_positions, "PLM")?;
        let pack = Packed::of(seqs);
        let d = pc.width;
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let table = g.param("plm.embed.tokens")?;
        let x = g.tape.embedding(table, &ids)?;
        let x = g.tape.scale(x, (d as f64).sqrt())?;
        let mut pe = Vec::with_capacity(ids.len() * d);
        for p in pack.positions() {
            pe.extend_from_slice(&self.plm_positions[p * d..(p + 1) * d]);
        }
        let pe = g.tape.constant_owned(vec![ids.len(), d], pe)?;
        let mut x = g.tape.add(x, pe)?;
        let segs = pack.self_segments();
        for l in 0..layer {
            let p = format!("plm.layers.{l}");
            let pattern = pc.attention.get(l).cloned().unwrap_or(AttentionPattern::Dense);
            for &len in &pack.lens {
                pattern.validate_for(len)?;
            }
            let a = g.layer_norm(&format!("{p}.ln1"), x)?;
            let s = g.attention(&format!("{p}.self_attn"), pc.heads, a, a, &segs, &pattern)?;
            x = g.tape.add(x, s)?;
            let a = g.layer_norm(&format!("{p}.ln2"), x)?;
            let f = g.ffn(&format!("{p}.ffn"), a)?;
            x = g.tape.add(x, f)?;
        }
        Ok(PlmCtx { h: x, pack })
    }

    /// PLM masked-LM logits over the PLM vocabulary.
    pub fn plm_logits(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let h = g.layer_norm("plm.ln", h)?;
        let table = g.param("plm.embed.tokens")?;
        let bias = g.param("plm.out.bias")?;
        let z = g.tape.matmul_nt(h, table)?;
        g.tape.add_row(z, bias)
    }

    /// `H_P` for one input: CLS is prepended, so row 0 is the CLS state
    /// and the row count is `ids.len() + 1`.
    pub fn encode_plm(&self, ids: &[usize], layer: usize) -> Result<Tensor> {
        let mut g = Graph::inference(self);
        let mut seq = Vec::with_capacity(ids.len() + 1);
        seq.push(CLS);
        seq.extend_from_slice(ids);
        let ctx = self.plm_forward(&mut g, &[seq], layer)?;
        Ok(g.tape.tensor(ctx.h))
    }

    /// Places PLM context for a batch on `g`: precomputed tensors become
    /// constants; otherwise the PLM runs on `plm_ids` (CLS + tokens), with
    /// gradients only if the PLM is not frozen.
    pub fn plm_context(
        &self,
        g: &mut Graph,
        plm_ids: &[Vec<usize>],
        cached: Option<&[Arc<Tensor>]>,
    ) -> Result<Option<PlmCtx>> {
        if self.config.fusion == crate::model::FusionMode::None {
            return Ok(None);
        }
        if let Some(cached) = cached {
            let width = self.config.plm.as_ref().map_or(0, |p| p.width);
            let mut data = Vec::new();
            let mut lens = Vec::with_capacity(cached.len());
            for t in cached {
                if t.shape().len() != 2 || t.shape()[1] != width {
                    return Err(Error::dims("plm context", t.shape(), &[width]));
                }
                lens.push(t.rows());
                data.extend_from_slice(t.data());
            }
            let rows = data.len() / width.max(1);
            let h = g.tape.constant_owned(vec![rows, width], data)?;
            return Ok(Some(PlmCtx { h, pack: Packed::new(lens) }));
        }
        Ok(Some(self.plm_forward(g, plm_ids, self.config.plm_layer)?))
    }

    /// PLM input for sentences tokenised with the translation vocabulary.
    pub fn plm_ids_from_source(&self, src: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        if self.config.fusion == crate::model::FusionMode::None {
            return Ok(Vec::new());
        }
        let pc = self.config.plm.as_ref().expect("validated");
        if pc.vocab_size != self.config.vocab_size {
            return Err(Error::Config(
                "PLM vocabulary differs from the model's; supply PLM inputs explicitly".into(),
            ));
        }
        Ok(src
            .iter()
            .map(|s| std::iter::once(CLS).chain(s.iter().copied()).collect())
            .collect())
    }

    /// Summed token cross-entropy of `tgt` given `src`, divided by the
    /// number of sentence pairs.
    #[allow(clippy::too_many_arguments)]
    pub fn translation_loss(
        &self,
        g: &mut Graph,
        src: &[Vec<usize>],
        tgt: &[Vec<usize>],
        src_lang: &str,
        tgt_lang: &str,
        plm: Option<&[Arc<Tensor>]>,
        smoothing: f64,
        fwd: &mut Forward,
    ) -> Result<Var> {
        if src.len() != tgt.len() || src.is_empty() {
            return Err(Error::Input(format!(
                "translation batch needs equal, non-zero sides: {} vs {}",
                src.len(),
                tgt.len()
            )));
        }
        let sl = self.config.lang_index(src_lang)?;
        let tl = self.config.lang_index(tgt_lang)?;
        let tag = self.config.lang_tag_id(tgt_lang)?;
        let enc_in: Vec<Vec<usize>> = src.iter().map(|s| with_eos(s)).collect();
        let dec_in: Vec<Vec<usize>> = tgt
            .iter()
            .map(|t| std::iter::once(tag).chain(t.iter().copied()).collect())
            .collect();
        let targets: Vec<usize> = tgt.iter().flat_map(|t| with_eos(t)).collect();
        let plm_ids = if plm.is_none() { self.plm_ids_from_source(src)? } else { Vec::new() };
        let ctx = self.plm_context(g, &plm_ids, plm)?;
        let (enc, enc_pack) = self.encode(g, &enc_in, &uniform_langs(&enc_in, sl), false, ctx.as_ref(), fwd)?;
        let h = self.decode(g, &dec_in, &uniform_langs(&dec_in, tl), enc, &enc_pack, ctx.as_ref(), fwd)?;
        let z = self.logits(g, h)?;
        let ce = g.tape.cross_entropy(z, &targets, smoothing)?;
        g.tape.scale(ce, 1.0 / src.len() as f64)
    }

    /// Per-sentence total log-probability of `tgt` (EOS included) given `src`.
    pub fn score(&self, src: &[Vec<usize>], tgt: &[Vec<usize>], src_lang: &str, tgt_lang: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(src.len());
        for (s, t) in src.iter().zip(tgt) {
            let mut g = Graph::inference(self);
            let loss = self.translation_loss(
                &mut g,
                std::slice::from_ref(s),
                std::slice::from_ref(t),
                src_lang,
                tgt_lang,
                None,
                0.0,
                &mut Forward::inference(),
            )?;
            out.push(-g.tape.scalar(loss)?);
        }
        Ok(out)
    }
}

pub(crate) fn with_eos(s: &[usize]) -> Vec<usize> {
    s.iter().copied().chain(std::iter::once(EOS)).collect()
}

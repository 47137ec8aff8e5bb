use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::pattern::AttentionPattern;

/// Where PLM representations are fused into the translation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionMode {
    #[default]
    None,
    /// Encoder self-attention averaged with attention over the PLM output.
    Srlf,
    /// Decoder cross-attention averaged with attention over the PLM output.
    Trlf,
    /// Both of the above.
    Brlf,
}

impl FusionMode {
    pub fn encoder(self) -> bool {
        matches!(self, FusionMode::Srlf | FusionMode::Brlf)
    }

    pub fn decoder(self) -> bool {
        matches!(self, FusionMode::Trlf | FusionMode::Brlf)
    }
}

/// Encoder-only pretrained language model stored under the `plm.` prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlmConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ffn_width: usize,
    pub max_positions: usize,
    /// One pattern per layer; empty means dense everywhere.
    #[serde(default)]
    pub attention: Vec<AttentionPattern>,
}

impl PlmConfig {
    pub fn validate(&self) -> Result<()> {
        check_dims("plm", self.vocab_size, self.heads, self.width, self.ffn_width)?;
        check_patterns("plm", &self.attention, self.layers)
    }
}

fn default_eps() -> f64 {
    1e-5
}

fn default_max_positions() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Languages in tag order; also the rows of the language embedding.
    pub languages: Vec<String>,
    /// Depth of both encoder and decoder.
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ffn_width: usize,
    #[serde(default = "default_max_positions")]
    pub max_positions: usize,
    #[serde(default)]
    pub fusion: FusionMode,
    #[serde(default)]
    pub plm: Option<PlmConfig>,
    /// PLM layer whose output is fused (0 = embeddings only).
    #[serde(default)]
    pub plm_layer: usize,
    #[serde(default)]
    pub drop_net: f64,
    /// Encoder self-attention pattern per layer; empty means dense.
    #[serde(default)]
    pub attention: Vec<AttentionPattern>,
    #[serde(default = "yes")]
    pub lang_embeddings: bool,
    #[serde(default = "yes")]
    pub freeze_plm: bool,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

fn yes() -> bool {
    true
}

fn check_dims(what: &str, vocab: usize, heads: usize, width: usize, ffn: usize) -> Result<()> {
    if vocab == 0 || width == 0 || ffn == 0 || heads == 0 {
        return Err(Error::Config(format!("{what}: vocab, width, ffn_width and heads must be positive")));
    }
    if width % heads != 0 {
        return Err(Error::Config(format!("{what}: width {width} not divisible by {heads} heads")));
    }
    Ok(())
}

fn check_patterns(what: &str, patterns: &[AttentionPattern], layers: usize) -> Result<()> {
    if !patterns.is_empty() && patterns.len() != layers {
        return Err(Error::Config(format!(
            "{what}: {} attention patterns for {layers} layers",
            patterns.len()
        )));
    }
    patterns.iter().try_for_each(AttentionPattern::validate)
}

impl ModelConfig {
    /// A small dense model without PLM fusion.
    pub fn small(vocab_size: usize, languages: &[&str]) -> Self {
        ModelConfig {
            vocab_size,
            languages: languages.iter().map(|s| s.to_string()).collect(),
            layers: 2,
            heads: 4,
            width: 64,
            ffn_width: 128,
            max_positions: default_max_positions(),
            fusion: FusionMode::None,
            plm: None,
            plm_layer: 0,
            drop_net: 0.0,
            attention: Vec::new(),
            lang_embeddings: true,
            freeze_plm: true,
            ln_eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dims("model", self.vocab_size, self.heads, self.width, self.ffn_width)?;
        check_patterns("model", &self.attention, self.layers)?;
        if !(0.0..=1.0).contains(&self.drop_net) {
            return Err(Error::Config(format!("drop_net must lie in [0, 1], got {}", self.drop_net)));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("model needs at least one language".into()));
        }
        if self.vocab_size < crate::text::vocab::FIRST_LANG_TAG + self.languages.len() {
            return Err(Error::Config("vocabulary too small for the reserved tokens".into()));
        }
        match &self.plm {
            Some(p) => {
                p.validate()?;
                if self.plm_layer > p.layers {
                    return Err(Error::Config(format!(
                        "plm_layer {} exceeds PLM depth {}",
                        self.plm_layer, p.layers
                    )));
                }
            }
            None if self.fusion != FusionMode::None => {
                return Err(Error::Config(format!("fusion {:?} needs a plm section", self.fusion)));
            }
            None => {}
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn lang_index(&self, lang: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| Error::Config(format!("language `{lang}` has no tag in this model")))
    }

    pub fn lang_tag_id(&self, lang: &str) -> Result<usize> {
        Ok(crate::text::vocab::FIRST_LANG_TAG + self.lang_index(lang)?)
    }

    /// Lowest id after the reserved tokens and language tags.
    pub fn first_content_id(&self) -> usize {
        crate::text::vocab::FIRST_LANG_TAG + self.languages.len()
    }

    pub fn encoder_pattern(&self, layer: usize) -> AttentionPattern {
        self.attention.get(layer).cloned().unwrap_or(AttentionPattern::Dense)
    }

    /// Every parameter name and shape the configuration implies.
    pub fn expected_params(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.width, self.ffn_width, self.vocab_size);
        let mut out = vec![
            ("embed.tokens".to_string(), vec![v, d]),
            ("out.bias".to_string(), vec![v]),
        ];
        if self.lang_embeddings {
            out.push(("embed.langs".into(), vec![self.languages.len(), d]));
        }
        let dp = self.plm.as_ref().map_or(0, |p| p.width);
        for l in 0..self.layers {
            let p = format!("enc.layers.{l}");
            attn_params(&mut out, &format!("{p}.self_attn"), d, d);
            if self.fusion.encoder() {
                attn_params(&mut out, &format!("{p}.plm_attn"), d, dp);
            }
            ln_params(&mut out, &format!("{p}.ln1"), d);
            ln_params(&mut out, &format!("{p}.ln2"), d);
            ffn_params(&mut out, &format!("{p}.ffn"), d, f);
        }
        ln_params(&mut out, "enc.ln", d);
        for l in 0..self.layers {
            let p = format!("dec.layers.{l}");
            attn_params(&mut out, &format!("{p}.self_attn"), d, d);
            attn_params(&mut out, &format!("{p}.cross_attn"), d, d);
            if self.fusion.decoder() {
                attn_params(&mut out, &format!("{p}.plm_attn"), d, dp);
            }
            ln_params(&mut out, &format!("{p}.ln1"), d);
            ln_params(&mut out, &format!("{p}.ln2"), d);
            ln_params(&mut out, &format!("{p}.ln3"), d);
            ffn_params(&mut out, &format!("{p}.ffn"), d, f);
        }
        ln_params(&mut out, "dec.ln", d);
        if let Some(p) = &self.plm {
            out.push(("plm.embed.tokens".into(), vec![p.vocab_size, p.width]));
            out.push(("plm.out.bias".into(), vec![p.vocab_size]));
            for l in 0..p.layers {
                let pre = format!("plm.layers.{l}");
                attn_params(&mut out, &format!("{pre}.self_attn"), p.width, p.width);
                ln_params(&mut out, &format!("{pre}.ln1"), p.width);
                ln_params(&mut out, &format!("{pre}.ln2"), p.width);
                ffn_params(&mut out, &format!("{pre}.ffn"), p.width, p.ffn_width);
            }
            ln_params(&mut out, "plm.ln", p.width);
        }
        out
    }
}

fn attn_params(out: &mut Vec<(String, Vec<usize>)>, p: &str, d: usize, d_kv: usize) {
    for (proj, rows) in [("q", d), ("k", d_kv), ("v", d_kv), ("o", d)] {
        out.push((format!("{p}.{proj}.weight"), vec![rows, d]));
        out.push((format!("{p}.{proj}.bias"), vec![d]));
    }
}

fn ln_params(out: &mut Vec<(String, Vec<usize>)>, p: &str, d: usize) {
    out.push((format!("{p}.gamma"), vec![d]));
    out.push((format!("{p}.beta"), vec![d]));
}

fn ffn_params(out: &mut Vec<(String, Vec<usize>)>, p: &str, d: usize, f: usize) {
    out.push((format!("{p}.in.weight"), vec![d, f]));
    out.push((format!("{p}.in.bias"), vec![f]));
    out.push((format!("{p}.out.weight"), vec![f, d]));
    out.push((format!("{p}.out.bias"), vec![d]));
}

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;
pub const CLS: usize = 5;

const RESERVED: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>", "<cls>"];

/// Id of the first language tag; tag `i` has id `FIRST_LANG_TAG + i`.
pub const FIRST_LANG_TAG: usize = RESERVED.len();

pub fn lang_tag(lang: &str) -> String {
    format!("__{lang}__")
}

/// Dense token ↔ id map with reserved specials and one tag per language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    langs: Vec<String>,
}

impl Vocab {
    /// Specials first, then language tags, then `symbols` by descending
    /// frequency (ties lexicographic).
    pub fn build<I, S>(langs: &[&str], symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for s in symbols {
            *counts.entry(s.as_ref().to_string()).or_default() += 1;
        }
        let mut by_freq: Vec<(String, u64)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for l in langs {
            tokens.push(lang_tag(l));
        }
        let specials = tokens.len();
        for (s, _) in by_freq {
            if !tokens[..specials].contains(&s) {
                tokens.push(s);
            }
        }
        Vocab::from_tokens(tokens, langs.iter().map(|s| s.to_string()).collect())
    }

    fn from_tokens(tokens: Vec<String>, langs: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Format(format!("reserved token `{r}` not at id {i}")));
            }
        }
        Ok(Vocab { tokens, ids, langs })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn languages(&self) -> &[String] {
        &self.langs
    }

    /// Index of a configured language (also its language-embedding row).
    pub fn lang_index(&self, lang: &str) -> Option<usize> {
        self.langs.iter().position(|l| l == lang)
    }

    pub fn lang_tag_id(&self, lang: &str) -> Option<usize> {
        self.lang_index(lang).map(|i| RESERVED.len() + i)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < RESERVED.len() + self.langs.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Vec<usize> {
        symbols.iter().map(|s| self.id(s.as_ref())).collect()
    }

    /// Symbols for ids, skipping PAD/BOS/EOS/CLS/MASK and language tags;
    /// UNK is kept as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i == UNK || !self.is_special(i))
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// First line lists the languages, then one token per line in id order.
    pub fn to_text(&self) -> String {
        let mut s = format!("#langs {}\n", self.langs.join(" "));
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .and_then(|l| l.strip_prefix("#langs"))
            .ok_or_else(|| Error::Format("vocabulary file lacks a #langs header".into()))?;
        let langs = head.split_whitespace().map(str::to_string).collect();
        Vocab::from_tokens(lines.map(str::to_string).collect(), langs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_string_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Vocab::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_tags_are_stable() {
        let v = Vocab::build(&["de", "hsb"], ["a", "b", "a", "c</w>"]).unwrap();
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(CLS), Some("<cls>"));
        assert_eq!(v.lang_tag_id("de"), Some(6));
        assert_eq!(v.lang_tag_id("hsb"), Some(7));
        assert_eq!(v.id("a"), 8);
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn unknown_symbols_map_to_unk() {
        let v = Vocab::build(&["en"], ["x"]).unwrap();
        assert_eq!(v.encode(&["x", "y"]), vec![v.id("x"), UNK]);
        assert_eq!(v.decode(&[BOS, v.id("x"), UNK, EOS]), vec!["x", "<unk>"]);
    }

    #[test]
    fn duplicate_entries_rejected() {
        assert!(Vocab::from_text("#langs en\n<pad>\n<s>\n</s>\n<unk>\n<mask>\n<cls>\na\na\n").is_err());
    }
}

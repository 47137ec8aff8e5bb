//! Corpus ingestion, joint BPE segmentation, vocabularies and length filtering.

mod bpe;
pub mod corpus;
mod normalize;
pub mod vocab;

pub use bpe::{
    default_joint_merges, SubwordModel, END_OF_WORD, JOINT_MERGES_THREE_LANGS,
    JOINT_MERGES_TWO_LANGS,
};
pub use corpus::{Corpus, Sentence, MAX_WORDS, MIN_WORDS};
pub use normalize::{is_punct, normalize, words};
pub use vocab::Vocab;

/// Subword model plus vocabulary: turns words into ids and back.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub bpe: SubwordModel,
    pub vocab: Vocab,
}

impl Tokenizer {
    /// Learns a joint BPE model over `corpora` and builds the vocabulary
    /// from the resulting symbols.
    pub fn learn(langs: &[&str], corpora: &[&Corpus], merges: usize) -> crate::Result<Self> {
        let bpe = SubwordModel::learn(corpora, merges)?;
        let symbols: Vec<String> = corpora
            .iter()
            .flat_map(|c| c.all_words())
            .flat_map(|w| bpe.apply_word(w))
            .collect();
        let vocab = Vocab::build(langs, symbols)?;
        Ok(Tokenizer { bpe, vocab })
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        self.vocab.encode(&self.bpe.apply_words(words))
    }

    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        self.encode_words(&words(sentence))
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        SubwordModel::decode(&self.vocab.decode(ids))
    }

    pub fn decode_words(&self, ids: &[usize]) -> Sentence {
        self.decode(ids)
            .split(' ')
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_model_shares_one_id_space() {
        let de = Corpus::from_lines(["das haus ist alt", "der hund"]);
        let hsb = Corpus::from_lines(["dom je stary", "pos"]);
        let tok = Tokenizer::learn(&["de", "hsb"], &[&de, &hsb], 30).unwrap();
        let a = tok.encode("das haus");
        let b = tok.encode("dom je");
        assert!(a.iter().chain(&b).all(|&i| i < tok.vocab.len()));
        assert_eq!(tok.decode(&a), "das haus");
        assert_eq!(tok.decode(&b), "dom je");
    }

    #[test]
    fn merge_budgets() {
        assert_eq!(default_joint_merges(2), 40_000);
        assert_eq!(default_joint_merges(3), 50_000);
    }
}

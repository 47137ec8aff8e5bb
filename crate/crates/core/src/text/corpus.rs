use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::normalize::words;

pub type Sentence = Vec<String>;

/// Tokenised sentences, optionally paired with targets and grouped into
/// documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    source: Vec<Sentence>,
    target: Option<Vec<Sentence>>,
    documents: Option<Vec<Range<usize>>>,
}

/// Shortest sentence kept by the default length filter, in words.
pub const MIN_WORDS: usize = 5;
/// Longest sentence kept by the default length filter, in words.
pub const MAX_WORDS: usize = 150;

impl Corpus {
    /// Normalises and tokenises each line.
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Corpus {
            source: lines.into_iter().map(|l| words(l.as_ref())).collect(),
            target: None,
            documents: None,
        }
    }

    pub fn from_sentences(source: Vec<Sentence>) -> Self {
        Corpus {
            source,
            target: None,
            documents: None,
        }
    }

    pub fn parallel(source: Vec<Sentence>, target: Vec<Sentence>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::Input(format!(
                "parallel corpus sides differ: {} vs {} sentences",
                source.len(),
                target.len()
            )));
        }
        Ok(Corpus {
            source,
            target: Some(target),
            documents: None,
        })
    }

    pub fn parallel_from_lines<S: AsRef<str>>(source: &[S], target: &[S]) -> Result<Self> {
        Corpus::parallel(
            source.iter().map(|l| words(l.as_ref())).collect(),
            target.iter().map(|l| words(l.as_ref())).collect(),
        )
    }

    /// Attaches document boundaries: consecutive, non-empty ranges that
    /// start at 0 and cover every sentence.
    pub fn with_documents(mut self, documents: Vec<Range<usize>>) -> Result<Self> {
        let mut expect = 0;
        for d in &documents {
            if d.start != expect || d.end <= d.start {
                return Err(Error::Input(format!(
                    "document range {d:?} does not continue at sentence {expect}"
                )));
            }
            expect = d.end;
        }
        if expect != self.source.len() {
            return Err(Error::Input(format!(
                "documents cover {expect} of {} sentences",
                self.source.len()
            )));
        }
        self.documents = Some(documents);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn is_parallel(&self) -> bool {
        self.target.is_some()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.source
    }

    pub fn targets(&self) -> Option<&[Sentence]> {
        self.target.as_deref()
    }

    pub fn documents(&self) -> Option<&[Range<usize>]> {
        self.documents.as_deref()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Sentence, &Sentence)> {
        self.source
            .iter()
            .zip(self.target.iter().flatten())
    }

    /// Every word of both sides.
    pub fn all_words(&self) -> impl Iterator<Item = &str> {
        self.source
            .iter()
            .chain(self.target.iter().flatten())
            .flatten()
            .map(String::as_str)
    }

    /// Keeps sentences whose word count lies in `[min_words, max_words]`;
    /// a parallel pair is dropped when either side fails. Documents that
    /// lose every sentence disappear.
    pub fn filter_length(&self, min_words: usize, max_words: usize) -> Result<Corpus> {
        if min_words > max_words {
            return Err(Error::Config(format!(
                "length filter minimum {min_words} exceeds maximum {max_words}"
            )));
        }
        let ok = |s: &Sentence| (min_words..=max_words).contains(&s.len());
        let keep: Vec<bool> = (0..self.source.len())
            .map(|i| {
                ok(&self.source[i]) && self.target.as_ref().is_none_or(|t| ok(&t[i]))
            })
            .collect();
        let pick = |v: &[Sentence]| -> Vec<Sentence> {
            v.iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(s, _)| s.clone())
                .collect()
        };
        let documents = self.documents.as_ref().map(|docs| {
            let mut out = Vec::new();
            let mut start = 0;
            for d in docs {
                let n = keep[d.clone()].iter().filter(|&&k| k).count();
                if n > 0 {
                    out.push(start..start + n);
                    start += n;
                }
            }
            out
        });
        Ok(Corpus {
            source: pick(&self.source),
            target: self.target.as_deref().map(pick),
            documents,
        })
    }

    /// Reads one sentence per line.
    pub fn read_lines(path: &Path) -> Result<Corpus> {
        Ok(Corpus::from_lines(crate::io::read_lines(path)?))
    }

    pub fn read_parallel(source: &Path, target: &Path) -> Result<Corpus> {
        Corpus::parallel_from_lines(&crate::io::read_lines(source)?, &crate::io::read_lines(target)?)
    }

    /// Reads `source<TAB>target` lines.
    pub fn read_tsv(path: &Path) -> Result<Corpus> {
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        for (n, line) in crate::io::read_lines(path)?.iter().enumerate() {
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {} has no tab", n + 1)))?;
            src.push(words(s));
            tgt.push(words(t));
        }
        Corpus::parallel(src, tgt)
    }

    /// Parses blank-line-separated blocks; each block is one document.
    pub fn from_document_text(text: &str) -> Result<Corpus> {
        let mut sentences = Vec::new();
        let mut docs = Vec::new();
        let mut start = 0;
        for block in blocks(text) {
            sentences.extend(block.iter().map(|l| words(l)));
            docs.push(start..sentences.len());
            start = sentences.len();
        }
        Corpus::from_sentences(sentences).with_documents(docs)
    }

    pub fn read_documents(path: &Path) -> Result<Corpus> {
        Corpus::from_document_text(&std::fs::read_to_string(path)?)
    }

    pub fn document_sentences(&self, doc: usize) -> Option<&[Sentence]> {
        let r = self.documents.as_ref()?.get(doc)?.clone();
        Some(&self.source[r])
    }

    /// Index of the document containing sentence `i`.
    pub fn document_of(&self, i: usize) -> Option<usize> {
        self.documents.as_ref()?.iter().position(|r| r.contains(&i))
    }
}

/// Splits text into blocks of non-empty lines separated by blank lines.
pub fn blocks(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(line);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn join(s: &Sentence) -> String {
    s.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(n: usize) -> Sentence {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn default_bounds_drop_short_sentences() {
        let c = Corpus::from_sentences(vec![sent(3), sent(5), sent(150), sent(151)]);
        let f = c.filter_length(MIN_WORDS, MAX_WORDS).unwrap();
        assert_eq!(f.sentences().iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 150]);
    }

    #[test]
    fn unbounded_filter_is_identity() {
        let c = Corpus::from_sentences((0..20).map(sent).collect());
        assert_eq!(c.filter_length(0, usize::MAX).unwrap(), c);
    }

    #[test]
    fn retained_count_matches_direct_count() {
        let c = Corpus::from_sentences((1..=200).map(sent).collect());
        let f = c.filter_length(MIN_WORDS, MAX_WORDS).unwrap();
        let direct = (1..=200usize).filter(|n| (5..=150).contains(n)).count();
        assert_eq!(f.len(), direct);
        assert_eq!(direct, 146);
    }

    #[test]
    fn inverted_bounds_rejected() {
        let c = Corpus::from_sentences(vec![sent(1)]);
        assert!(matches!(c.filter_length(9, 3), Err(Error::Config(_))));
    }

    #[test]
    fn parallel_pairs_drop_together() {
        let c = Corpus::parallel(vec![sent(6), sent(6), sent(2)], vec![sent(6), sent(1), sent(6)]).unwrap();
        let f = c.filter_length(5, 150).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.targets().unwrap().len(), 1);
        assert!(Corpus::parallel(vec![sent(1)], vec![]).is_err());
    }

    #[test]
    fn documents_are_validated_and_reindexed() {
        let c = Corpus::from_document_text("a b c d e\nx\n\n\nf g h i j\nk l m n o p\n").unwrap();
        assert_eq!(c.documents().unwrap(), &[0..2, 2..4]);
        let f = c.filter_length(5, 150).unwrap();
        assert_eq!(f.documents().unwrap(), &[0..1, 1..3]);
        assert!(Corpus::from_sentences(vec![sent(1), sent(1)]).with_documents(vec![1..2]).is_err());
        assert!(Corpus::from_sentences(vec![sent(1), sent(1)]).with_documents(vec![0..1]).is_err());
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(lens in proptest::collection::vec(0usize..30, 0..40), lo in 0usize..10, span in 0usize..20) {
            let c = Corpus::from_sentences(lens.iter().map(|&n| sent(n)).collect());
            let once = c.filter_length(lo, lo + span).unwrap();
            prop_assert_eq!(once.filter_length(lo, lo + span).unwrap(), once);
        }
    }
}

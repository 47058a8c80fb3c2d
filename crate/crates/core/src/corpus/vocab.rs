use std::collections::HashMap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Word/id map over the `V` most frequent words of a corpus.
///
/// Ids are dense and assigned in descending count order, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    total_tokens: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` entries already in id order.
    pub fn from_entries(entries: Vec<(String, u64)>, total_tokens: u64) -> Result<Self> {
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (id, (word, count)) in entries.into_iter().enumerate() {
            if index.insert(word.clone(), id as u32).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate word {word:?}")));
            }
            words.push(word);
            counts.push(count);
        }
        let sum: u64 = counts.iter().sum();
        if sum > total_tokens {
            return Err(Error::format(
                "vocabulary",
                format!("word counts sum to {sum}, more than total_tokens {total_tokens}"),
            ));
        }
        Ok(Self { words, counts, index, total_tokens })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count_of(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id_of(t.as_ref())).collect()
    }

    /// Maps tokens to ids, keeping a `None` slot for out-of-vocabulary tokens.
    pub fn encode_masked<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Option<u32>> {
        tokens.iter().map(|t| self.id_of(t.as_ref())).collect()
    }

    /// Writes `word<TAB>id<TAB>count` lines sorted by id.
    pub fn write_tsv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for (id, (word, count)) in self.words.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{word}\t{id}\t{count}")?;
        }
        Ok(())
    }

    /// Reads the tsv layout written by [`Vocabulary::write_tsv`].
    ///
    /// The file carries no token total, so it is taken as the sum of counts
    /// unless the caller supplies it.
    pub fn read_tsv<R: std::io::BufRead>(input: R, total_tokens: Option<u64>) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(word), Some(id), Some(count), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::format("vocab.tsv", format!("line {}: expected 3 fields", lineno + 1)));
            };
            let id: usize =
                id.parse().map_err(|_| Error::format("vocab.tsv", format!("line {}: bad id {id:?}", lineno + 1)))?;
            if id != entries.len() {
                return Err(Error::format("vocab.tsv", format!("line {}: ids must be dense and sorted", lineno + 1)));
            }
            let count: u64 = count
                .parse()
                .map_err(|_| Error::format("vocab.tsv", format!("line {}: bad count {count:?}", lineno + 1)))?;
            entries.push((word.to_string(), count));
        }
        let total = total_tokens.unwrap_or_else(|| entries.iter().map(|e| e.1).sum());
        Self::from_entries(entries, total)
    }
}

/// Mergeable word-frequency accumulator used for the counting pass.
#[derive(Debug, Clone, Default)]
pub struct VocabCounter {
    counts: FxHashMap<String, u64>,
    total_tokens: u64,
    min_doc_tokens: usize,
    documents: u64,
    skipped_documents: u64,
}

impl VocabCounter {
    pub fn new(min_doc_tokens: usize) -> Self {
        Self { min_doc_tokens, ..Self::default() }
    }

    pub fn add_document<S: AsRef<str>>(&mut self, tokens: &[S]) {
        if tokens.len() < self.min_doc_tokens || tokens.is_empty() {
            self.skipped_documents += 1;
            return;
        }
        self.documents += 1;
        self.total_tokens += tokens.len() as u64;
        for t in tokens {
            let t = t.as_ref();
            if let Some(c) = self.counts.get_mut(t) {
                *c += 1;
            } else {
                self.counts.insert(t.to_string(), 1);
            }
        }
    }

    pub fn merge(mut self, other: VocabCounter) -> Self {
        let (mut big, small) = if self.counts.len() >= other.counts.len() {
            (std::mem::take(&mut self.counts), other.counts)
        } else {
            (other.counts, std::mem::take(&mut self.counts))
        };
        for (w, c) in small {
            *big.entry(w).or_insert(0) += c;
        }
        VocabCounter {
            counts: big,
            total_tokens: self.total_tokens + other.total_tokens,
            min_doc_tokens: self.min_doc_tokens,
            documents: self.documents + other.documents,
            skipped_documents: self.skipped_documents + other.skipped_documents,
        }
    }

    pub fn distinct_words(&self) -> usize {
        self.counts.len()
    }

    pub fn documents(&self) -> u64 {
        self.documents
    }

    pub fn skipped_documents(&self) -> u64 {
        self.skipped_documents
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Selects the `size` most frequent words.
    pub fn finish(self, size: usize) -> Result<Vocabulary> {
        if size == 0 {
            return Err(Error::invalid("vocabulary size must be at least 1"));
        }
        if self.counts.len() < size {
            return Err(Error::VocabularyShortfall { requested: size, available: self.counts.len() });
        }
        let mut entries: Vec<(String, u64)> = self.counts.into_iter().collect();
        entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(size);
        Vocabulary::from_entries(entries, self.total_tokens)
    }
}

/// Builds the `size`-word vocabulary from tokenized documents.
///
/// Documents shorter than `min_doc_tokens` are skipped. Counting runs
/// shard-parallel; the merge is commutative so the result does not depend on
/// the shard layout.
pub fn build_vocabulary<D>(docs: &[D], size: usize, min_doc_tokens: usize) -> Result<Vocabulary>
where
    D: AsRef<[String]> + Sync,
{
    count_words(docs, min_doc_tokens).finish(size)
}

pub(crate) fn count_words<D>(docs: &[D], min_doc_tokens: usize) -> VocabCounter
where
    D: AsRef<[String]> + Sync,
{
    docs.par_iter()
        .fold(
            || VocabCounter::new(min_doc_tokens),
            |mut acc, doc| {
                acc.add_document(doc.as_ref());
                acc
            },
        )
        .reduce(|| VocabCounter::new(min_doc_tokens), VocabCounter::merge)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn counts_and_orders_by_frequency() {
        let v = build_vocabulary(&[doc("a a b a b c")], 2, 0).unwrap();
        assert_eq!(v.words(), ["a", "b"]);
        assert_eq!(v.count_of(0), 3);
        assert_eq!(v.count_of(1), 2);
        assert_eq!(v.total_tokens(), 6);
    }

    #[test]
    fn single_word() {
        let v = build_vocabulary(&[doc("x")], 1, 0).unwrap();
        assert_eq!(v.id_of("x"), Some(0));
    }

    #[test]
    fn shortfall_is_an_error() {
        let err = build_vocabulary(&[doc("a b c")], 5, 0).unwrap_err();
        assert!(matches!(err, Error::VocabularyShortfall { requested: 5, available: 3 }));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocabulary(&[doc("z y x z y x")], 3, 0).unwrap();
        assert_eq!(v.words(), ["x", "y", "z"]);
    }

    #[test]
    fn short_documents_are_skipped() {
        let v = build_vocabulary(&[doc("a b"), doc("c c c d")], 2, 3).unwrap();
        assert_eq!(v.words(), ["c", "d"]);
        assert_eq!(v.total_tokens(), 4);
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocabulary(&[doc("a a b a b c")], 3, 0).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a\t0\t3\nb\t1\t2\nc\t2\t1\n");
        let back = Vocabulary::read_tsv(&buf[..], Some(6)).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn tsv_rejects_unsorted_ids() {
        assert!(Vocabulary::read_tsv(&b"a\t1\t3\n"[..], None).is_err());
    }
}

//! Synthetic corpus with planted topic and analogy structure.
//!
//! Topic sentences mix words of one latent topic with function words.
//! Analogy sentences realize one side of a word pair `(a_n, b_n)` of a
//! category: the pair word, the pair's shared context words, markers drawn
//! from that word's subset of the side's marker set, and occasionally a
//! random topic word as a stray collocate. The leading topics have distinct
//! sizes so the top eigenvalues of the target separate.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skipgram::{count_skipgrams, CountConfig, SkipGramStats};
use super::tokenize::tokenize;
use super::vocab::count_words;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub seed: u64,
    /// Number of words in each topic.
    pub topic_sizes: Vec<usize>,
    pub categories: usize,
    pub pairs_per_category: usize,
    pub markers_per_side: usize,
    /// Markers each pair word draws from; a fixed random subset per word.
    pub markers_per_word: usize,
    pub context_per_pair: usize,
    pub function_words: usize,
    pub topic_sentences: usize,
    pub analogy_sentences: usize,
    pub topic_sentence_len: usize,
    /// Chance that a token of a topic sentence is a topic word.
    pub topic_word_prob: f64,
    /// Expected stray topic words per analogy sentence.
    pub stray_rate: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            // Ten leading topics of distinct sizes, then forty-one equal ones.
            topic_sizes: (0..10).map(|t| 58 - 2 * t).chain(std::iter::repeat_n(28, 41)).collect(),
            categories: 4,
            pairs_per_category: 32,
            markers_per_side: 5,
            markers_per_word: 3,
            context_per_pair: 1,
            function_words: 16,
            topic_sentences: 30_000,
            analogy_sentences: 16_000,
            topic_sentence_len: 12,
            topic_word_prob: 0.75,
            stray_rate: 0.5,
        }
    }
}

/// One category of planted word pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCategory {
    pub name: String,
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub config: PlantedConfig,
    /// One sentence per entry, space separated.
    pub sentences: Vec<String>,
    pub categories: Vec<PlantedCategory>,
    /// Number of distinct words the generator can emit.
    pub vocab_size: usize,
}

impl PlantedCorpus {
    /// Analogy questions in the `questions-words` layout: every ordered
    /// pair of distinct pairs within a category.
    pub fn questions_words(&self) -> String {
        let mut out = String::new();
        for cat in &self.categories {
            writeln!(out, ": {}", cat.name).unwrap();
            for (n, (a, b)) in cat.pairs.iter().enumerate() {
                for (m, (c, d)) in cat.pairs.iter().enumerate() {
                    if n != m {
                        writeln!(out, "{a} {b} {c} {d}").unwrap();
                    }
                }
            }
        }
        out
    }

    /// Tokenized sentences.
    pub fn documents(&self) -> Vec<Vec<String>> {
        self.sentences.iter().map(|s| tokenize(s)).collect()
    }

    /// Skip-gram statistics over every distinct word of the corpus.
    pub fn stats(&self, window: usize) -> Result<SkipGramStats> {
        let docs = self.documents();
        let counter = count_words(&docs, 0);
        let size = counter.distinct_words();
        let vocab = counter.finish(size)?;
        count_skipgrams(&docs, &vocab, CountConfig::new(window))
    }

    pub fn text(&self) -> String {
        let mut out = String::with_capacity(self.sentences.iter().map(|s| s.len() + 1).sum());
        for s in &self.sentences {
            out.push_str(s);
            out.push('\n');
        }
        out
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Deterministic pronounceable name for an index, at least two syllables.
fn pseudo_word(index: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut k = index + base;
    let mut syllables = Vec::new();
    while k > 0 {
        let s = k % base;
        syllables.push(s);
        k /= base;
    }
    let mut word = String::with_capacity(syllables.len() * 2);
    for s in syllables.into_iter().rev() {
        word.push(CONSONANTS[s / VOWELS.len()] as char);
        word.push(VOWELS[s % VOWELS.len()] as char);
    }
    word
}

struct Names(usize);

impl Names {
    fn take(&mut self, n: usize) -> Vec<String> {
        let out = (self.0..self.0 + n).map(pseudo_word).collect();
        self.0 += n;
        out
    }
}

pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedCorpus> {
    if cfg.topic_sizes.is_empty()
        || cfg.topic_sizes.contains(&0)
        || cfg.categories == 0
        || cfg.pairs_per_category < 2
        || cfg.function_words == 0
    {
        return Err(Error::invalid(
            "planted corpus needs topics, categories, two pairs per category and function words",
        ));
    }
    if cfg.markers_per_word == 0 || cfg.markers_per_word > cfg.markers_per_side {
        return Err(Error::invalid("markers_per_word must lie in 1..=markers_per_side"));
    }
    if !(0.0..=1.0).contains(&cfg.topic_word_prob) || !(cfg.stray_rate >= 0.0) {
        return Err(Error::invalid("topic_word_prob must be a probability and stray_rate non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut names = Names(0);
    let function = names.take(cfg.function_words);
    let topics: Vec<Vec<String>> = cfg.topic_sizes.iter().map(|&n| names.take(n)).collect();
    let topic_words: Vec<&String> = topics.iter().flatten().collect();

    struct Side {
        word: String,
        markers: Vec<usize>,
        side: usize,
        category: usize,
        pair: usize,
    }
    let mut markers = Vec::new();
    let mut contexts = Vec::new();
    let mut sides = Vec::new();
    let mut categories = Vec::new();
    for c in 0..cfg.categories {
        let side_markers = [names.take(cfg.markers_per_side), names.take(cfg.markers_per_side)];
        let mut pairs = Vec::new();
        let mut cat_context = Vec::new();
        for n in 0..cfg.pairs_per_category {
            let words = names.take(2);
            cat_context.push(names.take(cfg.context_per_pair));
            for (s, word) in words.iter().enumerate() {
                let mut all: Vec<usize> = (0..cfg.markers_per_side).collect();
                all.shuffle(&mut rng);
                all.truncate(cfg.markers_per_word);
                all.sort_unstable();
                sides.push(Side { word: word.clone(), markers: all, side: s, category: c, pair: n });
            }
            pairs.push((words[0].clone(), words[1].clone()));
        }
        markers.push(side_markers);
        contexts.push(cat_context);
        categories.push(PlantedCategory { name: format!("planted-{c}"), pairs });
    }
    let vocab_size = names.0;

    let topic_total: usize = topics.iter().map(Vec::len).sum();
    let mut sentences = Vec::with_capacity(cfg.topic_sentences + cfg.analogy_sentences);
    let mut tokens: Vec<&str> = Vec::new();
    for _ in 0..cfg.topic_sentences {
        // Topics are chosen in proportion to their size so every topic word
        // has the same expected frequency.
        let mut r = rng.random_range(0..topic_total);
        let t = topics.iter().position(|w| {
            if r < w.len() {
                true
            } else {
                r -= w.len();
                false
            }
        });
        let topic = &topics[t.expect("index within total")];
        tokens.clear();
        for _ in 0..cfg.topic_sentence_len {
            if rng.random_bool(cfg.topic_word_prob) {
                tokens.push(&topic[rng.random_range(0..topic.len())]);
            } else {
                tokens.push(&function[rng.random_range(0..function.len())]);
            }
        }
        sentences.push(tokens.join(" "));
    }
    for _ in 0..cfg.analogy_sentences {
        let side = &sides[rng.random_range(0..sides.len())];
        let side_markers = &markers[side.category][side.side];
        tokens.clear();
        tokens.push(&side.word);
        tokens.push(&side.word);
        for ctx in &contexts[side.category][side.pair] {
            tokens.push(ctx);
        }
        for _ in 0..2 {
            tokens.push(&side_markers[side.markers[rng.random_range(0..side.markers.len())]]);
        }
        for _ in 0..3 {
            tokens.push(&function[rng.random_range(0..function.len())]);
        }
        let mut strays = cfg.stray_rate;
        while strays > 0.0 {
            if rng.random_bool(strays.min(1.0)) {
                tokens.push(topic_words[rng.random_range(0..topic_words.len())]);
            }
            strays -= 1.0;
        }
        tokens.shuffle(&mut rng);
        sentences.push(tokens.join(" "));
    }
    sentences.shuffle(&mut rng);
    Ok(PlantedCorpus { config: cfg.clone(), sentences, categories, vocab_size })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_alphabetic_and_unique() {
        let words: Vec<String> = (0..5000).map(pseudo_word).collect();
        let set: std::collections::HashSet<&String> = words.iter().collect();
        assert_eq!(set.len(), words.len());
        assert!(words.iter().all(|w| tokenize(w) == vec![w.clone()]));
    }

    #[test]
    fn generation_is_deterministic_and_complete() {
        let cfg = PlantedConfig { topic_sentences: 3000, analogy_sentences: 2000, ..PlantedConfig::default() };
        let a = generate_planted(&cfg).unwrap();
        let b = generate_planted(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.categories.len(), 4);
        let q = a.questions_words();
        assert_eq!(q.lines().filter(|l| l.starts_with(':')).count(), 4);
        assert_eq!(q.lines().count(), 4 + 4 * 32 * 31);
        let distinct: std::collections::HashSet<&str> = a.sentences.iter().flat_map(|s| s.split(' ')).collect();
        assert!(distinct.len() <= a.vocab_size);
    }
}

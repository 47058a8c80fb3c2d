//! Tokenization, vocabulary selection and skip-gram counting.

mod io;
mod planted;
mod skipgram;
mod tokenize;
mod vocab;

pub use io::{count_skipgrams_in_file, count_words_in_file, for_each_chunk, open_corpus, DEFAULT_CHUNK_DOCS};
pub use planted::{generate_planted, PlantedCategory, PlantedConfig, PlantedCorpus};
pub use skipgram::{
    count_skipgrams, subsample_acceptance, CountConfig, OovPolicy, PairRecord, SkipGramCounter, SkipGramStats,
};
pub use tokenize::tokenize;
pub use vocab::{build_vocabulary, VocabCounter, Vocabulary};

pub(crate) use skipgram::hex;

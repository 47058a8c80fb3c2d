use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;

use super::skipgram::{CountConfig, SkipGramCounter, SkipGramStats};
use super::tokenize::tokenize;
use super::vocab::{VocabCounter, Vocabulary};
use crate::error::Result;

/// Documents per chunk when streaming a corpus file.
pub const DEFAULT_CHUNK_DOCS: usize = 4096;

/// Opens a newline-delimited corpus, transparently decompressing gzip input.
pub fn open_corpus(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Streams the corpus in bounded chunks of tokenized documents.
pub fn for_each_chunk<F>(path: &Path, chunk_docs: usize, mut f: F) -> Result<()>
where
    F: FnMut(Vec<Vec<String>>) -> Result<()>,
{
    let reader = open_corpus(path)?;
    let mut lines = Vec::with_capacity(chunk_docs);
    for line in reader.lines() {
        lines.push(line?);
        if lines.len() == chunk_docs.max(1) {
            f(lines.par_iter().map(|l| tokenize(l)).collect())?;
            lines.clear();
        }
    }
    if !lines.is_empty() {
        f(lines.par_iter().map(|l| tokenize(l)).collect())?;
    }
    Ok(())
}

/// Counting pass over a corpus file; returns the raw counter so callers can
/// report document totals before selecting the vocabulary.
pub fn count_words_in_file(path: &Path, min_doc_tokens: usize, chunk_docs: usize) -> Result<VocabCounter> {
    let mut total = VocabCounter::new(min_doc_tokens);
    for_each_chunk(path, chunk_docs, |docs| {
        let part = super::vocab::count_words(&docs, min_doc_tokens);
        total = std::mem::take(&mut total).merge(part);
        Ok(())
    })?;
    Ok(total)
}

/// Second pass: skip-gram counts over a corpus file.
pub fn count_skipgrams_in_file(
    path: &Path,
    vocab: &Vocabulary,
    config: CountConfig,
    chunk_docs: usize,
) -> Result<SkipGramStats> {
    config.validate()?;
    let v = vocab.len();
    let mut total = SkipGramCounter::new(v, config);
    for_each_chunk(path, chunk_docs, |docs| {
        let part = docs
            .par_iter()
            .fold(
                || SkipGramCounter::new(v, config),
                |mut acc, doc| {
                    acc.add_document(vocab, doc);
                    acc
                },
            )
            .reduce(|| SkipGramCounter::new(v, config), SkipGramCounter::merge);
        total = std::mem::replace(&mut total, SkipGramCounter::new(0, config)).merge(part);
        Ok(())
    })?;
    total.finish(vocab.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, count_skipgrams};
    use std::io::Write;

    #[test]
    fn file_and_memory_paths_agree() {
        let text = "The cat sat.\nOn the mat, the cat!\n\nA dog and a cat 42 times\n";
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("c.txt");
        std::fs::write(&plain, text).unwrap();
        let gz = dir.path().join("c.txt.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::default());
        enc.write_all(text.as_bytes()).unwrap();
        enc.finish().unwrap();

        let docs: Vec<Vec<String>> = text.lines().map(tokenize).collect();
        let vocab = build_vocabulary(&docs, 4, 0).unwrap();
        let expected = count_skipgrams(&docs, &vocab, CountConfig::new(4)).unwrap();
        for path in [&plain, &gz] {
            let v2 = count_words_in_file(path, 0, 2).unwrap().finish(4).unwrap();
            assert_eq!(v2, vocab);
            let s = count_skipgrams_in_file(path, &vocab, CountConfig::new(4), 1).unwrap();
            assert_eq!(s, expected);
        }
    }
}

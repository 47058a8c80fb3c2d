use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// What happens to out-of-vocabulary tokens before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Drop them, so in-vocabulary neighbours close ranks.
    #[default]
    Remove,
    /// Keep their positions as blanks that occupy window slots.
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountConfig {
    /// Context length `L`: `L/2` neighbours on each side of the centre.
    pub window: usize,
    pub oov: OovPolicy,
    pub min_doc_tokens: usize,
}

impl CountConfig {
    pub fn new(window: usize) -> Self {
        Self { window, oov: OovPolicy::Remove, min_doc_tokens: 0 }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.window < 2 || !self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!("window must be even and >= 2, got {}", self.window)));
        }
        Ok(())
    }
}

/// One stored unordered pair `i <= j`.
///
/// `count` holds the ordered observations of both orientations, so the
/// ordered joint probability is `count / (2 * pair_total)` off the diagonal
/// and `count / pair_total` on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub i: u32,
    pub j: u32,
    pub count: u64,
    pub sep_sum: u64,
}

impl PairRecord {
    pub fn mean_separation(&self) -> f64 {
        self.sep_sum as f64 / self.count as f64
    }
}

#[inline]
fn pack(i: u32, j: u32) -> u64 {
    ((i as u64) << 32) | j as u64
}

/// Mergeable accumulator for one shard of documents.
#[derive(Debug, Clone)]
pub struct SkipGramCounter {
    config: CountConfig,
    pairs: FxHashMap<u64, (u64, u64)>,
    unigram: Vec<u64>,
    documents: u64,
}

impl SkipGramCounter {
    pub fn new(vocab_size: usize, config: CountConfig) -> Self {
        Self { config, pairs: FxHashMap::default(), unigram: vec![0; vocab_size], documents: 0 }
    }

    /// Adds one tokenized document. Windows never cross document boundaries.
    pub fn add_document<S: AsRef<str>>(&mut self, vocab: &Vocabulary, tokens: &[S]) {
        if tokens.len() < self.config.min_doc_tokens || tokens.is_empty() {
            return;
        }
        let ids = match self.config.oov {
            OovPolicy::Remove => vocab.encode(tokens).into_iter().map(Some).collect(),
            OovPolicy::Mask => vocab.encode_masked(tokens),
        };
        self.add_ids(&ids);
    }

    /// Adds a document given as vocabulary ids (`None` marks a masked slot).
    pub fn add_ids(&mut self, ids: &[Option<u32>]) {
        self.documents += 1;
        let half = self.config.window / 2;
        for (t, center) in ids.iter().enumerate() {
            let Some(a) = *center else { continue };
            self.unigram[a as usize] += 1;
            let end = (t + half).min(ids.len().saturating_sub(1));
            for (u, other) in ids.iter().enumerate().take(end + 1).skip(t + 1) {
                let Some(b) = *other else { continue };
                let sep = (u - t) as u64;
                let key = if a <= b { pack(a, b) } else { pack(b, a) };
                let e = self.pairs.entry(key).or_insert((0, 0));
                // one unordered co-occurrence is two ordered observations
                e.0 += 2;
                e.1 += 2 * sep;
            }
        }
    }

    pub fn merge(mut self, other: SkipGramCounter) -> Self {
        let (mut big, small) = if self.pairs.len() >= other.pairs.len() {
            (std::mem::take(&mut self.pairs), other.pairs)
        } else {
            (other.pairs, std::mem::take(&mut self.pairs))
        };
        for (k, (c, s)) in small {
            let e = big.entry(k).or_insert((0, 0));
            e.0 += c;
            e.1 += s;
        }
        let unigram = self.unigram.iter().zip(&other.unigram).map(|(a, b)| a + b).collect();
        SkipGramCounter { config: self.config, pairs: big, unigram, documents: self.documents + other.documents }
    }

    pub fn finish(self, vocab: Vocabulary) -> Result<SkipGramStats> {
        let mut records: Vec<PairRecord> = self
            .pairs
            .into_iter()
            .map(|(k, (count, sep_sum))| PairRecord { i: (k >> 32) as u32, j: k as u32, count, sep_sum })
            .collect();
        records.sort_unstable_by_key(|r| (r.i, r.j));
        SkipGramStats::from_parts(vocab, self.config.window, records, self.unigram)
    }
}

/// Symmetric skip-gram statistics over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramStats {
    vocab: Vocabulary,
    window: usize,
    records: Vec<PairRecord>,
    unigram_counts: Vec<u64>,
    unigram_total: u64,
    pair_total: u64,
    /// For every word, `(neighbour, record index)` sorted by neighbour.
    adjacency: Vec<Vec<(u32, u32)>>,
}

impl SkipGramStats {
    /// Assembles statistics from stored records (`i <= j`, sorted, unique).
    pub fn from_parts(
        vocab: Vocabulary,
        window: usize,
        records: Vec<PairRecord>,
        unigram_counts: Vec<u64>,
    ) -> Result<Self> {
        let v = vocab.len();
        if unigram_counts.len() != v {
            return Err(Error::ShapeMismatch(format!(
                "{} unigram counts for a vocabulary of {v}",
                unigram_counts.len()
            )));
        }
        let unigram_total: u64 = unigram_counts.iter().sum();
        if unigram_total == 0 {
            return Err(Error::EmptyStream("no in-vocabulary tokens".into()));
        }
        let pair_total: u64 = records.iter().map(|r| r.count).sum();
        if pair_total == 0 {
            return Err(Error::EmptyStream("pair_total is zero".into()));
        }
        let mut adjacency = vec![Vec::new(); v];
        let mut prev = None;
        for (idx, r) in records.iter().enumerate() {
            if r.i > r.j || r.j as usize >= v {
                return Err(Error::format("pair records", format!("bad pair ({}, {})", r.i, r.j)));
            }
            if prev.is_some_and(|p| p >= (r.i, r.j)) {
                return Err(Error::format("pair records", "records must be sorted and unique"));
            }
            prev = Some((r.i, r.j));
            if r.count == 0 {
                return Err(Error::format("pair records", format!("zero count for ({}, {})", r.i, r.j)));
            }
            let d = r.mean_separation();
            if d < 1.0 || d > window as f64 {
                return Err(Error::format(
                    "pair records",
                    format!("mean separation {d} of ({}, {}) outside [1, {window}]", r.i, r.j),
                ));
            }
            adjacency[r.i as usize].push((r.j, idx as u32));
            if r.i != r.j {
                adjacency[r.j as usize].push((r.i, idx as u32));
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
        }
        Ok(Self { vocab, window, records, unigram_counts, unigram_total, pair_total, adjacency })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn pair_total(&self) -> u64 {
        self.pair_total
    }

    pub fn unigram_counts(&self) -> &[u64] {
        &self.unigram_counts
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    fn record(&self, i: u32, j: u32) -> Option<&PairRecord> {
        let row = &self.adjacency[i as usize];
        row.binary_search_by_key(&j, |e| e.0).ok().map(|pos| &self.records[row[pos].1 as usize])
    }

    /// Stored (symmetrized) count for the unordered pair.
    pub fn pair_count(&self, i: u32, j: u32) -> u64 {
        self.record(i, j).map_or(0, |r| r.count)
    }

    pub fn sep_sum(&self, i: u32, j: u32) -> u64 {
        self.record(i, j).map_or(0, |r| r.sep_sum)
    }

    /// Mean token separation `d_ij`, defined where the pair was observed.
    pub fn mean_separation(&self, i: u32, j: u32) -> Option<f64> {
        self.record(i, j).map(PairRecord::mean_separation)
    }

    /// Unigram probability `P_i` over in-vocabulary tokens.
    pub fn p_unigram(&self, i: u32) -> f64 {
        self.unigram_counts[i as usize] as f64 / self.unigram_total as f64
    }

    pub fn unigram(&self) -> Vec<f64> {
        (0..self.vocab_size() as u32).map(|i| self.p_unigram(i)).collect()
    }

    fn record_joint(&self, r: &PairRecord) -> f64 {
        let denom = if r.i == r.j { self.pair_total } else { 2 * self.pair_total };
        r.count as f64 / denom as f64
    }

    /// Ordered skip-gram probability `P_ij`; sums to one over all ordered pairs.
    pub fn p_joint(&self, i: u32, j: u32) -> f64 {
        self.record(i, j).map_or(0.0, |r| self.record_joint(r))
    }

    /// Visits the observed neighbours of `i` with `(j, P_ij, d_ij)`.
    pub fn row(&self, i: u32) -> impl Iterator<Item = (u32, f64, f64)> + '_ {
        self.adjacency[i as usize].iter().map(move |&(j, idx)| {
            let r = &self.records[idx as usize];
            (j, self.record_joint(r), r.mean_separation())
        })
    }

    /// Iterates `(i, j, P_ij)` over every observed ordered pair.
    pub fn ordered_pairs(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.records.iter().flat_map(move |r| {
            let p = self.record_joint(r);
            let mirrored = (r.i != r.j).then_some((r.j, r.i, p));
            std::iter::once((r.i, r.j, p)).chain(mirrored)
        })
    }

    pub fn merge(self, other: SkipGramStats) -> Result<SkipGramStats> {
        if self.vocab != other.vocab || self.window != other.window {
            return Err(Error::invalid("cannot merge statistics over different vocabularies or windows"));
        }
        let mut merged = Vec::with_capacity(self.records.len() + other.records.len());
        let (mut a, mut b) = (self.records.into_iter().peekable(), other.records.into_iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => match (x.i, x.j).cmp(&(y.i, y.j)) {
                    std::cmp::Ordering::Less => merged.push(a.next().unwrap()),
                    std::cmp::Ordering::Greater => merged.push(b.next().unwrap()),
                    std::cmp::Ordering::Equal => {
                        let (x, y) = (a.next().unwrap(), b.next().unwrap());
                        merged.push(PairRecord { count: x.count + y.count, sep_sum: x.sep_sum + y.sep_sum, ..x });
                    }
                },
                (Some(_), None) => merged.push(a.next().unwrap()),
                (None, Some(_)) => merged.push(b.next().unwrap()),
                (None, None) => break,
            }
        }
        let unigram = self.unigram_counts.iter().zip(&other.unigram_counts).map(|(x, y)| x + y).collect();
        SkipGramStats::from_parts(self.vocab, self.window, merged, unigram)
    }

    /// SHA-256 of the binary `.sgs` encoding.
    pub fn checksum(&self) -> String {
        let mut buf = Vec::new();
        self.write_sgs(&mut buf).expect("writing to a Vec cannot fail");
        hex(&Sha256::digest(&buf))
    }

    /// Writes the `.sgs` container: a JSON header line followed by the
    /// little-endian pair records and unigram counts.
    pub fn write_sgs<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let header = SgsHeader {
            magic: SGS_MAGIC.to_string(),
            vocab_size: self.vocab_size() as u64,
            window: self.window as u64,
            pair_total: self.pair_total,
            total_tokens: self.vocab.total_tokens(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        out.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            out.write_all(&r.i.to_le_bytes())?;
            out.write_all(&r.j.to_le_bytes())?;
            out.write_all(&r.count.to_le_bytes())?;
            out.write_all(&r.sep_sum.to_le_bytes())?;
        }
        for c in &self.unigram_counts {
            out.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a `.sgs` container; the vocabulary comes from the companion tsv.
    pub fn read_sgs<R: std::io::BufRead>(mut input: R, vocab: Vocabulary) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: SgsHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::format(".sgs header", e.to_string()))?;
        if header.magic != SGS_MAGIC {
            return Err(Error::format(".sgs header", format!("bad magic {:?}", header.magic)));
        }
        if header.vocab_size as usize != vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "stats file has V = {} but the vocabulary has {} words",
                header.vocab_size,
                vocab.len()
            )));
        }
        let n = read_u64(&mut input)? as usize;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let i = read_u32(&mut input)?;
            let j = read_u32(&mut input)?;
            let count = read_u64(&mut input)?;
            let sep_sum = read_u64(&mut input)?;
            records.push(PairRecord { i, j, count, sep_sum });
        }
        let unigram = (0..vocab.len()).map(|_| read_u64(&mut input)).collect::<Result<Vec<_>>>()?;
        let vocab = if vocab.total_tokens() == header.total_tokens {
            vocab
        } else {
            let entries = vocab.words().iter().cloned().zip(vocab.counts().iter().copied()).collect();
            Vocabulary::from_entries(entries, header.total_tokens)?
        };
        let stats = Self::from_parts(vocab, header.window as usize, records, unigram)?;
        if stats.pair_total != header.pair_total {
            return Err(Error::format(
                ".sgs payload",
                format!("pair_total {} disagrees with header {}", stats.pair_total, header.pair_total),
            ));
        }
        Ok(stats)
    }
}

const SGS_MAGIC: &str = "SGS1";

#[derive(Debug, Serialize, Deserialize)]
struct SgsHeader {
    magic: String,
    #[serde(rename = "V")]
    vocab_size: u64,
    #[serde(rename = "L")]
    window: u64,
    pair_total: u64,
    total_tokens: u64,
}

fn read_u64<R: std::io::Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::format(".sgs payload", e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: std::io::Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::format(".sgs payload", e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Counts skip-gram statistics over tokenized documents, shard-parallel.
pub fn count_skipgrams<D>(docs: &[D], vocab: &Vocabulary, config: CountConfig) -> Result<SkipGramStats>
where
    D: AsRef<[String]> + Sync,
{
    config.validate()?;
    let v = vocab.len();
    let counter = docs
        .par_iter()
        .fold(
            || SkipGramCounter::new(v, config),
            |mut acc, doc| {
                acc.add_document(vocab, doc.as_ref());
                acc
            },
        )
        .reduce(|| SkipGramCounter::new(v, config), SkipGramCounter::merge);
    counter.finish(vocab.clone())
}

/// Acceptance probability of the frequent-word subsampling rule,
/// `min(1, t/P + sqrt(t/P))` with `t = 1e-3`.
pub fn subsample_acceptance(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("unigram probability must be in (0, 1], got {p}")));
    }
    let r = 1e-3 / p;
    Ok((r + r.sqrt()).min(1.0))
}

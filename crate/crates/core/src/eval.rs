//! Analogy completion, similarity rank correlation and principal-component
//! neighbour lists.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::spectral::left_singular;

/// Queries scored per matrix product in analogy evaluation.
const QUERY_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyCategory {
    pub name: String,
    /// `(a, b, a′, b′)` as vocabulary ids.
    pub tuples: Vec<[u32; 4]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogySet {
    pub categories: Vec<AnalogyCategory>,
    pub dropped_oov: usize,
    pub dropped_repeated: usize,
}

impl AnalogySet {
    /// Parses the `questions-words` layout: `: name` headers followed by
    /// lines of four words. Words are lowercased; tuples with an
    /// out-of-vocabulary word or a repeated word are dropped and counted.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut categories: Vec<AnalogyCategory> = Vec::new();
        let (mut dropped_oov, mut dropped_repeated) = (0, 0);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix(':') {
                categories.push(AnalogyCategory { name: name.trim().to_string(), tuples: Vec::new() });
                continue;
            }
            let words: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
            if words.len() != 4 {
                return Err(Error::format("analogy file", format!("line {}: expected 4 words", lineno + 1)));
            }
            let Some(cat) = categories.last_mut() else {
                return Err(Error::format("analogy file", format!("line {}: tuple before any category", lineno + 1)));
            };
            let ids: Vec<Option<u32>> = words.iter().map(|w| vocab.id_of(w)).collect();
            if ids.iter().any(Option::is_none) {
                dropped_oov += 1;
                continue;
            }
            let t = [ids[0].unwrap(), ids[1].unwrap(), ids[2].unwrap(), ids[3].unwrap()];
            if (0..4).any(|x| (x + 1..4).any(|y| t[x] == t[y])) {
                dropped_repeated += 1;
                continue;
            }
            cat.tuples.push(t);
        }
        categories.retain(|c| !c.tuples.is_empty());
        if categories.is_empty() {
            return Err(Error::EmptyStream("no analogy tuples survive vocabulary filtering".into()));
        }
        Ok(Self { categories, dropped_oov, dropped_repeated })
    }

    pub fn len(&self) -> usize {
        self.categories.iter().map(|c| c.tuples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct `(a, b)` pairs of each category, in order of first appearance.
    pub fn pair_categories(&self) -> Vec<(String, Vec<(u32, u32)>)> {
        self.categories
            .iter()
            .map(|c| {
                let mut pairs: Vec<(u32, u32)> = Vec::new();
                for t in &c.tuples {
                    for p in [(t[0], t[1]), (t[2], t[3])] {
                        if !pairs.contains(&p) {
                            pairs.push(p);
                        }
                    }
                }
                (c.name.clone(), pairs)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Unit-normalize the query words and the candidates.
    #[default]
    Full,
    /// Normalize only the candidates.
    CandidateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyReport {
    pub normalization: Normalization,
    pub categories: Vec<CategoryScore>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Tuples involving a zero-norm embedding, scored as incorrect.
    pub flagged: Vec<[u32; 4]>,
}

impl AnalogyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,correct,total,accuracy\n");
        for c in &self.categories {
            writeln!(out, "{},{},{},{}", c.name, c.correct, c.total, c.accuracy).unwrap();
        }
        writeln!(out, "overall,{},{},{}", self.correct, self.total, self.accuracy).unwrap();
        out
    }
}

fn unit_rows(w: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let mut out = w.clone();
    let mut zero = vec![false; w.nrows()];
    for (i, z) in zero.iter_mut().enumerate() {
        let n = w.row(i).norm();
        if n > 0.0 {
            out.row_mut(i).unscale_mut(n);
        } else {
            *z = true;
        }
    }
    (out, zero)
}

/// Winner of every tuple: `argmax` over the vocabulary minus `{a, b, a′}` of
/// the normalized candidate against the query, lowest id on ties.
fn winners(w: &DMatrix<f64>, tuples: &[[u32; 4]], normalization: Normalization) -> Vec<Option<u32>> {
    let (unit, zero) = unit_rows(w);
    let d = w.ncols();
    let source = match normalization {
        Normalization::Full => &unit,
        Normalization::CandidateOnly => w,
    };
    tuples
        .par_chunks(QUERY_BLOCK)
        .flat_map_iter(|block| {
            let q = DMatrix::from_fn(d, block.len(), |k, n| {
                let [a, b, a2, _] = block[n].map(|x| x as usize);
                source[(a2, k)] + source[(b, k)] - source[(a, k)]
            });
            let scores = &unit * q;
            let mut out = Vec::with_capacity(block.len());
            for (n, t) in block.iter().enumerate() {
                if t.iter().any(|&x| zero[x as usize]) {
                    out.push(None);
                    continue;
                }
                let col = scores.column(n);
                let mut best = None;
                let mut best_score = f64::NEG_INFINITY;
                for (i, &s) in col.iter().enumerate() {
                    let i = i as u32;
                    if i == t[0] || i == t[1] || i == t[2] {
                        continue;
                    }
                    if s > best_score {
                        best_score = s;
                        best = Some(i);
                    }
                }
                out.push(best);
            }
            out
        })
        .collect()
}

pub fn analogy_accuracy(w: &DMatrix<f64>, data: &AnalogySet, normalization: Normalization) -> Result<AnalogyReport> {
    if data.is_empty() {
        return Err(Error::invalid("analogy set is empty"));
    }
    let v = w.nrows() as u32;
    if data.categories.iter().flat_map(|c| c.tuples.iter().flatten()).any(|&x| x >= v) {
        return Err(Error::ShapeMismatch(format!("analogy set refers to words beyond the {v} rows of W")));
    }
    let mut categories = Vec::with_capacity(data.categories.len());
    let mut flagged = Vec::new();
    let (mut correct, mut total) = (0, 0);
    for cat in &data.categories {
        let won = winners(w, &cat.tuples, normalization);
        let mut c = 0;
        for (t, winner) in cat.tuples.iter().zip(&won) {
            match winner {
                None if t.iter().any(|&x| w.row(x as usize).norm() == 0.0) => flagged.push(*t),
                Some(x) if *x == t[3] => c += 1,
                _ => {}
            }
        }
        correct += c;
        total += cat.tuples.len();
        categories.push(CategoryScore {
            name: cat.name.clone(),
            correct: c,
            total: cat.tuples.len(),
            accuracy: c as f64 / cat.tuples.len() as f64,
        });
    }
    Ok(AnalogyReport { normalization, categories, correct, total, accuracy: correct as f64 / total as f64, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySet {
    pub pairs: Vec<(u32, u32, f64)>,
    pub dropped_oov: usize,
}

impl SimilaritySet {
    /// Parses `word1 word2 score` lines separated by whitespace, commas or
    /// tabs. A first line whose score does not parse is taken as a header;
    /// `#` starts a comment line.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut dropped_oov = 0;
        let mut seen_data = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
            let score = fields.get(2).and_then(|s| s.parse::<f64>().ok());
            let (Some(score), 3) = (score, fields.len()) else {
                if !seen_data {
                    seen_data = true;
                    continue;
                }
                return Err(Error::format(
                    "similarity file",
                    format!("line {}: expected `word word score`", lineno + 1),
                ));
            };
            seen_data = true;
            if !score.is_finite() {
                return Err(Error::format("similarity file", format!("line {}: non-finite score", lineno + 1)));
            }
            match (vocab.id_of(&fields[0].to_lowercase()), vocab.id_of(&fields[1].to_lowercase())) {
                (Some(a), Some(b)) => pairs.push((a, b, score)),
                _ => dropped_oov += 1,
            }
        }
        if pairs.len() < 2 {
            return Err(Error::EmptyStream(format!(
                "only {} similarity pairs survive vocabulary filtering",
                pairs.len()
            )));
        }
        Ok(Self { pairs, dropped_oov })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Inner,
    Cosine,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of two score lists with average-rank ties.
pub fn spearman_scores(model: &[f64], human: &[f64]) -> Result<f64> {
    if model.len() != human.len() || model.len() < 2 {
        return Err(Error::invalid("rank correlation needs two equally long lists of at least 2 scores"));
    }
    pearson(&average_ranks(model), &average_ranks(human))
        .ok_or_else(|| Error::Degenerate("constant scores leave the rank correlation undefined".into()))
}

pub fn spearman(w: &DMatrix<f64>, data: &SimilaritySet, similarity: Similarity) -> Result<f64> {
    let v = w.nrows() as u32;
    if data.pairs.iter().any(|&(a, b, _)| a >= v || b >= v) {
        return Err(Error::ShapeMismatch(format!("similarity set refers to words beyond the {v} rows of W")));
    }
    let model: Vec<f64> = data
        .pairs
        .iter()
        .map(|&(a, b, _)| {
            let (x, y) = (w.row(a as usize), w.row(b as usize));
            let dot = x.dot(&y);
            match similarity {
                Similarity::Inner => dot,
                Similarity::Cosine => {
                    let n = x.norm() * y.norm();
                    if n > 0.0 {
                        dot / n
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();
    let human: Vec<f64> = data.pairs.iter().map(|p| p.2).collect();
    spearman_scores(&model, &human)
}

/// Words whose embeddings have the highest cosine similarity to principal
/// direction `component` of the rows of `W`.
///
/// The direction is `W v_k`'s generator `v_k`; scores are `u_ik s_k / ‖w_i‖`
/// with `U` the left singular vectors, so any `W·O` gives the same list. The
/// sign makes the largest-magnitude score positive.
pub fn pc_neighbors(
    w: &DMatrix<f64>,
    vocab: &Vocabulary,
    component: usize,
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    if w.nrows() != vocab.len() {
        return Err(Error::ShapeMismatch(format!("W has {} rows but the vocabulary {} words", w.nrows(), vocab.len())));
    }
    if component >= w.ncols() {
        return Err(Error::invalid(format!("component {component} is out of range for d = {}", w.ncols())));
    }
    let (u, sv) = left_singular(w, component + 1)?;
    let s = sv[component];
    let mut scores: Vec<(usize, f64)> = (0..w.nrows())
        .filter_map(|i| {
            let n = w.row(i).norm();
            (n > 0.0).then(|| (i, u[(i, component)] * s / n))
        })
        .collect();
    let flip = scores
        .iter()
        .fold((0.0f64, 1.0), |(m, sign), &(_, c)| if c.abs() > m { (c.abs(), c.signum()) } else { (m, sign) })
        .1;
    for x in &mut scores {
        x.1 *= flip;
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.truncate(top_n);
    Ok(scores.into_iter().map(|(i, c)| (vocab.word(i as u32).to_string(), c)).collect())
}

/// Winner of one analogy by the residual `‖ŵ − (â′ + b̂ − â)‖`, the
/// distance form of the `Full` rule.
pub fn residual_winner(w: &DMatrix<f64>, t: [u32; 4]) -> Option<u32> {
    let (unit, zero) = unit_rows(w);
    let [a, b, a2, _] = t.map(|x| x as usize);
    let target: DVector<f64> = (unit.row(a2) + unit.row(b) - unit.row(a)).transpose();
    let mut best = None;
    let mut best_r = f64::INFINITY;
    for (i, &z) in zero.iter().enumerate() {
        if z || i == a || i == b || i == a2 {
            continue;
        }
        let r = (unit.row(i).transpose() - &target).norm_squared();
        if r < best_r {
            best_r = r;
            best = Some(i as u32);
        }
    }
    best
}

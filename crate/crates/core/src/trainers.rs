//! Minibatch SGD on the tied-weight SGNS loss and its quartic approximation.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hex, SkipGramStats};
use crate::dynamics::{cumulative_alignment, mode_state, DynamicsTrace};
use crate::embedding::{EmbeddingMatrix, Provenance};
use crate::error::{Error, Result};
use crate::mxc;
use crate::spectral::{eigh, TopK};
use crate::target::{compute_psi, PairDistribution, Reweight, DEFAULT_DENSE_CAP};

/// Pairs per gradient chunk. Fixed so results do not depend on the thread count.
const CHUNK: usize = 1 << 16;

/// Probes evaluate the population loss exactly up to this many table entries.
pub const EXACT_PROBE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sgns,
    Qwem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `factor` once `fraction` of the steps are done.
    Step {
        factor: f64,
        fraction: f64,
    },
    /// Decay linearly from the base rate to `floor` times the base rate.
    Linear {
        floor: f64,
    },
}

impl Schedule {
    pub fn standard_step() -> Self {
        Schedule::Step { factor: 0.1, fraction: 0.75 }
    }

    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::Step { factor, fraction } => {
                if (step as f64) >= fraction * total as f64 {
                    base * factor
                } else {
                    base
                }
            }
            Schedule::Linear { floor } => {
                let progress = step as f64 / total.max(1) as f64;
                base * (1.0 - progress).max(floor)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// I.i.d. `N(0, σ²)` entries.
    Normal { sigma2: f64 },
    /// I.i.d. uniform on `[−0.5/d, 0.5/d]`.
    W2vDefault,
}

/// How pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Draw in proportion to the reweighted masses `Ψ⁺P_ij`, `Ψ⁻P_iP_j`.
    #[default]
    Adjusted,
    /// Draw from `P_ij` and `P_iP_j`, carrying `Ψ` as per-pair weights.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub loss: LossKind,
    pub reweight: Reweight,
    pub n_pos: usize,
    pub n_neg: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub steps: usize,
    pub init: Init,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl TrainConfig {
    pub fn new(d: usize, loss: LossKind) -> Self {
        Self {
            d,
            loss,
            reweight: Reweight::default_target(),
            n_pos: 50_000,
            n_neg: 50_000,
            lr: match loss {
                LossKind::Qwem => 0.5,
                LossKind::Sgns => 0.025,
            },
            schedule: Schedule::Constant,
            steps: 1000,
            init: Init::Normal { sigma2: 1e-6 },
            seed: 0,
            sampling: Sampling::Adjusted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::invalid("batch counts must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if let Init::Normal { sigma2 } = self.init {
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::invalid(format!("σ² must be positive, got {sigma2}")));
            }
        }
        if let Schedule::Step { factor, fraction } = self.schedule {
            if !(factor >= 0.0 && (0.0..=1.0).contains(&fraction)) {
                return Err(Error::invalid("step schedule needs factor >= 0 and fraction in [0, 1]"));
            }
        }
        if let Schedule::Linear { floor } = self.schedule {
            if !(0.0..=1.0).contains(&floor) {
                return Err(Error::invalid("linear schedule floor must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// A weighted sample of ordered pairs; `weights[k]` multiplies the per-pair loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(u32, u32)>,
    pub weights: Vec<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, i: u32, j: u32, weight: f64) {
        self.pairs.push((i, j));
        self.weights.push(weight);
    }
}

/// Sampling table over ordered pairs: `mass` is the population weight of
/// each pair, `proposal` the distribution it is drawn from.
#[derive(Debug, Clone)]
struct PairTable {
    /// Explicit pairs, or `None` for the dense `V x V` grid indexed `i·V + j`.
    pairs: Option<Vec<(u32, u32)>>,
    v: usize,
    mass: Vec<f64>,
    /// `mass / proposal probability`; the per-sample weight before dividing by `n`.
    ratio: Vec<f64>,
    /// The common value of `ratio` when every pair is drawn in proportion to its mass.
    uniform_ratio: Option<f64>,
    alias: WeightedAliasIndex<f64>,
}

impl PairTable {
    fn new(pairs: Option<Vec<(u32, u32)>>, v: usize, mass: Vec<f64>, proposal: Vec<f64>) -> Result<Self> {
        let total: f64 = proposal.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyStream("no pair carries positive sampling mass".into()));
        }
        let ratio: Vec<f64> =
            mass.iter().zip(&proposal).map(|(m, q)| if *q > 0.0 { m * total / q } else { 0.0 }).collect();
        let uniform_ratio = (mass == proposal).then_some(total);
        let alias = WeightedAliasIndex::new(proposal).map_err(|e| Error::Degenerate(format!("alias table: {e}")))?;
        Ok(Self { pairs, v, mass, ratio, uniform_ratio, alias })
    }

    fn pair(&self, k: usize) -> (u32, u32) {
        match &self.pairs {
            Some(p) => p[k],
            None => ((k / self.v) as u32, (k % self.v) as u32),
        }
    }

    fn len(&self) -> usize {
        self.mass.len()
    }

    fn sample_into<R: Rng>(&self, n: usize, rng: &mut R, out: &mut PairBatch) {
        let scale = 1.0 / n as f64;
        for _ in 0..n {
            let k = self.alias.sample(rng);
            let (i, j) = self.pair(k);
            let ratio = self.uniform_ratio.unwrap_or_else(|| self.ratio[k]);
            out.push(i, j, ratio * scale);
        }
    }

    fn entries(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        (0..self.len()).filter(|&k| self.mass[k] != 0.0).map(|k| (self.pair(k), self.mass[k]))
    }
}

/// Population objective `Σ a_ij f⁺(w_i·w_j) + Σ b_ij f⁻(w_i·w_j)` with the
/// sampling tables that estimate it.
#[derive(Debug, Clone)]
pub struct PairObjective {
    v: usize,
    pos: PairTable,
    neg: PairTable,
    g: Option<f64>,
    target: Option<DMatrix<f64>>,
    checksum: String,
}

impl PairObjective {
    /// Objective for counted statistics under `reweight`.
    pub fn from_stats(stats: &SkipGramStats, reweight: &Reweight, sampling: Sampling) -> Result<Self> {
        let dist = PairDistribution::from_stats(stats, DEFAULT_DENSE_CAP)?;
        Self::from_distribution(&dist, reweight, sampling)
    }

    pub fn from_distribution(dist: &PairDistribution, reweight: &Reweight, sampling: Sampling) -> Result<Self> {
        let v = dist.vocab_size();
        let psi = compute_psi(reweight, dist)?;
        let joint = dist.joint();
        let p = dist.unigram();
        let mut pos_pairs = Vec::new();
        let mut pos_mass = Vec::new();
        let mut pos_prop = Vec::new();
        let mut neg_mass = Vec::with_capacity(v * v);
        let mut neg_prop = Vec::with_capacity(v * v);
        let mut g_min = f64::INFINITY;
        let mut g_max: f64 = 0.0;
        for i in 0..v {
            for j in 0..v {
                let (a, b) = psi.masses(i, j);
                if joint[(i, j)] > 0.0 {
                    pos_pairs.push((i as u32, j as u32));
                    pos_mass.push(a);
                    pos_prop.push(match sampling {
                        Sampling::Adjusted => a,
                        Sampling::Raw => joint[(i, j)],
                    });
                }
                neg_mass.push(b);
                neg_prop.push(match sampling {
                    Sampling::Adjusted => b,
                    Sampling::Raw => p[i] * p[j],
                });
                if a + b > 0.0 {
                    g_min = g_min.min(a + b);
                    g_max = g_max.max(a + b);
                }
            }
        }
        let g = (g_max - g_min <= 1e-9 * g_max).then_some(g_max);
        let target = if reweight.is_symmetric() {
            Some(crate::target::build_mstar_from(dist, reweight)?.into_matrix())
        } else {
            None
        };
        Ok(Self {
            v,
            pos: PairTable::new(Some(pos_pairs), v, pos_mass, pos_prop)?,
            neg: PairTable::new(None, v, neg_mass, neg_prop)?,
            g,
            target,
            checksum: format!("{}|{}|{:?}", dist.checksum(), reweight, sampling),
        })
    }

    /// Objective whose QWEM population loss is `¼‖WWᵀ − M‖²_F + const`,
    /// using positive mass `(2 + M_ij)/4` and negative mass `(2 − M_ij)/4`.
    pub fn from_target(m: &DMatrix<f64>) -> Result<Self> {
        let v = m.nrows();
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!("target must be square, got {:?}", m.shape())));
        }
        if let Some(x) = m.iter().find(|x| !(x.abs() <= 2.0)) {
            return Err(Error::invalid(format!("target entries must lie in [-2, 2], found {x}")));
        }
        let mut pos = Vec::with_capacity(v * v);
        let mut neg = Vec::with_capacity(v * v);
        for i in 0..v {
            for j in 0..v {
                let x = 0.5 * (m[(i, j)] + m[(j, i)]);
                pos.push(0.25 * (2.0 + x));
                neg.push(0.25 * (2.0 - x));
            }
        }
        let mut h = Sha256::new();
        for x in m.iter() {
            h.update(x.to_le_bytes());
        }
        Ok(Self {
            v,
            pos: PairTable::new(None, v, pos.clone(), pos)?,
            neg: PairTable::new(None, v, neg.clone(), neg)?,
            g: Some(1.0),
            target: Some(m.clone()),
            checksum: hex(&h.finalize()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    /// Constant `G_ij` when there is one.
    pub fn g(&self) -> Option<f64> {
        self.g
    }

    /// The matching `M*`, available for symmetric reweighting.
    pub fn target(&self) -> Option<&DMatrix<f64>> {
        self.target.as_ref()
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Exact population loss.
    pub fn population_loss(&self, loss: LossKind, w: &DMatrix<f64>) -> f64 {
        let rows = RowMajor::from_matrix(w);
        let f = per_pair(loss);
        let pos: f64 = self.pos.entries().map(|((i, j), a)| a * f.pos(rows.dot(i, j)).0).sum();
        let neg: f64 = self.neg.entries().map(|((i, j), b)| b * f.neg(rows.dot(i, j)).0).sum();
        pos + neg
    }
}

/// `n_pos` positive and `n_neg` negative draws.
pub fn sample_pairs<R: Rng>(
    objective: &PairObjective,
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
) -> (PairBatch, PairBatch) {
    let mut pos = PairBatch::default();
    let mut neg = PairBatch::default();
    sample_pairs_into(objective, n_pos, n_neg, rng, &mut pos, &mut neg);
    (pos, neg)
}

/// `sample_pairs` reusing the batches' storage.
fn sample_pairs_into<R: Rng>(
    objective: &PairObjective,
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
    pos: &mut PairBatch,
    neg: &mut PairBatch,
) {
    for (batch, n) in [(&mut *pos, n_pos), (&mut *neg, n_neg)] {
        batch.pairs.clear();
        batch.weights.clear();
        batch.pairs.reserve(n);
        batch.weights.reserve(n);
    }
    objective.pos.sample_into(n_pos, rng, pos);
    objective.neg.sample_into(n_neg, rng, neg);
}

#[derive(Debug, Clone, Copy)]
struct PerPair(LossKind);

fn per_pair(loss: LossKind) -> PerPair {
    PerPair(loss)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl PerPair {
    /// Positive-pair loss and its derivative in `x = w_i·w_j`.
    #[inline]
    fn pos(self, x: f64) -> (f64, f64) {
        match self.0 {
            LossKind::Qwem => (0.25 * x * x - x, 0.5 * x - 1.0),
            LossKind::Sgns => (softplus(-x), -sigmoid(-x)),
        }
    }

    #[inline]
    fn neg(self, x: f64) -> (f64, f64) {
        match self.0 {
            LossKind::Qwem => (0.25 * x * x + x, 0.5 * x + 1.0),
            LossKind::Sgns => (softplus(x), sigmoid(x)),
        }
    }
}

/// Row-major copy of `W` for cache-friendly row access.
#[derive(Debug, Clone, PartialEq)]
struct RowMajor {
    v: usize,
    d: usize,
    data: Vec<f64>,
}

impl RowMajor {
    fn from_matrix(w: &DMatrix<f64>) -> Self {
        let (v, d) = w.shape();
        let mut data = Vec::with_capacity(v * d);
        for i in 0..v {
            data.extend(w.row(i).iter());
        }
        Self { v, d, data }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.v, self.d, &self.data)
    }

    #[inline]
    fn row(&self, i: u32) -> &[f64] {
        let s = i as usize * self.d;
        &self.data[s..s + self.d]
    }

    #[inline]
    fn dot(&self, i: u32, j: u32) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        // Four independent partial sums let the compiler vectorize.
        let mut acc = [0.0; 4];
        let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
        let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
        for (x, y) in ca.zip(cb) {
            for k in 0..4 {
                acc[k] += x[k] * y[k];
            }
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }
}

/// Accumulates one weighted batch into a row-major gradient.
fn accumulate(
    rows: &RowMajor,
    batch: &[(u32, u32)],
    weights: &[f64],
    f: impl Fn(f64) -> (f64, f64),
    grad: &mut [f64],
) -> f64 {
    let d = rows.d;
    let mut loss = 0.0;
    for (&(i, j), &c) in batch.iter().zip(weights) {
        let x = rows.dot(i, j);
        let (val, dx) = f(x);
        loss += c * val;
        let coef = c * dx;
        let (si, sj) = (i as usize * d, j as usize * d);
        let (wi, wj) = (&rows.data[si..si + d], &rows.data[sj..sj + d]);
        for (g, &b) in grad[si..si + d].iter_mut().zip(wj) {
            *g += coef * b;
        }
        for (g, &a) in grad[sj..sj + d].iter_mut().zip(wi) {
            *g += coef * a;
        }
    }
    loss
}

fn loss_and_grad_rows(rows: &RowMajor, loss: LossKind, pos: &PairBatch, neg: &PairBatch) -> (f64, Vec<f64>) {
    let f = per_pair(loss);
    let size = rows.v * rows.d;
    let mut jobs: Vec<(bool, usize)> = Vec::new();
    jobs.extend((0..pos.len()).step_by(CHUNK).map(|s| (true, s)));
    jobs.extend((0..neg.len()).step_by(CHUNK).map(|s| (false, s)));
    let parts: Vec<(f64, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(is_pos, start)| {
            let batch = if is_pos { pos } else { neg };
            let end = (start + CHUNK).min(batch.len());
            let mut grad = vec![0.0; size];
            let l = if is_pos {
                accumulate(rows, &batch.pairs[start..end], &batch.weights[start..end], |x| f.pos(x), &mut grad)
            } else {
                accumulate(rows, &batch.pairs[start..end], &batch.weights[start..end], |x| f.neg(x), &mut grad)
            };
            (l, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; size];
    for (l, g) in parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (total, grad)
}

fn check_batch(w: &DMatrix<f64>, batch: &PairBatch) -> Result<()> {
    let v = w.nrows() as u32;
    if batch.weights.len() != batch.pairs.len() {
        return Err(Error::ShapeMismatch("batch weights and pairs differ in length".into()));
    }
    if batch.pairs.iter().any(|&(i, j)| i >= v || j >= v) {
        return Err(Error::ShapeMismatch(format!("batch refers to words beyond the {v} rows of W")));
    }
    Ok(())
}

/// Minibatch SGNS loss `Σ c·log(1+e^{∓x})` and its tied-weight gradient.
pub fn loss_and_grad_sgns(w: &DMatrix<f64>, pos: &PairBatch, neg: &PairBatch) -> Result<(f64, DMatrix<f64>)> {
    loss_and_grad(w, LossKind::Sgns, pos, neg)
}

/// Minibatch quartic loss `Σ c·(x²/4 ∓ x)` and its tied-weight gradient.
pub fn loss_and_grad_qwem(w: &DMatrix<f64>, pos: &PairBatch, neg: &PairBatch) -> Result<(f64, DMatrix<f64>)> {
    loss_and_grad(w, LossKind::Qwem, pos, neg)
}

pub fn loss_and_grad(
    w: &DMatrix<f64>,
    loss: LossKind,
    pos: &PairBatch,
    neg: &PairBatch,
) -> Result<(f64, DMatrix<f64>)> {
    check_batch(w, pos)?;
    check_batch(w, neg)?;
    let rows = RowMajor::from_matrix(w);
    let (l, g) = loss_and_grad_rows(&rows, loss, pos, neg);
    Ok((l, DMatrix::from_row_slice(w.nrows(), w.ncols(), &g)))
}

/// Flow time covered by one SGD step: `2·lr·g`.
pub fn flow_time_per_step(lr: f64, g: f64) -> f64 {
    2.0 * lr * g
}

/// Everything `train` produces besides the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Probe times in flow units (cumulative `2·lr·g`).
    pub trace: DynamicsTrace,
    pub probe_steps: Vec<usize>,
    /// Standard error of each probe loss; zero when evaluated exactly.
    pub loss_stderr: Vec<f64>,
    pub config: TrainConfig,
}

/// JSON side of a checkpoint; `W` lives in an `.mxc` next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub flow_time: f64,
    pub rng_stream: u64,
    /// ChaCha word position, as a decimal string since JSON lacks u128.
    pub rng_word_pos: String,
    pub objective: String,
}

/// Stepwise SGD driver.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    objective: &'a PairObjective,
    config: TrainConfig,
    w: RowMajor,
    rng: ChaCha8Rng,
    step: usize,
    flow_time: f64,
    eval: Option<(PairBatch, PairBatch)>,
    reference: Option<DMatrix<f64>>,
    batches: (PairBatch, PairBatch),
}

impl<'a> Trainer<'a> {
    pub fn new(objective: &'a PairObjective, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let v = objective.vocab_size();
        let d = config.d;
        if d > v {
            return Err(Error::invalid(format!("d = {d} exceeds the vocabulary size {v}")));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let data: Vec<f64> = match config.init {
            Init::Normal { sigma2 } => {
                let s = sigma2.sqrt();
                (0..v * d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut init_rng);
                        s * z
                    })
                    .collect()
            }
            Init::W2vDefault => {
                let h = 0.5 / d as f64;
                (0..v * d).map(|_| init_rng.random_range(-h..h)).collect()
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let eval = if objective.pos.len() + objective.neg.len() > EXACT_PROBE_LIMIT {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
            eval_rng.set_stream(2);
            let half = EXACT_PROBE_LIMIT / 2;
            Some(sample_pairs(objective, half, half, &mut eval_rng))
        } else {
            None
        };
        let reference = match objective.target() {
            Some(m) => Some(eigh(m, TopK::Top(d))?.eigenvectors().clone()),
            None => None,
        };
        Ok(Self {
            objective,
            config,
            w: RowMajor { v, d, data },
            rng,
            step: 0,
            flow_time: 0.0,
            eval,
            reference,
            batches: Default::default(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn flow_time(&self) -> f64 {
        self.flow_time
    }

    pub fn weights(&self) -> DMatrix<f64> {
        self.w.to_matrix()
    }

    /// One SGD update.
    pub fn step(&mut self) -> Result<()> {
        let lr = self.config.schedule.rate(self.config.lr, self.step, self.config.steps);
        let (mut pos, mut neg) = std::mem::take(&mut self.batches);
        sample_pairs_into(self.objective, self.config.n_pos, self.config.n_neg, &mut self.rng, &mut pos, &mut neg);
        let (_, grad) = loss_and_grad_rows(&self.w, self.config.loss, &pos, &neg);
        self.batches = (pos, neg);
        for (w, g) in self.w.data.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        self.step += 1;
        if self.w.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: self.step });
        }
        self.flow_time += flow_time_per_step(lr, self.objective.g().unwrap_or(1.0));
        Ok(())
    }

    /// Loss estimate and its standard error at the current weights.
    pub fn probe_loss(&self) -> (f64, f64) {
        match &self.eval {
            None => (self.objective.population_loss(self.config.loss, &self.w.to_matrix()), 0.0),
            Some((pos, neg)) => {
                let f = per_pair(self.config.loss);
                let mut values = Vec::with_capacity(pos.len() + neg.len());
                let (np, nn) = (pos.len() as f64, neg.len() as f64);
                for (&(i, j), &c) in pos.pairs.iter().zip(&pos.weights) {
                    values.push((c * np * f.pos(self.w.dot(i, j)).0, np));
                }
                for (&(i, j), &c) in neg.pairs.iter().zip(&neg.weights) {
                    values.push((c * nn * f.neg(self.w.dot(i, j)).0, nn));
                }
                let mut mean = 0.0;
                let mut var = 0.0;
                for part in [&values[..pos.len()], &values[pos.len()..]] {
                    let n = part.len() as f64;
                    let m = part.iter().map(|v| v.0).sum::<f64>() / n;
                    let s2 = part.iter().map(|v| (v.0 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                    mean += m;
                    var += s2 / n;
                }
                (mean, var.sqrt())
            }
        }
    }

    fn record(&self, report: &mut TrainReport) {
        let w = self.w.to_matrix();
        let (s2, u) = mode_state(&w);
        let (loss, se) = self.probe_loss();
        report.trace.times.push(self.flow_time);
        report.trace.loss.push(loss);
        report.trace.mode_variance.push(s2);
        report.trace.alignment.push(match &self.reference {
            Some(r) => cumulative_alignment(r, &u),
            None => Vec::new(),
        });
        report.probe_steps.push(self.step);
        report.loss_stderr.push(se);
    }

    /// Runs to `config.steps`, probing at the listed step indices.
    pub fn run(&mut self, probes: &[usize]) -> Result<TrainReport> {
        let mut probes: Vec<usize> =
            probes.iter().copied().filter(|&p| p >= self.step && p <= self.config.steps).collect();
        probes.sort_unstable();
        probes.dedup();
        let sigma2 = match self.config.init {
            Init::Normal { sigma2 } => Some(sigma2),
            Init::W2vDefault => None,
        };
        let mut report = TrainReport {
            trace: DynamicsTrace {
                times: Vec::new(),
                mode_variance: Vec::new(),
                loss: Vec::new(),
                alignment: Vec::new(),
                seed: Some(self.config.seed),
                sigma2,
            },
            probe_steps: Vec::new(),
            loss_stderr: Vec::new(),
            config: self.config.clone(),
        };
        let mut next = probes.into_iter().peekable();
        loop {
            if next.peek() == Some(&self.step) {
                next.next();
                self.record(&mut report);
            }
            if self.step >= self.config.steps {
                break;
            }
            self.step()?;
        }
        Ok(report)
    }

    pub fn embedding(&self) -> Result<EmbeddingMatrix> {
        let provenance = match self.config.loss {
            LossKind::Qwem => Provenance::QwemSgd,
            LossKind::Sgns => Provenance::SgnsSgd,
        };
        EmbeddingMatrix::new(self.w.to_matrix(), provenance, self.config.checksum())
    }

    /// Writes `W` to `<dir>/<name>.mxc` and the manifest to `<dir>/<name>.json`.
    pub fn save_checkpoint(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        mxc::save_mxc(&dir.join(format!("{name}.mxc")), &self.w.to_matrix(), "W", &self.config.checksum())?;
        let ck = Checkpoint {
            config: self.config.clone(),
            step: self.step,
            flow_time: self.flow_time,
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            objective: self.objective.checksum().to_string(),
        };
        fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&ck)?)?;
        Ok(())
    }

    /// Resumes from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(objective: &'a PairObjective, dir: &Path, name: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json")))?)?;
        if ck.objective != objective.checksum() {
            return Err(Error::invalid("checkpoint was written for a different objective"));
        }
        let (w, _) = mxc::load_mxc(&dir.join(format!("{name}.mxc")))?;
        let mut t = Trainer::new(objective, ck.config)?;
        if w.shape() != (t.w.v, t.w.d) {
            return Err(Error::ShapeMismatch(format!("checkpoint W is {:?}", w.shape())));
        }
        t.w = RowMajor::from_matrix(&w);
        t.step = ck.step;
        t.flow_time = ck.flow_time;
        t.rng.set_stream(ck.rng_stream);
        t.rng.set_word_pos(ck.rng_word_pos.parse().map_err(|_| Error::format("checkpoint", "bad rng word position"))?);
        Ok(t)
    }
}

/// Trains from scratch and returns the embedding with its report.
pub fn train(
    objective: &PairObjective,
    config: &TrainConfig,
    probes: &[usize],
) -> Result<(EmbeddingMatrix, TrainReport)> {
    let mut trainer = Trainer::new(objective, config.clone())?;
    let report = trainer.run(probes)?;
    Ok((trainer.embedding()?, report))
}

/// `count` probe steps spread evenly over `0..=steps`.
pub fn even_probes(steps: usize, count: usize) -> Vec<usize> {
    if count < 2 {
        return vec![steps];
    }
    let mut p: Vec<usize> = (0..count).map(|k| k * steps / (count - 1)).collect();
    p.dedup();
    p
}

//! Task vectors: stacked embedding differences of word pairs, their Gram
//! spectra, Marchenko–Pastur fits and spike statistics.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::embedding::{EmbeddingMatrix, Provenance};
use crate::error::{Error, Result};
use crate::eval::{analogy_accuracy, AnalogyCategory, AnalogySet, Normalization};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Points of the tabulated Marchenko–Pastur distribution function.
const MP_TABLE: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskVectorSet {
    pub category: String,
    /// `N × d′`, one difference `w_a − w_b` per row.
    pub r: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    /// Gram eigenvalues, descending.
    pub spectrum: DVector<f64>,
}

fn descending_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(ev)
}

impl TaskVectorSet {
    pub fn from_rows(category: impl Into<String>, r: DMatrix<f64>) -> Self {
        let gram = &r * r.transpose();
        let spectrum = descending_eigenvalues(&gram);
        Self { category: category.into(), r, gram, spectrum }
    }

    pub fn len(&self) -> usize {
        self.r.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.r.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.r.ncols()
    }
}

fn check_truncation(w: &EmbeddingMatrix, d: usize) -> Result<()> {
    if d == 0 || d > w.dim() {
        return Err(Error::invalid(format!("truncation d′ = {d} must lie in 1..={}", w.dim())));
    }
    if d < w.dim() && w.provenance() != Provenance::Spectral {
        return Err(Error::invalid("truncation needs spectral embeddings whose columns follow the eigenvalue order"));
    }
    Ok(())
}

/// Task vectors for id pairs, keeping the first `d` columns.
pub fn task_vectors_from_ids(
    w: &EmbeddingMatrix,
    category: &str,
    pairs: &[(u32, u32)],
    d: usize,
) -> Result<TaskVectorSet> {
    check_truncation(w, d)?;
    let m = w.matrix();
    if pairs.iter().any(|&(a, b)| a as usize >= m.nrows() || b as usize >= m.nrows()) {
        return Err(Error::ShapeMismatch(format!("pair refers to words beyond the {} rows of W", m.nrows())));
    }
    let r = DMatrix::from_fn(pairs.len(), d, |n, k| m[(pairs[n].0 as usize, k)] - m[(pairs[n].1 as usize, k)]);
    Ok(TaskVectorSet::from_rows(category, r))
}

/// Task vectors `w_a − w_b` for word pairs, truncated to `d` columns and not
/// normalized.
pub fn build_task_vectors(
    w: &EmbeddingMatrix,
    vocab: &Vocabulary,
    category: &str,
    pairs: &[(String, String)],
    d: usize,
) -> Result<TaskVectorSet> {
    let mut missing = Vec::new();
    let mut ids = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        match (vocab.id_of(a), vocab.id_of(b)) {
            (Some(x), Some(y)) => ids.push((x, y)),
            (x, y) => {
                if x.is_none() {
                    missing.push(a.clone());
                }
                if y.is_none() {
                    missing.push(b.clone());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::OutOfVocabulary(missing));
    }
    task_vectors_from_ids(w, category, &ids, d)
}

fn require_signal(tv: &TaskVectorSet) -> Result<f64> {
    let top = tv.spectrum.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::Degenerate(format!("task-vector Gram of `{}` is zero", tv.category)));
    }
    Ok(top)
}

/// `λ_max · rank / Tr` of the Gram, counting eigenvalues above
/// `rank_tol · λ_max` toward the rank.
pub fn spike_snr(tv: &TaskVectorSet, rank_tol: f64) -> Result<f64> {
    let top = require_signal(tv)?;
    let rank = tv.spectrum.iter().filter(|&&l| l > rank_tol * top).count();
    Ok(top * rank as f64 / tv.gram.trace())
}

/// `1ᵀG1 / (N λ_max)`: the share of the leading direction carried by the
/// mean task vector.
pub fn signal_in_mean(tv: &TaskVectorSet) -> Result<f64> {
    let top = require_signal(tv)?;
    Ok(tv.gram.sum() / (tv.len() as f64 * top))
}

/// Support edges `σ²(1 ± √γ)²`.
pub fn mp_edges(sigma2: f64, gamma: f64) -> (f64, f64) {
    let s = gamma.sqrt();
    (sigma2 * (1.0 - s).powi(2), sigma2 * (1.0 + s).powi(2))
}

/// Marchenko–Pastur law with scale `σ²` and aspect ratio `γ ≤ 1`.
#[derive(Debug, Clone)]
pub struct MpLaw {
    pub sigma2: f64,
    pub gamma: f64,
    cdf: Vec<f64>,
}

impl MpLaw {
    pub fn new(sigma2: f64, gamma: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("MP law needs σ² > 0 and γ in (0, 1], got {sigma2}, {gamma}")));
        }
        // With λ = m − h cos θ the density times dλ is smooth in θ, also at
        // γ = 1 where the density diverges at zero.
        let (m, h) = (sigma2 * (1.0 + gamma), 2.0 * sigma2 * gamma.sqrt());
        let integrand = |theta: f64| {
            let lam = m - h * theta.cos();
            if lam <= 0.0 {
                // Only at θ = 0 when γ = 1; the limit is h·(1 + cos 0)/(2πσ²γ)·h/m.
                return h * h * 2.0 / (2.0 * PI * sigma2 * gamma * m);
            }
            h * h * theta.sin().powi(2) / (2.0 * PI * sigma2 * gamma * lam)
        };
        let step = PI / (MP_TABLE - 1) as f64;
        let mut cdf = Vec::with_capacity(MP_TABLE);
        cdf.push(0.0);
        let mut prev = integrand(0.0);
        for k in 1..MP_TABLE {
            let cur = integrand(k as f64 * step);
            let mid = integrand((k as f64 - 0.5) * step);
            // Simpson on each cell.
            let last = *cdf.last().unwrap();
            cdf.push(last + step / 6.0 * (prev + 4.0 * mid + cur));
            prev = cur;
        }
        let total = *cdf.last().unwrap();
        for c in &mut cdf {
            *c /= total;
        }
        Ok(Self { sigma2, gamma, cdf })
    }

    pub fn edges(&self) -> (f64, f64) {
        mp_edges(self.sigma2, self.gamma)
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.edges();
        if x <= lo || x >= hi || x <= 0.0 {
            return 0.0;
        }
        ((hi - x) * (x - lo)).sqrt() / (2.0 * PI * self.sigma2 * self.gamma * x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.edges();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let (m, h) = (self.sigma2 * (1.0 + self.gamma), 2.0 * self.sigma2 * self.gamma.sqrt());
        let theta = ((m - x) / h).clamp(-1.0, 1.0).acos();
        let pos = theta / PI * (MP_TABLE - 1) as f64;
        let k = (pos.floor() as usize).min(MP_TABLE - 2);
        let frac = pos - k as f64;
        self.cdf[k] * (1.0 - frac) + self.cdf[k + 1] * frac
    }
}

/// Kolmogorov–Smirnov distance between a sample and a distribution function.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPFit {
    pub sigma2: f64,
    pub d_eff: usize,
    pub gamma: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub ks: f64,
    /// Whether the top centered eigenvalue sat above `λ₊` and was left out.
    pub spike_excluded: bool,
}

/// Fits the bulk of the centered Gram spectrum with a Marchenko–Pastur law.
///
/// The mean task vector is subtracted, `σ²` is the population variance of
/// the centered entries, and `d_eff ∈ {N, …, d′}` minimizes the KS distance
/// between the nonzero centered spectrum divided by `d_eff` and the law with
/// `γ = N/d_eff`. A top eigenvalue above that candidate's `λ₊` is excluded.
pub fn mp_fit(tv: &TaskVectorSet) -> Result<MPFit> {
    let n = tv.len();
    let nonzero_rows = tv.r.row_iter().filter(|r| r.norm() > 0.0).count();
    if nonzero_rows < 8 {
        return Err(Error::invalid(format!("MP fit needs at least 8 nonzero task vectors, got {nonzero_rows}")));
    }
    let mean = tv.r.row_mean();
    let mut centered = tv.r.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let sigma2 = centered.norm_squared() / (n * tv.dim()) as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate(format!("centered task vectors of `{}` are all zero", tv.category)));
    }
    let spectrum = descending_eigenvalues(&(&centered * centered.transpose()));
    let top = spectrum[0];
    let nonzero: Vec<f64> = spectrum.iter().copied().filter(|&l| l > 1e-10 * top).collect();
    let mut best: Option<MPFit> = None;
    for d_eff in n..=n.max(tv.dim()) {
        let gamma = n as f64 / d_eff as f64;
        let law = MpLaw::new(sigma2, gamma)?;
        let (lo, hi) = law.edges();
        let scaled: Vec<f64> = nonzero.iter().map(|l| l / d_eff as f64).collect();
        let spike = scaled.len() > 1 && scaled[0] > hi;
        let bulk = if spike { &scaled[1..] } else { &scaled[..] };
        let ks = ks_distance(bulk, |x| law.cdf(x));
        if best.as_ref().is_none_or(|b| ks < b.ks) {
            best = Some(MPFit { sigma2, d_eff, gamma, lambda_minus: lo, lambda_plus: hi, ks, spike_excluded: spike });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]` of the values.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 || values.is_empty() {
        return Err(Error::invalid("histogram needs at least one bin and one value"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Spectrum data behind a task-vector plot: the centered nonzero spectrum
/// scaled by `1/d_eff`, its histogram and the fitted density on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPlot {
    pub category: String,
    pub d: usize,
    pub fit: MPFit,
    pub scaled_spectrum: Vec<f64>,
    /// Top eigenvalue of the uncentered Gram divided by `d_eff`.
    pub spike: f64,
    pub histogram: Histogram,
    pub density: Vec<(f64, f64)>,
}

pub fn spectrum_plot(tv: &TaskVectorSet, bins: usize) -> Result<SpectrumPlot> {
    let fit = mp_fit(tv)?;
    let mean = tv.r.row_mean();
    let mut centered = tv.r.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let spectrum = descending_eigenvalues(&(&centered * centered.transpose()));
    let top = spectrum[0];
    let scaled: Vec<f64> =
        spectrum.iter().copied().filter(|&l| l > 1e-10 * top).map(|l| l / fit.d_eff as f64).collect();
    let law = MpLaw::new(fit.sigma2, fit.gamma)?;
    let points = 200;
    let density = (0..=points)
        .map(|k| {
            let x = fit.lambda_minus + (fit.lambda_plus - fit.lambda_minus) * k as f64 / points as f64;
            (x, law.density(x))
        })
        .collect();
    Ok(SpectrumPlot {
        category: tv.category.clone(),
        d: tv.dim(),
        spike: tv.spectrum[0] / fit.d_eff as f64,
        histogram: histogram(&scaled, bins)?,
        scaled_spectrum: scaled,
        density,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub category: String,
    pub d: usize,
    pub snr: f64,
    pub signal_in_mean: f64,
    pub accuracy: f64,
}

/// Every ordered pair of distinct pairs as an analogy tuple.
fn category_tuples(pairs: &[(u32, u32)]) -> Vec<[u32; 4]> {
    let mut out = Vec::with_capacity(pairs.len() * pairs.len().saturating_sub(1));
    for (n, &(a, b)) in pairs.iter().enumerate() {
        for (m, &(c, d)) in pairs.iter().enumerate() {
            if n != m {
                out.push([a, b, c, d]);
            }
        }
    }
    out
}

/// Spike SNR, signal-in-mean and analogy accuracy of each category across
/// truncations of spectral embeddings.
pub fn snr_sweep(
    w: &EmbeddingMatrix,
    categories: &[(String, Vec<(u32, u32)>)],
    d_grid: &[usize],
    rank_tol: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(categories.len() * d_grid.len());
    for &d in d_grid {
        check_truncation(w, d)?;
        let truncated =
            EmbeddingMatrix::new(w.matrix().columns(0, d).into_owned(), Provenance::Spectral, w.checksum())?;
        for (name, pairs) in categories {
            let tv = task_vectors_from_ids(&truncated, name, pairs, d)?;
            let set = AnalogySet {
                categories: vec![AnalogyCategory { name: name.clone(), tuples: category_tuples(pairs) }],
                dropped_oov: 0,
                dropped_repeated: 0,
            };
            let acc = analogy_accuracy(truncated.matrix(), &set, Normalization::Full)?;
            rows.push(SweepRow {
                category: name.clone(),
                d,
                snr: spike_snr(&tv, rank_tol)?,
                signal_in_mean: signal_in_mean(&tv)?,
                accuracy: acc.accuracy,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("category,d,snr,signal_in_mean,accuracy\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.category, r.d, r.snr, r.signal_in_mean, r.accuracy).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
    }

    #[test]
    fn spectrum_examples() {
        let zero = TaskVectorSet::from_rows("z", DMatrix::zeros(3, 4));
        assert!(zero.spectrum.iter().all(|&l| l == 0.0));
        assert!(spike_snr(&zero, DEFAULT_RANK_TOL).is_err());
        let v = [1.0, 2.0, -2.0];
        let twin = TaskVectorSet::from_rows("t", DMatrix::from_fn(2, 3, |_, k| v[k]));
        assert!((twin.spectrum[0] - 18.0).abs() < 1e-12 && twin.spectrum[1].abs() < 1e-12);
        assert!((spike_snr(&twin, DEFAULT_RANK_TOL).unwrap() - 1.0).abs() < 1e-12);
        assert!((signal_in_mean(&twin).unwrap() - 1.0).abs() < 1e-12);
        let orth = TaskVectorSet::from_rows("o", DMatrix::identity(3, 5) * 2.0);
        assert!(orth.spectrum.iter().all(|&l| (l - 4.0).abs() < 1e-12));
        assert!((spike_snr(&orth, DEFAULT_RANK_TOL).unwrap() - 1.0).abs() < 1e-12);
        let opposite = TaskVectorSet::from_rows("s", DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -1.0, -0.5]));
        assert!(signal_in_mean(&opposite).unwrap().abs() < 1e-12);
    }

    #[test]
    fn diagonal_gram_snr() {
        let r = DMatrix::from_row_slice(3, 3, &[3f64.sqrt(), 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let tv = TaskVectorSet::from_rows("d", r);
        assert!((spike_snr(&tv, 1e-8).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn mp_law_is_normalized_with_expected_edges() {
        assert_eq!(mp_edges(1.0, 1.0), (0.0, 4.0));
        for gamma in [0.05, 0.25, 1.0] {
            let law = MpLaw::new(1.3, gamma).unwrap();
            // Integrate the density directly as an independent check of the table.
            let (lo, hi) = law.edges();
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let mass: f64 = (0..n).map(|k| law.density(lo + (k as f64 + 0.5) * h) * h).sum();
            assert!((mass - 1.0).abs() < 5e-3, "γ = {gamma}: mass {mass}");
            let mid = lo + 0.3 * (hi - lo);
            let partial: f64 = (0..n)
                .map(|k| law.density(lo + (k as f64 + 0.5) * (mid - lo) / n as f64) * (mid - lo) / n as f64)
                .sum();
            assert!((law.cdf(mid) - partial).abs() < 5e-3);
        }
    }

    #[test]
    fn fits_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tv = TaskVectorSet::from_rows("noise", normal(&mut rng, 32, 512));
        let fit = mp_fit(&tv).unwrap();
        assert!(fit.ks < 0.15, "{fit:?}");
        assert!((fit.d_eff as f64 - 512.0).abs() <= 0.25 * 512.0, "{fit:?}");
    }

    #[test]
    fn duplicated_category_gives_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = EmbeddingMatrix::new(normal(&mut rng, 20, 6), Provenance::Spectral, "x").unwrap();
        let pairs: Vec<(u32, u32)> = (0..5).map(|k| (2 * k, 2 * k + 1)).collect();
        let cats = vec![("a".to_string(), pairs.clone()), ("a".to_string(), pairs)];
        let rows = snr_sweep(&w, &cats, &[1, 3, 6], DEFAULT_RANK_TOL).unwrap();
        for pair in rows.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        assert!(rows.iter().filter(|r| r.d == 1).all(|r| (r.snr - 1.0).abs() < 1e-12));
    }

    #[test]
    fn truncation_requires_spectral_columns() {
        let w = EmbeddingMatrix::new(DMatrix::from_element(4, 3, 1.0), Provenance::QwemSgd, "x").unwrap();
        assert!(task_vectors_from_ids(&w, "c", &[(0, 1)], 2).is_err());
        assert!(task_vectors_from_ids(&w, "c", &[(0, 1)], 3).is_ok());
    }
}

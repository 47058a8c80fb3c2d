//! Reweighting coefficients, the QWEM target `M*` and the PMI references.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hex, subsample_acceptance, SkipGramStats};
use crate::embedding::{EmbeddingMatrix, Provenance};
use crate::error::{Error, Result};
use crate::spectral::{eigh, TopK};

/// Largest vocabulary for which a dense `V x V` target is built.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// Default PMI value stored for unobserved pairs.
pub const DEFAULT_PMI_FLOOR: f64 = -20.0;

/// Scheme producing the pair weights `Ψ⁺_ij`, `Ψ⁻_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum Reweight {
    Unit,
    /// `Ψ⁺ = Ψ⁻ = 1/(P_ij + P_i P_j)`, so that `G_ij = 1`.
    Setting1,
    DynamicWindow,
    Subsample,
    NegSample {
        k: f64,
        exponent: f64,
    },
    /// Product of the factors of each member.
    Composite {
        parts: Vec<Reweight>,
    },
}

impl Reweight {
    /// The combination used for the default target.
    pub fn default_target() -> Self {
        Reweight::Composite { parts: vec![Reweight::Setting1, Reweight::DynamicWindow] }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Reweight::NegSample { .. } => false,
            Reweight::Composite { parts } => parts.iter().all(Reweight::is_symmetric),
            _ => true,
        }
    }

    fn flatten(&self, out: &mut Vec<Reweight>) {
        match self {
            Reweight::Composite { parts } => parts.iter().for_each(|p| p.flatten(out)),
            other => out.push(other.clone()),
        }
    }
}

impl fmt::Display for Reweight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reweight::Unit => f.write_str("unit"),
            Reweight::Setting1 => f.write_str("setting1"),
            Reweight::DynamicWindow => f.write_str("dynamic_window"),
            Reweight::Subsample => f.write_str("subsample"),
            Reweight::NegSample { k, exponent } => write!(f, "negsample:{k}:{exponent}"),
            Reweight::Composite { parts } => {
                let names: Vec<String> = parts.iter().map(ToString::to_string).collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

impl FromStr for Reweight {
    type Err = Error;

    /// Parses `setting1+dynamic_window`, `negsample:5:0.75` and friends.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        if parts.len() > 1 {
            let parts = parts.into_iter().map(str::parse).collect::<Result<Vec<_>>>()?;
            return Ok(Reweight::Composite { parts });
        }
        let mut fields = s.trim().split(':');
        let name = fields.next().unwrap_or_default().to_ascii_lowercase().replace('-', "_");
        let args: Vec<&str> = fields.collect();
        let num = |k: usize, default: f64| -> Result<f64> {
            match args.get(k) {
                None => Ok(default),
                Some(a) => a.parse().map_err(|_| Error::invalid(format!("bad reweight parameter {a:?} in {s:?}"))),
            }
        };
        let scheme = match name.as_str() {
            "unit" => Reweight::Unit,
            "setting1" => Reweight::Setting1,
            "dynamic_window" | "dynamicwindow" => Reweight::DynamicWindow,
            "subsample" => Reweight::Subsample,
            "negsample" => Reweight::NegSample { k: num(0, 1.0)?, exponent: num(1, 0.75)? },
            _ => return Err(Error::invalid(format!("unknown reweight scheme {s:?}"))),
        };
        if !matches!(scheme, Reweight::NegSample { .. }) && !args.is_empty() {
            return Err(Error::invalid(format!("scheme {name} takes no parameters")));
        }
        Ok(scheme)
    }
}

/// Dense joint and unigram distributions over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    joint: DMatrix<f64>,
    unigram: DVector<f64>,
    separation: Option<DMatrix<f64>>,
    window: usize,
    checksum: String,
}

impl PairDistribution {
    /// Densifies counted statistics, refusing vocabularies above `cap`.
    pub fn from_stats(stats: &SkipGramStats, cap: usize) -> Result<Self> {
        let v = stats.vocab_size();
        if v > cap {
            return Err(Error::TooLarge { dim: v, cap });
        }
        let mut joint = DMatrix::zeros(v, v);
        let mut sep = DMatrix::zeros(v, v);
        for r in stats.records() {
            let (i, j) = (r.i as usize, r.j as usize);
            let p = stats.p_joint(r.i, r.j);
            let d = r.mean_separation();
            joint[(i, j)] = p;
            joint[(j, i)] = p;
            sep[(i, j)] = d;
            sep[(j, i)] = d;
        }
        Ok(Self {
            joint,
            unigram: DVector::from_vec(stats.unigram()),
            separation: Some(sep),
            window: stats.window(),
            checksum: stats.checksum(),
        })
    }

    /// Builds a distribution from an explicit symmetric joint and unigram.
    pub fn new(joint: DMatrix<f64>, unigram: DVector<f64>) -> Result<Self> {
        let v = unigram.len();
        if joint.shape() != (v, v) {
            return Err(Error::ShapeMismatch(format!("joint is {:?} but unigram has {v} entries", joint.shape())));
        }
        if joint.iter().chain(unigram.iter()).any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let dev = max_asymmetry(&joint);
        if dev > 0.0 {
            return Err(Error::Asymmetric { max_deviation: dev });
        }
        let mut h = Sha256::new();
        for x in joint.iter().chain(unigram.iter()) {
            h.update(x.to_le_bytes());
        }
        Ok(Self { joint, unigram, separation: None, window: 0, checksum: hex(&h.finalize()) })
    }

    pub fn vocab_size(&self) -> usize {
        self.unigram.len()
    }

    pub fn joint(&self) -> &DMatrix<f64> {
        &self.joint
    }

    pub fn unigram(&self) -> &DVector<f64> {
        &self.unigram
    }

    pub fn separation(&self) -> Option<&DMatrix<f64>> {
        self.separation.as_ref()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in j + 1..n {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev
}

#[derive(Debug, Clone)]
enum Factor {
    Unit,
    Setting1,
    DynamicWindow { window: f64, norm: f64 },
    Subsample { acceptance: Vec<f64> },
    NegSample { factor: Vec<f64> },
}

/// Entrywise evaluator of `(Ψ⁺_ij, Ψ⁻_ij)` for one distribution.
#[derive(Debug, Clone)]
pub struct Psi<'a> {
    dist: &'a PairDistribution,
    factors: Vec<Factor>,
    symmetric: bool,
}

/// Prepares the reweighting evaluators for `dist`.
pub fn compute_psi<'a>(config: &Reweight, dist: &'a PairDistribution) -> Result<Psi<'a>> {
    let mut flat = Vec::new();
    config.flatten(&mut flat);
    let v = dist.vocab_size();
    let mut factors = Vec::with_capacity(flat.len());
    for scheme in flat {
        factors.push(match scheme {
            Reweight::Unit => Factor::Unit,
            Reweight::Setting1 => Factor::Setting1,
            Reweight::DynamicWindow => {
                let Some(sep) = dist.separation() else {
                    return Err(Error::invalid("dynamic_window needs pair separations, which this distribution lacks"));
                };
                let window = dist.window() as f64;
                let norm: f64 =
                    dist.joint().iter().zip(sep.iter()).filter(|(p, _)| **p > 0.0).map(|(p, d)| (window - d) * p).sum();
                if !(norm > 0.0) {
                    return Err(Error::Degenerate("dynamic_window normaliser is not positive".into()));
                }
                Factor::DynamicWindow { window, norm }
            }
            Reweight::Subsample => {
                let acceptance = dist
                    .unigram()
                    .iter()
                    .map(|&p| subsample_acceptance(p))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Degenerate(format!("subsample: {e}")))?;
                Factor::Subsample { acceptance }
            }
            Reweight::NegSample { k, exponent } => {
                if !(k > 0.0 && k.is_finite() && exponent.is_finite()) {
                    return Err(Error::invalid(format!(
                        "negsample needs k > 0 and a finite exponent, got {k}, {exponent}"
                    )));
                }
                if dist.unigram().iter().any(|&p| p <= 0.0) {
                    return Err(Error::Degenerate("negsample needs every unigram probability positive".into()));
                }
                let raw: Vec<f64> = dist.unigram().iter().map(|p| p.powf(exponent - 1.0)).collect();
                let mean = raw.iter().sum::<f64>() / v as f64;
                Factor::NegSample { factor: raw.into_iter().map(|r| k * r / mean).collect() }
            }
            Reweight::Composite { .. } => unreachable!("flattened"),
        });
    }
    Ok(Psi { dist, factors, symmetric: config.is_symmetric() })
}

impl Psi<'_> {
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `(Ψ⁺_ij, Ψ⁻_ij)`.
    pub fn pair(&self, i: usize, j: usize) -> (f64, f64) {
        let p = self.dist.joint[(i, j)];
        let pp = self.dist.unigram[i] * self.dist.unigram[j];
        let mut pos = 1.0;
        let mut neg = 1.0;
        for f in &self.factors {
            match f {
                Factor::Unit => {}
                Factor::Setting1 => {
                    let s = p + pp;
                    if s > 0.0 {
                        pos /= s;
                        neg /= s;
                    }
                }
                Factor::DynamicWindow { window, norm } => {
                    if p > 0.0 {
                        let d = self.dist.separation.as_ref().map_or(0.0, |s| s[(i, j)]);
                        pos *= (window - d) / norm;
                    }
                }
                Factor::Subsample { acceptance } => {
                    let a = acceptance[i] * acceptance[j];
                    pos *= a;
                    neg *= a;
                }
                Factor::NegSample { factor } => neg *= factor[j],
            }
        }
        (pos, neg)
    }

    /// Dense `Ψ⁺`, `Ψ⁻`.
    pub fn dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let v = self.dist.vocab_size();
        let mut pos = DMatrix::zeros(v, v);
        let mut neg = DMatrix::zeros(v, v);
        for j in 0..v {
            for i in 0..v {
                let (a, b) = self.pair(i, j);
                pos[(i, j)] = a;
                neg[(i, j)] = b;
            }
        }
        (pos, neg)
    }

    /// Positive and negative pair masses `Ψ⁺_ij P_ij` and `Ψ⁻_ij P_i P_j`.
    pub fn masses(&self, i: usize, j: usize) -> (f64, f64) {
        let (pos, neg) = self.pair(i, j);
        (pos * self.dist.joint[(i, j)], neg * self.dist.unigram[i] * self.dist.unigram[j])
    }
}

/// Shape of `G_ij = Ψ⁺_ij P_ij + Ψ⁻_ij P_i P_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GStructure {
    Constant(f64),
    RankOne(Vec<f64>),
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Mstar,
    Pmi,
    Ppmi,
    Synthetic,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Mstar => "mstar",
            TargetKind::Pmi => "pmi",
            TargetKind::Ppmi => "ppmi",
            TargetKind::Synthetic => "synthetic",
        }
    }
}

/// Dense symmetric target with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    matrix: DMatrix<f64>,
    kind: TargetKind,
    g: GStructure,
    reweight: Reweight,
    source_checksum: String,
    floored: usize,
}

impl TargetMatrix {
    /// Wraps a hand-built symmetric matrix as a target with `g = 1`.
    pub fn synthetic(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::ShapeMismatch(format!("target must be square, got {:?}", matrix.shape())));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("target entries must be finite"));
        }
        let scale = matrix.amax();
        let dev = max_asymmetry(&matrix);
        if dev > 1e-10 * scale {
            return Err(Error::Asymmetric { max_deviation: dev });
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let mut h = Sha256::new();
        for x in matrix.iter() {
            h.update(x.to_le_bytes());
        }
        Ok(Self {
            matrix,
            kind: TargetKind::Synthetic,
            g: GStructure::Constant(1.0),
            reweight: Reweight::Setting1,
            source_checksum: hex(&h.finalize()),
            floored: 0,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Constant `g`, present only when `G` is constant.
    pub fn g(&self) -> Option<f64> {
        match self.g {
            GStructure::Constant(g) => Some(g),
            _ => None,
        }
    }

    pub fn g_structure(&self) -> &GStructure {
        &self.g
    }

    pub fn reweight(&self) -> &Reweight {
        &self.reweight
    }

    pub fn source_checksum(&self) -> &str {
        &self.source_checksum
    }

    /// Number of PMI entries replaced by the floor.
    pub fn floored(&self) -> usize {
        self.floored
    }

    /// Provenance string stored in `.mxc` headers.
    pub fn provenance(&self) -> String {
        format!("{}|{}|{}", self.kind.as_str(), self.reweight, self.source_checksum)
    }

    /// Short digest of the provenance, carried by derived artifacts.
    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.provenance().as_bytes()))[..16].to_string()
    }
}

fn fill_symmetric<F>(v: usize, f: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let cols: Vec<Vec<f64>> = (0..v).into_par_iter().map(|j| (0..v).map(|i| f(i, j)).collect()).collect();
    let mut m = DMatrix::from_fn(v, v, |i, j| cols[j][i]);
    for j in 0..v {
        for i in j + 1..v {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

fn classify_g(psi: &Psi<'_>) -> GStructure {
    let v = psi.dist.vocab_size();
    let g = fill_symmetric(v, |i, j| {
        let (a, b) = psi.masses(i, j);
        a + b
    });
    let scale = g.amax();
    if scale <= 0.0 {
        return GStructure::General;
    }
    let tol = 1e-9 * scale;
    let positive: Vec<f64> = g.iter().copied().filter(|&x| x > 0.0).collect();
    let first = positive[0];
    if positive.iter().all(|x| (x - first).abs() <= tol) {
        return GStructure::Constant(first);
    }
    let gv: Vec<f64> = (0..v).map(|i| g[(i, i)].max(0.0).sqrt()).collect();
    let rank_one = (0..v).all(|j| (0..v).all(|i| (g[(i, j)] - gv[i] * gv[j]).abs() <= tol));
    if rank_one && gv.iter().all(|&x| x > 0.0) {
        GStructure::RankOne(gv)
    } else {
        GStructure::General
    }
}

/// Builds `M*` from counted statistics.
pub fn build_mstar(stats: &SkipGramStats, config: &Reweight) -> Result<TargetMatrix> {
    build_mstar_from(&PairDistribution::from_stats(stats, DEFAULT_DENSE_CAP)?, config)
}

/// Builds `M*_ij = (Ψ⁺P_ij − Ψ⁻P_iP_j) / (½(Ψ⁺P_ij + Ψ⁻P_iP_j))`.
///
/// Unobserved pairs land on the lower bound `−2`; entries with a vanishing
/// denominator are stored as zero.
pub fn build_mstar_from(dist: &PairDistribution, config: &Reweight) -> Result<TargetMatrix> {
    if !config.is_symmetric() {
        return Err(Error::AsymmetricReweight(format!("{config} gives an asymmetric Ψ⁻")));
    }
    let psi = compute_psi(config, dist)?;
    let matrix = fill_symmetric(dist.vocab_size(), |i, j| {
        let (a, b) = psi.masses(i, j);
        let denom = 0.5 * (a + b);
        if denom > 0.0 {
            (a - b) / denom
        } else {
            0.0
        }
    });
    Ok(TargetMatrix {
        matrix,
        kind: TargetKind::Mstar,
        g: classify_g(&psi),
        reweight: config.clone(),
        source_checksum: dist.checksum().to_string(),
        floored: 0,
    })
}

/// Builds PMI (or PPMI with `positive_clip`) from counted statistics.
pub fn build_pmi(stats: &SkipGramStats, config: &Reweight, positive_clip: bool) -> Result<TargetMatrix> {
    let dist = PairDistribution::from_stats(stats, DEFAULT_DENSE_CAP)?;
    build_pmi_from(&dist, config, positive_clip, DEFAULT_PMI_FLOOR)
}

/// `PMI_ij = log(Ψ⁺P_ij / (Ψ⁻P_iP_j))`, with `floor` stored where the
/// ratio is zero or undefined.
pub fn build_pmi_from(
    dist: &PairDistribution,
    config: &Reweight,
    positive_clip: bool,
    floor: f64,
) -> Result<TargetMatrix> {
    if !config.is_symmetric() {
        return Err(Error::AsymmetricReweight(format!("{config} gives an asymmetric Ψ⁻")));
    }
    let psi = compute_psi(config, dist)?;
    let v = dist.vocab_size();
    let mut matrix = fill_symmetric(v, |i, j| {
        let (a, b) = psi.masses(i, j);
        if a > 0.0 && b > 0.0 {
            (a / b).ln().max(floor)
        } else {
            f64::NEG_INFINITY
        }
    });
    let mut floored = 0;
    for x in matrix.iter_mut() {
        if *x == f64::NEG_INFINITY || *x == floor {
            floored += 1;
            *x = floor;
        }
        if positive_clip {
            *x = x.max(0.0);
        }
    }
    Ok(TargetMatrix {
        matrix,
        kind: if positive_clip { TargetKind::Ppmi } else { TargetKind::Pmi },
        g: GStructure::General,
        reweight: config.clone(),
        source_checksum: dist.checksum().to_string(),
        floored,
    })
}

/// `log(1 + 2x/(2−x)) − (x + x³/12 + x⁵/80)`.
///
/// The left side is `2·atanh(x/2)`; for `|x| <= 1` the residual is summed
/// directly from the tail of that series to avoid cancellation.
pub fn pmi_series_residual(x: f64) -> Result<f64> {
    if !(x.abs() < 2.0) {
        return Err(Error::invalid(format!("series residual needs |x| < 2, got {x}")));
    }
    if x.abs() <= 1.0 {
        let h = 0.5 * x;
        let h2 = h * h;
        let mut term = h.powi(7);
        let mut sum = 0.0;
        for n in 3..60 {
            let add = 2.0 * term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
            term *= h2;
        }
        Ok(sum)
    } else {
        Ok((1.0 + 2.0 * x / (2.0 - x)).ln() - (x + x.powi(3) / 12.0 + x.powi(5) / 80.0))
    }
}

/// `(W Wᵀ)_ij`.
pub(crate) fn gram(w: &DMatrix<f64>) -> DMatrix<f64> {
    w * w.transpose()
}

/// Quartic loss in expectation form,
/// `Σ Ψ⁺P_ij (x²/4 − x) + Ψ⁻P_iP_j (x²/4 + x)` with `x = w_i·w_j`.
pub fn quartic_loss_expectation(psi: &Psi<'_>, w: &DMatrix<f64>) -> Result<f64> {
    let v = psi.dist.vocab_size();
    if w.nrows() != v {
        return Err(Error::ShapeMismatch(format!("W has {} rows, distribution has {v} words", w.nrows())));
    }
    let x = gram(w);
    let mut loss = 0.0;
    for j in 0..v {
        for i in 0..v {
            let (a, b) = psi.masses(i, j);
            let s = x[(i, j)];
            loss += a * (0.25 * s * s - s) + b * (0.25 * s * s + s);
        }
    }
    Ok(loss)
}

/// `(g/4)‖W Wᵀ − M‖²_F`.
pub fn frobenius_loss(target: &DMatrix<f64>, g: f64, w: &DMatrix<f64>) -> Result<f64> {
    if w.nrows() != target.nrows() {
        return Err(Error::ShapeMismatch(format!("W has {} rows, target is {}", w.nrows(), target.nrows())));
    }
    Ok(0.25 * g * (gram(w) - target).norm_squared())
}

/// `¼ Σ g_i g_j ((W Wᵀ)_ij − M_ij)²`.
pub fn weighted_loss(target: &DMatrix<f64>, gvec: &[f64], w: &DMatrix<f64>) -> Result<f64> {
    let v = target.nrows();
    if w.nrows() != v || gvec.len() != v {
        return Err(Error::ShapeMismatch("W, target and g must share the vocabulary dimension".into()));
    }
    let x = gram(w);
    let mut loss = 0.0;
    for j in 0..v {
        for i in 0..v {
            let e = x[(i, j)] - target[(i, j)];
            loss += gvec[i] * gvec[j] * e * e;
        }
    }
    Ok(0.25 * loss)
}

/// Minimiser for a rank-one `G = g gᵀ` built from counted statistics.
pub fn weighted_minimizer(stats: &SkipGramStats, config: &Reweight, d: usize) -> Result<EmbeddingMatrix> {
    let target = build_mstar(stats, config)?;
    let gvec = match target.g_structure() {
        GStructure::Constant(g) => vec![g.sqrt(); target.dim()],
        GStructure::RankOne(g) => g.clone(),
        GStructure::General => {
            return Err(Error::invalid(format!("{config} does not give a rank-one G; no closed-form minimiser")))
        }
    };
    let w = weighted_minimizer_from(target.matrix(), &gvec, d)?;
    EmbeddingMatrix::new(w, Provenance::Spectral, target.checksum())
}

/// `W = Γ⁻¹ V_Γ[:, :d] Λ_Γ[:d]^½` with `Γ = diag(g)^½`.
pub fn weighted_minimizer_from(target: &DMatrix<f64>, gvec: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let v = target.nrows();
    if gvec.len() != v {
        return Err(Error::ShapeMismatch(format!("g has {} entries, target is {v}x{v}", gvec.len())));
    }
    if let Some(k) = gvec.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::invalid(format!("g must be strictly positive, entry {k} is {}", gvec[k])));
    }
    if d == 0 || d > v {
        return Err(Error::invalid(format!("rank {d} outside 1..={v}")));
    }
    let gamma: Vec<f64> = gvec.iter().map(|x| x.sqrt()).collect();
    let scaled = DMatrix::from_fn(v, v, |i, j| gamma[i] * target[(i, j)] * gamma[j]);
    let spec = eigh(&scaled, TopK::Top(d))?;
    let mut w = spec.factor(d)?;
    for (i, mut row) in w.row_iter_mut().enumerate() {
        row /= gamma[i];
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, count_skipgrams, CountConfig};
    use crate::spectral::requiv_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(joint: &[f64], unigram: &[f64]) -> PairDistribution {
        let v = unigram.len();
        PairDistribution::new(DMatrix::from_row_slice(v, v, joint), DVector::from_row_slice(unigram)).unwrap()
    }

    #[test]
    fn independence_gives_zero() {
        let p = [0.5, 0.5];
        let d = dist(&[0.25, 0.25, 0.25, 0.25], &p);
        let m = build_mstar_from(&d, &Reweight::Setting1).unwrap();
        assert!(m.matrix().amax() < 1e-15);
        let pmi = build_pmi_from(&d, &Reweight::Unit, false, DEFAULT_PMI_FLOOR).unwrap();
        assert!(pmi.matrix().amax() < 1e-15);
    }

    #[test]
    fn doubled_joint_gives_two_thirds() {
        // P_ij = 2 P_i P_j off the diagonal.
        let d = dist(&[0.0, 0.5, 0.5, 0.0], &[0.5, 0.5]);
        let m = build_mstar_from(&d, &Reweight::Setting1).unwrap();
        assert!((m.matrix()[(0, 1)] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.matrix()[(0, 0)], -2.0);
        assert_eq!(m.g(), Some(1.0));
        let u = build_mstar_from(&d, &Reweight::Unit).unwrap();
        assert_eq!(u.matrix()[(0, 1)], m.matrix()[(0, 1)]);
        assert_eq!(u.g(), None);
    }

    #[test]
    fn pmi_floor_and_clip() {
        let e = std::f64::consts::E;
        let d = dist(&[0.0, 0.25 * e, 0.25 * e, 0.0], &[0.5, 0.5]);
        let pmi = build_pmi_from(&d, &Reweight::Unit, false, DEFAULT_PMI_FLOOR).unwrap();
        assert!((pmi.matrix()[(0, 1)] - 1.0).abs() < 1e-14);
        assert_eq!(pmi.matrix()[(0, 0)], DEFAULT_PMI_FLOOR);
        assert_eq!(pmi.floored(), 2);
        let ppmi = build_pmi_from(&d, &Reweight::Unit, true, DEFAULT_PMI_FLOOR).unwrap();
        assert_eq!(ppmi.matrix()[(0, 0)], 0.0);
        let lower = dist(&[0.25, 0.25 * (-0.3f64).exp(), 0.25 * (-0.3f64).exp(), 0.25], &[0.5, 0.5]);
        let clipped = build_pmi_from(&lower, &Reweight::Unit, true, DEFAULT_PMI_FLOOR).unwrap();
        assert_eq!(clipped.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn asymmetric_config_is_rejected() {
        let d = dist(&[0.25, 0.25, 0.25, 0.25], &[0.5, 0.5]);
        let neg = Reweight::NegSample { k: 5.0, exponent: 0.75 };
        assert!(matches!(build_mstar_from(&d, &neg), Err(Error::AsymmetricReweight(_))));
        let psi = compute_psi(&neg, &d).unwrap();
        assert!(!psi.is_symmetric());
        assert!((psi.pair(0, 1).1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn subsample_clips_rare_words() {
        let d = dist(&[0.25, 0.25, 0.25, 0.25], &[1e-3, 1e-3]);
        let psi = compute_psi(&Reweight::Subsample, &d).unwrap();
        assert_eq!(psi.pair(0, 1), (1.0, 1.0));
    }

    #[test]
    fn dynamic_window_with_equal_separations_is_identity() {
        let docs: Vec<Vec<String>> = vec!["a b a b a b".split(' ').map(String::from).collect()];
        let vocab = build_vocabulary(&docs, 2, 0).unwrap();
        let stats = count_skipgrams(&docs, &vocab, CountConfig::new(2)).unwrap();
        let d = PairDistribution::from_stats(&stats, 10).unwrap();
        let psi = compute_psi(&Reweight::DynamicWindow, &d).unwrap();
        assert!((psi.pair(0, 1).0 - 1.0).abs() < 1e-12);
        assert!(matches!(PairDistribution::from_stats(&stats, 1), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn reweight_strings_round_trip() {
        for s in ["unit", "setting1+dynamic_window", "negsample:5:0.75", "subsample+setting1"] {
            let r: Reweight = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("bogus".parse::<Reweight>().is_err());
        assert!("unit:3".parse::<Reweight>().is_err());
    }

    #[test]
    fn series_residual_examples() {
        assert_eq!(pmi_series_residual(0.0).unwrap(), 0.0);
        let r = pmi_series_residual(0.2).unwrap();
        let direct = (1.0f64 + 0.4 / 1.8).ln() - (0.2 + 0.008 / 12.0 + 0.00032 / 80.0);
        assert!(r.abs() < 1e-6);
        assert!((r - direct).abs() < 1e-15);
        assert_eq!(pmi_series_residual(-0.2).unwrap(), -r);
        assert!(pmi_series_residual(2.0).is_err());
        let far = pmi_series_residual(1.5).unwrap();
        assert!(
            (far - ((1.0f64 + 3.0 / 0.5).ln() - (1.5 + 1.5f64.powi(3) / 12.0 + 1.5f64.powi(5) / 80.0))).abs() < 1e-15
        );
    }

    #[test]
    fn diagonal_weighted_minimizer() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let w = weighted_minimizer_from(&m, &[1.0, 1.0], 1).unwrap();
        assert!((w[(0, 0)].abs() - 2.0).abs() < 1e-12 && w[(1, 0)].abs() < 1e-12);
        assert!(weighted_minimizer_from(&m, &[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn unit_weights_reduce_to_plain_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose();
        let w = weighted_minimizer_from(&m, &[1.0; 6], 3).unwrap();
        let plain = eigh(&m, TopK::Top(3)).unwrap().factor(3).unwrap();
        assert!(requiv_distance(&w, &plain).unwrap() < 1e-10);
    }

    #[test]
    fn weighted_minimizer_beats_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let m = &a * a.transpose() + DMatrix::identity(3, 3);
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..3.0)).collect();
            let w = weighted_minimizer_from(&m, &g, 2).unwrap();
            let plain = eigh(&m, TopK::Top(2)).unwrap().factor(2).unwrap();
            assert!(weighted_loss(&m, &g, &w).unwrap() <= weighted_loss(&m, &g, &plain).unwrap() + 1e-12);
        }
    }

    #[test]
    fn rank_one_g_is_detected() {
        let docs: Vec<Vec<String>> =
            vec!["a a a a a b b b b b c c c c c a a a a".split(' ').map(String::from).collect()];
        let vocab = build_vocabulary(&docs, 3, 0).unwrap();
        let stats = count_skipgrams(&docs, &vocab, CountConfig::new(4)).unwrap();
        let cfg = Reweight::Composite { parts: vec![Reweight::Setting1, Reweight::Subsample] };
        let t = build_mstar(&stats, &cfg).unwrap();
        assert!(matches!(t.g_structure(), GStructure::RankOne(_)));
        weighted_minimizer(&stats, &cfg, 1).unwrap();
        let general = Reweight::default_target();
        let t = build_mstar(&stats, &general).unwrap();
        assert_eq!(t.g_structure(), &GStructure::General);
    }
}

//! Gradient flow `dW/dt = ½(M − WWᵀ)W`: closed-form mode dynamics and a
//! fourth-order integrator that checks them.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{eigh, requiv_distance, SpectralDecomposition, TopK};
use crate::target::TargetMatrix;

/// Consecutive step halvings tolerated before the integrator gives up.
pub const MAX_HALVINGS: usize = 20;

/// `s²(t)` of a mode with eigenvalue `λ` started from `s0sq`.
pub fn sigmoidal_variance(lambda: f64, s0sq: f64, t: f64) -> f64 {
    // Divided through by e^{λt} so large times saturate at λ instead of overflowing.
    let decay = (-lambda * t).exp();
    s0sq * lambda / (lambda * decay + s0sq * (1.0 - decay))
}

/// `τ = ln(λ/s0sq)/λ`.
pub fn characteristic_time(lambda: f64, s0sq: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("eigenvalue must be positive, got {lambda}")));
    }
    if !(s0sq > 0.0 && s0sq < lambda) {
        return Err(Error::invalid(format!("initial variance {s0sq} must lie in (0, {lambda})")));
    }
    Ok((lambda / s0sq).ln() / lambda)
}

/// First time at which `s²` reaches `λ/2` in the closed form.
pub fn half_saturation_time(lambda: f64, s0sq: f64) -> Result<f64> {
    characteristic_time(lambda, s0sq)?;
    if s0sq >= 0.5 * lambda {
        return Ok(0.0);
    }
    Ok(((lambda - s0sq) / s0sq).ln() / lambda)
}

/// Sampled flow: per-time mode variances, loss and alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub times: Vec<f64>,
    /// `mode_variance[t][k]` is `s_k²` at `times[t]`, descending in `k`.
    pub mode_variance: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
    /// `alignment[t][k]` is `‖V*[:, :k+1]ᵀ U[:, :k+1]‖²_F / (k+1)`.
    pub alignment: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub sigma2: Option<f64>,
}

impl DynamicsTrace {
    pub fn dim(&self) -> usize {
        self.mode_variance.first().map_or(0, Vec::len)
    }

    /// `s_k²(t)` for one mode across the trace.
    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.mode_variance.iter().map(|row| row[k]).collect()
    }

    /// First time each mode reaches half its target eigenvalue, linearly
    /// interpolated between samples.
    pub fn half_saturation_times(&self, lambdas: &[f64]) -> Vec<Option<f64>> {
        lambdas.iter().enumerate().map(|(k, &lambda)| crossing_time(&self.times, &self.mode(k), 0.5 * lambda)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.dim();
        let mut header = vec!["t".to_string(), "loss".to_string()];
        header.extend((1..=d).map(|k| format!("s{k}sq")));
        header.extend((1..=d).map(|k| format!("align{k}")));
        writeln!(out, "{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:e}"), format!("{:e}", self.loss[i])];
            row.extend(self.mode_variance[i].iter().map(|x| format!("{x:e}")));
            row.extend(self.alignment[i].iter().map(|x| format!("{x:e}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// First `t` with `values(t) >= level`, interpolated linearly.
pub fn crossing_time(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    let first = *values.first()?;
    if first >= level {
        return Some(times[0]);
    }
    values
        .windows(2)
        .zip(times.windows(2))
        .find_map(|(v, t)| (v[1] >= level).then(|| t[0] + (t[1] - t[0]) * (level - v[0]) / (v[1] - v[0])))
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("time grid must be non-empty, non-negative and strictly increasing"));
    }
    Ok(())
}

/// Closed-form flow from the aligned initialization `V*[:, :d] diag(s0)`.
pub fn aligned_flow(
    spec: &SpectralDecomposition,
    s0: &[f64],
    d: usize,
    times: &[f64],
    g: f64,
) -> Result<DynamicsTrace> {
    check_grid(times)?;
    if d == 0 || d > spec.len() || s0.len() != d {
        return Err(Error::invalid(format!("need 1 <= d <= {} and {d} initial singular values", spec.len())));
    }
    let lambda = spec.eigenvalues();
    if let Some(k) = (0..d).find(|&k| !(lambda[k] > 0.0)) {
        let non_negative = lambda.iter().filter(|&&l| l >= 0.0).count();
        return Err(Error::NegativeEigenvalue { mode: k, value: lambda[k], non_negative });
    }
    let top_sq: f64 = (0..d).map(|k| lambda[k] * lambda[k]).sum();
    let tail = (spec.source_frobenius_sq() - top_sq).max(0.0);
    let mut trace = empty_trace(times.len(), None, None);
    for &t in times {
        let s: Vec<f64> = (0..d).map(|k| sigmoidal_variance(lambda[k], s0[k] * s0[k], t)).collect();
        let fit: f64 = (0..d).map(|k| (lambda[k] - s[k]).powi(2)).sum();
        trace.times.push(t);
        trace.loss.push(0.25 * g * (fit + tail));
        trace.mode_variance.push(s);
        trace.alignment.push(vec![1.0; d]);
    }
    Ok(trace)
}

fn empty_trace(n: usize, seed: Option<u64>, sigma2: Option<f64>) -> DynamicsTrace {
    DynamicsTrace {
        times: Vec::with_capacity(n),
        mode_variance: Vec::with_capacity(n),
        loss: Vec::with_capacity(n),
        alignment: Vec::with_capacity(n),
        seed,
        sigma2,
    }
}

/// The target in its eigenbasis. With `M = QΛQᵀ` and `W = QW̃` the flow
/// becomes `dW̃/dt = ½(Λ − W̃W̃ᵀ)W̃`, which costs `O(Vd²)` per evaluation
/// instead of `O(V²d)`.
struct EigenFrame {
    q: DMatrix<f64>,
    lambda: DVector<f64>,
    /// `‖Λ‖²_F`.
    lambda_sq: f64,
}

impl EigenFrame {
    fn new(spec: &SpectralDecomposition) -> Result<Self> {
        if spec.len() != spec.source_dim() {
            return Err(Error::invalid("the flow frame needs the full eigendecomposition"));
        }
        let lambda = spec.eigenvalues().clone();
        Ok(Self { q: spec.eigenvectors().clone(), lambda_sq: lambda.norm_squared(), lambda })
    }

    fn to_frame(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.q.tr_mul(w)
    }

    fn from_frame(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.q * w
    }

    fn velocity(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = -(w * w.tr_mul(w));
        for c in 0..w.ncols() {
            for (i, l) in self.lambda.iter().enumerate() {
                out[(i, c)] += l * w[(i, c)];
            }
        }
        out * 0.5
    }

    /// `(g/4)‖W̃W̃ᵀ − Λ‖²_F = (g/4)(‖W̃ᵀW̃‖² − 2Σλ_i‖w̃_i‖² + ‖Λ‖²)`.
    fn loss(&self, w: &DMatrix<f64>, g: f64) -> f64 {
        let cross: f64 = w.row_iter().zip(self.lambda.iter()).map(|(r, l)| l * r.norm_squared()).sum();
        0.25 * g * (w.tr_mul(w).norm_squared() - 2.0 * cross + self.lambda_sq).max(0.0)
    }

    fn rk4(&self, w: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let k1 = self.velocity(w);
        let k2 = self.velocity(&(w + &k1 * (0.5 * h)));
        let k3 = self.velocity(&(w + &k2 * (0.5 * h)));
        let k4 = self.velocity(&(w + &k3 * h));
        w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }
}

/// Singular values squared (descending) and left singular vectors of `W`.
pub(crate) fn mode_state(w: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(w.transpose() * w);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s2: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut u = DMatrix::zeros(w.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        let col = w * eig.eigenvectors.column(i);
        let n = col.norm();
        if n > 0.0 {
            u.set_column(c, &(col / n));
        }
    }
    (s2, u)
}

/// Cumulative alignment `‖Aᵀ B[:, :k]‖²_F / k` for `k = 1..=d`, where `A`
/// holds the reference eigenvectors.
pub(crate) fn cumulative_alignment(reference: &DMatrix<f64>, u: &DMatrix<f64>) -> Vec<f64> {
    let d = u.ncols().min(reference.ncols());
    (1..=d).map(|k| (reference.columns(0, k).transpose() * u.columns(0, k)).norm_squared() / k as f64).collect()
}

/// Integrates the flow from `w0`, sampling at `times`.
///
/// `step` defaults to `0.01/λ₁`. A step that raises the loss by more than
/// `1e-9·loss(0)` is retried at half the size.
pub fn integrate_flow(
    target: &TargetMatrix,
    w0: &DMatrix<f64>,
    times: &[f64],
    step: Option<f64>,
) -> Result<DynamicsTrace> {
    integrate(target, w0, times, step, false).map(|(trace, _)| trace)
}

/// As [`integrate_flow`], also returning `W` at every grid time.
pub fn integrate_flow_state(
    target: &TargetMatrix,
    w0: &DMatrix<f64>,
    times: &[f64],
    step: Option<f64>,
) -> Result<(DynamicsTrace, Vec<DMatrix<f64>>)> {
    integrate(target, w0, times, step, true)
}

fn integrate(
    target: &TargetMatrix,
    w0: &DMatrix<f64>,
    times: &[f64],
    step: Option<f64>,
    keep_states: bool,
) -> Result<(DynamicsTrace, Vec<DMatrix<f64>>)> {
    let m = target.matrix();
    if w0.nrows() != m.nrows() || w0.ncols() == 0 {
        return Err(Error::ShapeMismatch(format!("W0 is {:?}, target is {}x{}", w0.shape(), m.nrows(), m.ncols())));
    }
    check_grid(times)?;
    let frame = EigenFrame::new(&eigh(m, TopK::All)?)?;
    let g = target.g().unwrap_or(1.0);
    let (trace, states) = integrate_in_frame(&frame, &frame.to_frame(w0), times, step, g, keep_states)?;
    Ok((trace, states.iter().map(|w| frame.from_frame(w)).collect()))
}

/// Integrates from `w0` given in the eigenbasis; states stay in that basis.
fn integrate_in_frame(
    frame: &EigenFrame,
    w0: &DMatrix<f64>,
    times: &[f64],
    step: Option<f64>,
    g: f64,
    keep_states: bool,
) -> Result<(DynamicsTrace, Vec<DMatrix<f64>>)> {
    check_grid(times)?;
    let d = w0.ncols();
    let base = step.unwrap_or(0.01 / frame.lambda[0].abs().max(f64::MIN_POSITIVE));
    if !(base > 0.0) {
        return Err(Error::invalid("integration step must be positive"));
    }
    // The reference eigenvectors are the first coordinate axes.
    let reference = DMatrix::identity(w0.nrows(), d.min(w0.nrows()));
    let mut w = w0.clone();
    let mut t = 0.0;
    let mut loss = frame.loss(&w, g);
    let tol = 1e-9 * loss;
    let mut trace = empty_trace(times.len(), None, None);
    let mut states = Vec::new();
    for &target_t in times {
        let mut h = base;
        let mut halvings = 0;
        while t < target_t {
            let dt = h.min(target_t - t);
            let next = frame.rk4(&w, dt);
            let next_loss = frame.loss(&next, g);
            if !next_loss.is_finite() || next_loss > loss + tol {
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::Divergence { time: t, halvings: MAX_HALVINGS });
                }
                h *= 0.5;
                continue;
            }
            halvings = 0;
            w = next;
            loss = next_loss;
            t = if dt == target_t - t { target_t } else { t + dt };
        }
        let (s2, u) = mode_state(&w);
        trace.times.push(target_t);
        trace.loss.push(loss);
        trace.alignment.push(cumulative_alignment(&reference, &u));
        trace.mode_variance.push(s2);
        if keep_states {
            states.push(w.clone());
        }
    }
    Ok((trace, states))
}

/// Leading-order peak of an off-diagonal coordinate `R_ij²` (`λ_i > λ_j`)
/// and the time at which it occurs.
///
/// Near the peak `σ²e^{λ_j t}` is negligible, leaving
/// `σ²e^{λ_j t}·λ_i/(λ_i + σ²e^{λ_i t})`; its maximum sits at
/// `σ²e^{λ_i t} = λ_iλ_j/(λ_i−λ_j)`, where the saturating factor equals
/// `(λ_i−λ_j)/λ_i`.
pub fn offdiagonal_peak(lambda_i: f64, lambda_j: f64, sigma2: f64) -> Result<(f64, f64)> {
    let (scale, t) = offdiagonal_peak_scaling(lambda_i, lambda_j, sigma2)?;
    Ok(((lambda_i - lambda_j) / lambda_i * scale, t))
}

/// The `σ`-scaling part of the peak, `(λ_iλ_j/(λ_i−λ_j))^{λ_j/λ_i}·σ^{2(λ_i−λ_j)/λ_i}`,
/// without the saturating factor, plus the peak time.
pub fn offdiagonal_peak_scaling(lambda_i: f64, lambda_j: f64, sigma2: f64) -> Result<(f64, f64)> {
    if !(lambda_i > lambda_j && lambda_j > 0.0 && sigma2 > 0.0) {
        return Err(Error::invalid(format!(
            "need λ_i > λ_j > 0 and σ² > 0, got λ_i = {lambda_i}, λ_j = {lambda_j}, σ² = {sigma2}"
        )));
    }
    let x = lambda_i * lambda_j / (lambda_i - lambda_j);
    let ratio = lambda_j / lambda_i;
    let scale = x.powf(ratio) * sigma2.powf(1.0 - ratio);
    let t = (x / sigma2).ln() / lambda_i;
    Ok((scale, t))
}

/// Exact `R_ij²(t)` of the decoupled off-diagonal equation with all initial
/// coordinates at `σ²`.
pub fn offdiagonal_exact(lambda_i: f64, lambda_j: f64, sigma2: f64, t: f64) -> f64 {
    let ej = (lambda_j * t).exp_m1();
    let ei = (lambda_i * t).exp_m1();
    let fj = lambda_j / (lambda_j + sigma2 * ej);
    let fi = lambda_i / (lambda_i + sigma2 * ei);
    sigma2 * fj * fj * fi * (lambda_j * t).exp()
}

/// One detected loss drop between plateaus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDrop {
    pub start: f64,
    pub peak: f64,
    pub end: f64,
    /// Fraction of the total loss decrease that happens inside the drop.
    pub fraction: f64,
}

/// Finds sharp loss drops as prominent peaks of the smoothed descent rate.
///
/// A peak counts when the rate falls below half its height on both sides
/// before the next peak and the loss released between the surrounding
/// minima is at least `min_fraction` of the total decrease.
pub fn detect_loss_drops(times: &[f64], loss: &[f64], min_fraction: f64) -> Vec<LossDrop> {
    let n = times.len().min(loss.len());
    if n < 3 {
        return Vec::new();
    }
    let total = loss[0] - loss[n - 1];
    if !(total > 0.0) {
        return Vec::new();
    }
    let raw: Vec<f64> = (0..n - 1).map(|i| -(loss[i + 1] - loss[i]) / (times[i + 1] - times[i])).collect();
    let rate: Vec<f64> = (0..raw.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(raw.len() - 1);
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mid = |i: usize| 0.5 * (times[i] + times[i + 1]);

    // Hysteresis walk: enter a drop at a local rise, leave once the rate
    // has fallen below half of the running peak.
    let mut drops = Vec::new();
    let mut i = 0;
    while i < rate.len() {
        let start = i;
        let mut peak = i;
        let mut j = i;
        while j + 1 < rate.len() && rate[j + 1] >= rate[j] {
            j += 1;
        }
        peak = peak.max(j);
        while j + 1 < rate.len() && rate[j + 1] > 0.5 * rate[peak] {
            j += 1;
            if rate[j] > rate[peak] {
                peak = j;
            }
        }
        while j + 1 < rate.len() && rate[j + 1] <= rate[j] {
            j += 1;
        }
        let released = loss[start] - loss[(j + 1).min(n - 1)];
        if released >= min_fraction * total && rate[peak] > 0.0 {
            drops.push(LossDrop { start: mid(start), peak: mid(peak), end: mid(j), fraction: released / total });
        }
        i = j + 1;
    }
    drops
}

/// Outcome of one `σ²` in the small-initialization experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentAlignmentRun {
    pub sigma2: f64,
    /// `ln(λ₁/σ²)/λ₁`, using the initializer variance.
    pub tau1: f64,
    /// Realized singular values of `W0`; the aligned reference starts here.
    pub realized_s0: Vec<f64>,
    /// `τ₁` recomputed from the realized top singular value.
    pub realized_tau1: f64,
    pub sup_distance: f64,
    pub final_distance: f64,
    pub final_relative_distance: f64,
    pub trace: DynamicsTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentAlignmentReport {
    pub d: usize,
    pub seed: u64,
    pub eigenvalues: Vec<f64>,
    /// Rescaled grid `t/τ₁` shared by every run.
    pub rescaled_times: Vec<f64>,
    pub runs: Vec<SilentAlignmentRun>,
}

impl SilentAlignmentReport {
    pub fn sup_distances(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.sup_distance).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// I.i.d. normal entries of variance `σ²`; one draw scaled per `σ²`.
    Random,
    /// `V*[:, :d]·σ`.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentAlignmentConfig {
    pub d: usize,
    pub sigma2: Vec<f64>,
    pub seed: u64,
    pub init: InitKind,
    /// Samples of the rescaled grid.
    pub grid_points: usize,
    /// Rescaled horizon as a multiple of `τ_d/τ₁`.
    pub horizon: f64,
}

impl SilentAlignmentConfig {
    pub fn new(d: usize, sigma2: Vec<f64>, seed: u64) -> Self {
        Self { d, sigma2, seed, init: InitKind::Random, grid_points: 200, horizon: 2.0 }
    }
}

/// Compares small random initialization against the aligned trajectory
/// with matching initial singular values, in time rescaled by `τ₁`.
pub fn silent_alignment_experiment(
    target: &TargetMatrix,
    cfg: &SilentAlignmentConfig,
) -> Result<SilentAlignmentReport> {
    let v = target.dim();
    let d = cfg.d;
    if d == 0 || d >= v {
        return Err(Error::invalid(format!("d must lie in 1..{v}")));
    }
    if cfg.sigma2.is_empty() || cfg.grid_points < 2 {
        return Err(Error::invalid("need at least one σ² and two grid points"));
    }
    let spec = eigh(target.matrix(), TopK::All)?;
    let w_star = spec.factor(d)?;
    let lambda: Vec<f64> = spec.eigenvalues().iter().copied().collect();
    if lambda[..d].windows(2).any(|w| !(w[0] > w[1])) || !(lambda[d - 1] > 0.0) {
        return Err(Error::Degenerate("top-d eigenvalues must be positive and distinct".into()));
    }
    let star_norm = w_star.norm();
    // Runs, references and distances all live in the eigenbasis, where
    // REquiv distances are unchanged.
    let frame = EigenFrame::new(&spec)?;
    let w_star = frame.to_frame(&w_star);
    let g = target.g().unwrap_or(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z = frame.to_frame(&DMatrix::from_fn(v, d, |_, _| StandardNormal.sample(&mut rng)));
    let sigma_max = cfg.sigma2.iter().copied().fold(f64::MIN, f64::max);
    let sigma_min = cfg.sigma2.iter().copied().fold(f64::MAX, f64::min);
    if !(sigma_min > 0.0 && sigma_max < lambda[d - 1]) {
        return Err(Error::invalid("every σ² must lie in (0, λ_d)"));
    }
    let tau_ratio = {
        let t1 = characteristic_time(lambda[0], sigma_min)?;
        characteristic_time(lambda[d - 1], sigma_min)? / t1
    };
    let end = cfg.horizon * tau_ratio;
    let rescaled: Vec<f64> = (0..cfg.grid_points).map(|i| end * i as f64 / (cfg.grid_points - 1) as f64).collect();

    let runs = cfg
        .sigma2
        .par_iter()
        .map(|&sigma2| -> Result<SilentAlignmentRun> {
            let w0 = match cfg.init {
                InitKind::Random => &z * sigma2.sqrt(),
                InitKind::Aligned => DMatrix::identity(v, d) * sigma2.sqrt(),
            };
            let tau1 = characteristic_time(lambda[0], sigma2)?;
            let times: Vec<f64> = rescaled.iter().map(|r| r * tau1).collect();
            let (mut trace, states) = integrate_in_frame(&frame, &w0, &times, None, g, true)?;
            trace.sigma2 = Some(sigma2);
            trace.seed = Some(cfg.seed);
            let (s0sq, _) = mode_state(&w0);
            let realized_s0: Vec<f64> = s0sq.iter().map(|x| x.sqrt()).collect();
            let mut sup: f64 = 0.0;
            for (t, w) in times.iter().zip(&states) {
                let reference = aligned_state(&lambda, &s0sq, v, d, *t);
                sup = sup.max(requiv_distance(w, &reference)? / star_norm);
            }
            let final_distance = requiv_distance(states.last().unwrap(), &w_star)?;
            Ok(SilentAlignmentRun {
                sigma2,
                tau1,
                realized_tau1: characteristic_time(lambda[0], s0sq[0].min(0.5 * lambda[0]))?,
                realized_s0,
                sup_distance: sup,
                final_distance,
                final_relative_distance: final_distance / star_norm,
                trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SilentAlignmentReport { d, seed: cfg.seed, eigenvalues: lambda[..d].to_vec(), rescaled_times: rescaled, runs })
}

/// The aligned trajectory `diag(s_k(t))` in the eigenbasis, `v × d`.
fn aligned_state(lambda: &[f64], s0sq: &[f64], v: usize, d: usize, t: f64) -> DMatrix<f64> {
    DMatrix::from_fn(v, d, |i, k| if i == k { sigmoidal_variance(lambda[k], s0sq[k], t).sqrt() } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::factorize_target;
    use rand::Rng;

    fn target_with(eigs: &[f64], seed: u64) -> TargetMatrix {
        let n = eigs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let m = &q * DMatrix::from_diagonal(&DVector::from_row_slice(eigs)) * q.transpose();
        TargetMatrix::synthetic((&m + m.transpose()) * 0.5).unwrap()
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoidal_variance(2.0, 0.02, 0.0), 0.02);
        for t in [0.0, 1.0, 1e3] {
            assert!((sigmoidal_variance(3.0, 3.0, t) - 3.0).abs() < 1e-15);
        }
        let tau = 0.5 * 100f64.ln();
        assert!((sigmoidal_variance(2.0, 0.02, tau) - 4.0 / 3.98).abs() < 1e-12);
        assert_eq!(sigmoidal_variance(2.0, 1e-8, 1e6), 2.0);
    }

    #[test]
    fn tau_examples() {
        assert!((characteristic_time(1.0, (-10f64).exp()).unwrap() - 10.0).abs() < 1e-12);
        assert!((characteristic_time(2.0, 2e-4).unwrap() - 0.5 * 1e4f64.ln()).abs() < 1e-12);
        assert!(characteristic_time(2.0, 1e-3).unwrap() < characteristic_time(1.0, 1e-3).unwrap());
        assert!(characteristic_time(1.0, 1.0).is_err());
    }

    #[test]
    fn peak_scaling_example() {
        let (scale, t) = offdiagonal_peak_scaling(2.0, 1.0, 1e-6).unwrap();
        assert!((scale - 2f64.sqrt() * 1e-3).abs() < 1e-12);
        assert!((t - 0.5 * 2e6f64.ln()).abs() < 1e-12);
        let (peak, _) = offdiagonal_peak(2.0, 1.0, 1e-6).unwrap();
        assert!((peak - 0.5 * scale).abs() < 1e-15);
        assert!(offdiagonal_peak(1.0, 1.0, 1e-6).is_err());
        assert!(offdiagonal_peak(2.0, 1.0, 1e-12).unwrap().0 < peak);
    }

    #[test]
    fn aligned_flow_examples() {
        let t = target_with(&[3.0, 1.0, 0.5, 0.2], 1);
        let spec = eigh(t.matrix(), TopK::All).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
        let fixed = aligned_flow(&spec, &[3f64.sqrt(), 1.0], 2, &grid, 1.0).unwrap();
        assert!(fixed.loss.iter().all(|&l| (l - fixed.loss[0]).abs() < 1e-12));
        assert!((fixed.loss[0] - 0.25 * (0.25 + 0.04)).abs() < 1e-12);
        let one = aligned_flow(&spec, &[1e-2], 1, &[0.0, characteristic_time(3.0, 1e-4).unwrap(), 100.0], 1.0).unwrap();
        assert!(one.loss[0] > one.loss[1] && one.loss[1] > one.loss[2]);
    }

    #[test]
    fn global_minimum_is_stationary() {
        let t = target_with(&[3.0, 1.0, 0.5, 0.2, -0.1, 0.0], 2);
        let w_star = factorize_target(&t, 2).unwrap().into_matrix();
        let grid = [1.0, 5.0, 10.0];
        let (_, states) = integrate_flow_state(&t, &w_star, &grid, None).unwrap();
        for w in states {
            assert!((w - &w_star).norm() <= 1e-8);
        }
    }

    #[test]
    fn aligned_integration_matches_closed_form() {
        let t = target_with(&[3.0, 1.0, 0.4, 0.3, 0.1, 0.05], 3);
        let spec = eigh(t.matrix(), TopK::All).unwrap();
        let s0sq: f64 = 1e-6;
        let w0 = spec.eigenvectors().columns(0, 2) * s0sq.sqrt();
        let tau2 = characteristic_time(1.0, s0sq).unwrap();
        let grid: Vec<f64> = (1..=100).map(|i| 5.0 * tau2 * i as f64 / 100.0).collect();
        let trace = integrate_flow(&t, &w0, &grid, None).unwrap();
        for (i, &time) in grid.iter().enumerate() {
            for (k, lambda) in [3.0, 1.0].into_iter().enumerate() {
                let exact = sigmoidal_variance(lambda, s0sq, time);
                assert!((trace.mode_variance[i][k] - exact).abs() / exact <= 1e-3);
            }
        }
        assert!(trace.loss.windows(2).all(|w| w[1] <= w[0] + 1e-9 * trace.loss[0]));
    }

    #[test]
    fn small_random_init_reaches_factorization() {
        let t = target_with(&[4.0, 2.0, 1.0, 0.3, 0.1, 0.05], 4);
        let w_star = factorize_target(&t, 3).unwrap().into_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w0 = DMatrix::from_fn(6, 3, |_, _| 1e-4 * rng.sample::<f64, _>(StandardNormal));
        let end = 3.0 * characteristic_time(1.0, 1e-8).unwrap();
        let (trace, states) = integrate_flow_state(&t, &w0, &[end / 2.0, end], None).unwrap();
        assert!(requiv_distance(states.last().unwrap(), &w_star).unwrap() <= 1e-3 * w_star.norm());
        assert!(trace.alignment.last().unwrap().iter().all(|&a| a > 0.999));
    }

    #[test]
    fn aligned_init_has_no_alignment_gap() {
        let t = target_with(&[4.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01], 5);
        let mut cfg = SilentAlignmentConfig::new(3, vec![1e-4, 1e-6], 1);
        cfg.init = InitKind::Aligned;
        cfg.grid_points = 40;
        let report = silent_alignment_experiment(&t, &cfg).unwrap();
        assert!(report.sup_distances().iter().all(|&s| s <= 1e-6), "{:?}", report.sup_distances());
    }

    #[test]
    fn single_mode_has_one_drop() {
        let t = target_with(&[2.0, 0.5, 0.3, 0.1], 6);
        let mut cfg = SilentAlignmentConfig::new(1, vec![1e-6], 2);
        cfg.grid_points = 300;
        let report = silent_alignment_experiment(&t, &cfg).unwrap();
        let trace = &report.runs[0].trace;
        assert_eq!(detect_loss_drops(&trace.times, &trace.loss, 0.01).len(), 1);
    }

    #[test]
    fn drop_detector_counts_steps() {
        let t = target_with(&[4.0, 2.0, 1.0, 0.1, 0.05], 7);
        let spec = eigh(t.matrix(), TopK::All).unwrap();
        let s0 = [1e-4; 3];
        let end = 2.0 * characteristic_time(1.0, 1e-8).unwrap();
        let grid: Vec<f64> = (0..600).map(|i| end * i as f64 / 599.0).collect();
        let trace = aligned_flow(&spec, &s0, 3, &grid, 1.0).unwrap();
        let drops = detect_loss_drops(&trace.times, &trace.loss, 0.01);
        assert_eq!(drops.len(), 3, "{drops:?}");
        assert!(drops.windows(2).all(|w| w[0].peak < w[1].peak));
    }

    #[test]
    fn csv_layout() {
        let t = target_with(&[2.0, 1.0, 0.1], 8);
        let spec = eigh(t.matrix(), TopK::All).unwrap();
        let trace = aligned_flow(&spec, &[0.1, 0.1], 2, &[0.0, 1.0], 1.0).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,loss,s1sq,s2sq,align1,align2\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

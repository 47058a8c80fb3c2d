//! Symmetric eigendecomposition, truncated factorization and comparisons
//! that respect the right-orthogonal equivalence of embeddings.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, Provenance};
use crate::error::{Error, Result};
use crate::target::TargetMatrix;

/// Above this dimension the automatic method switches to subspace iteration.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    All,
    Top(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EighMethod {
    #[default]
    Auto,
    Dense,
    Subspace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    source_dim: usize,
    source_frobenius_sq: f64,
    near_degenerate: Vec<usize>,
}

impl SpectralDecomposition {
    /// Descending eigenvalues.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, one per column.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `‖M‖²_F` of the decomposed matrix.
    pub fn source_frobenius_sq(&self) -> f64 {
        self.source_frobenius_sq
    }

    /// Indices `k` with `λ_k − λ_{k+1} < 1e-10·|λ₁|`.
    pub fn near_degenerate(&self) -> &[usize] {
        &self.near_degenerate
    }

    /// `V[:, :d] Λ[:d]^½`; fails if `λ_d < 0`.
    pub fn factor(&self, d: usize) -> Result<DMatrix<f64>> {
        if d == 0 || d > self.len() {
            return Err(Error::invalid(format!("rank {d} outside 1..={}", self.len())));
        }
        if self.eigenvalues[d - 1] < 0.0 {
            let non_negative = self.eigenvalues.iter().filter(|&&l| l >= 0.0).count();
            let mode = self.eigenvalues.iter().position(|&l| l < 0.0).unwrap_or(d - 1);
            return Err(Error::NegativeEigenvalue { mode, value: self.eigenvalues[mode], non_negative });
        }
        let mut w = self.eigenvectors.columns(0, d).into_owned();
        for (k, mut col) in w.column_iter_mut().enumerate() {
            col *= self.eigenvalues[k].sqrt();
        }
        Ok(w)
    }
}

/// Top eigenpairs of a symmetric matrix, largest first.
pub fn eigh(m: &DMatrix<f64>, top_k: TopK) -> Result<SpectralDecomposition> {
    eigh_with(m, top_k, EighMethod::Auto)
}

pub fn eigh_with(m: &DMatrix<f64>, top_k: TopK, method: EighMethod) -> Result<SpectralDecomposition> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("eigh needs a square matrix, got {:?}", m.shape())));
    }
    let n = m.nrows();
    if n == 0 {
        return Err(Error::invalid("eigh of an empty matrix"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = m.amax();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in j + 1..n {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if dev > 1e-10 * scale {
        return Err(Error::Asymmetric { max_deviation: dev });
    }
    let k = match top_k {
        TopK::All => n,
        TopK::Top(k) if k >= 1 && k <= n => k,
        TopK::Top(k) => return Err(Error::invalid(format!("top_k {k} outside 1..={n}"))),
    };
    let sym = if dev > 0.0 { (m + m.transpose()) * 0.5 } else { m.clone() };
    let use_subspace = match method {
        EighMethod::Dense => false,
        EighMethod::Subspace => k < n,
        EighMethod::Auto => n > DENSE_LIMIT && k * 10 <= n,
    };
    let (mut values, mut vectors) = if use_subspace { subspace_iteration(&sym, k)? } else { dense(sym.clone(), k) };
    for (mut col, _) in vectors.column_iter_mut().zip(values.iter_mut()) {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let lead = values[0].abs();
    let near_degenerate = (0..k.saturating_sub(1)).filter(|&i| values[i] - values[i + 1] < 1e-10 * lead).collect();
    Ok(SpectralDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
        source_dim: n,
        source_frobenius_sq: sym.norm_squared(),
        near_degenerate,
    })
}

fn sorted_desc(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn dense(m: DMatrix<f64>, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let order = sorted_desc(&eig.eigenvalues);
    let values = DVector::from_iterator(k, order[..k].iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Blocked subspace iteration on the shifted matrix `M + cI`, where `c` is
/// the Gershgorin bound, with a Rayleigh-Ritz step every sweep.
fn subspace_iteration(m: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let shift = (0..n).map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let tol = 1e-8 * shift.max(f64::MIN_POSITIVE);
    let p = (k + k / 2 + 8).min(n);
    // Deterministic start so repeated calls agree bit for bit.
    let mut q = DMatrix::from_fn(n, p, |i, j| {
        let x = ((i * 7919 + j * 104_729 + 1) as f64).sin() * 43758.5453;
        x - x.floor() - 0.5
    });
    q = q.qr().q();
    for _ in 0..20_000 {
        let z = m * &q + &q * shift;
        q = z.qr().q();
        let h = q.transpose() * m * &q;
        let h = (&h + h.transpose()) * 0.5;
        let (ritz_vals, ritz_vecs) = dense(h, p);
        q = &q * ritz_vecs;
        let mq = m * q.columns(0, k);
        let converged = (0..k).all(|c| (mq.column(c) - q.column(c) * ritz_vals[c]).norm() <= tol);
        if converged {
            return Ok((ritz_vals.rows(0, k).into_owned(), q.columns(0, k).into_owned()));
        }
    }
    Err(Error::Degenerate(format!("subspace iteration for the top {k} eigenpairs did not converge")))
}

/// Best rank-d factorization `W = V[:, :d] Λ[:d]^½` of a target.
pub fn factorize_target(target: &TargetMatrix, d: usize) -> Result<EmbeddingMatrix> {
    let dim = target.dim();
    if d == 0 || d > dim {
        return Err(Error::invalid(format!("rank {d} outside 1..={dim}")));
    }
    let spec = eigh(target.matrix(), TopK::Top(d))?;
    EmbeddingMatrix::new(spec.factor(d)?, Provenance::Spectral, target.checksum())
}

/// Orthogonal `U` minimising `‖W1 U − W2‖_F`.
pub fn procrustes_rotation(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w1.shape() != w2.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", w1.shape(), w2.shape())));
    }
    let svd = (w1.transpose() * w2).svd(true, true);
    let (Some(a), Some(bt)) = (svd.u, svd.v_t) else {
        return Err(Error::Degenerate("SVD failed in Procrustes alignment".into()));
    };
    Ok(a * bt)
}

/// `min_U ‖W1 U − W2‖_F` over orthogonal `U`.
pub fn requiv_distance(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<f64> {
    let u = procrustes_rotation(w1, w2)?;
    Ok((w1 * u - w2).norm())
}

/// Top-`k` left singular vectors and singular values of `W`.
pub fn left_singular(w: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if k == 0 || k > w.ncols().min(w.nrows()) {
        return Err(Error::invalid(format!("k = {k} exceeds the rank bound of a {:?} matrix", w.shape())));
    }
    // Eigenvectors of the small Gram matrix give right singular vectors.
    let gram = w.transpose() * w;
    let spec = eigh(&gram, TopK::Top(k))?;
    let sv = spec.eigenvalues().map(|l| l.max(0.0).sqrt());
    let rank_tol = 1e-10 * sv[0].max(f64::MIN_POSITIVE) * (w.nrows().max(w.ncols()) as f64);
    if sv[k - 1] <= rank_tol {
        return Err(Error::Degenerate(format!("matrix has rank below {k}")));
    }
    let mut u = w * spec.eigenvectors();
    for (c, mut col) in u.column_iter_mut().enumerate() {
        col /= sv[c];
    }
    // Re-orthonormalise to wash out the squared conditioning of the Gram route.
    let qr = u.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..k {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    Ok((q, sv))
}

/// `(U1ᵀ U2)²` elementwise for the top-`k` left singular vectors.
pub fn subspace_overlap(w1: &DMatrix<f64>, w2: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if w1.nrows() != w2.nrows() {
        return Err(Error::ShapeMismatch(format!("{} vs {} rows", w1.nrows(), w2.nrows())));
    }
    let (u1, _) = left_singular(w1, k)?;
    let (u2, _) = left_singular(w2, k)?;
    Ok((u1.transpose() * u2).map(|x| x * x))
}

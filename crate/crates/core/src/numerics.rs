//! Matrix and kernel primitives shared by every estimator.
//!
//! All functions here are pure; nothing holds state between calls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a basis column is
/// considered linearly dependent.
pub const RANK_TOL: f64 = 1e-8;

/// Default relative cutoff for the pseudo-inverse.
pub const PINV_TOL: f64 = 1e-10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A full-column-rank `p × d` matrix standing for the subspace it spans.
///
/// Only the span is meaningful; two bases that differ by an invertible
/// right factor describe the same subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    entries: DMatrix<f64>,
}

impl Basis {
    /// Wraps `entries` after checking `1 ≤ d ≤ p`, finiteness and full
    /// numerical column rank.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (p, d) = entries.shape();
        if d == 0 || d > p {
            return Err(Error::Dimension(format!(
                "basis must satisfy 1 <= d <= p, got p={p}, d={d}"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("basis has non-finite entries".into()));
        }
        let rank = numerical_rank(&entries, RANK_TOL);
        if rank < d {
            return Err(Error::DegenerateBasis { rank, expected: d });
        }
        Ok(Self { entries })
    }

    /// Builds a basis with orthonormal columns spanning the same space as
    /// `entries` (thin QR).
    pub fn orthonormalized(entries: DMatrix<f64>) -> Result<Self> {
        let checked = Self::new(entries)?;
        Ok(Self {
            entries: orthonormalize(&checked.entries),
        })
    }

    /// Unit coordinate vectors `e_{i}` for the given zero-based indices.
    pub fn coordinate(p: usize, indices: &[usize]) -> Result<Self> {
        let mut m = DMatrix::zeros(p, indices.len());
        for (col, &i) in indices.iter().enumerate() {
            if i >= p {
                return Err(Error::Dimension(format!("index {i} out of range for p={p}")));
            }
            m[(i, col)] = 1.0;
        }
        Self::new(m)
    }

    pub fn from_columns(p: usize, columns: &[&[f64]]) -> Result<Self> {
        let mut m = DMatrix::zeros(p, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != p {
                return Err(Error::Dimension(format!(
                    "column {j} has length {}, expected {p}",
                    col.len()
                )));
            }
            m.column_mut(j).copy_from_slice(col);
        }
        Self::new(m)
    }

    pub fn p(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn projection(&self) -> DMatrix<f64> {
        projection_matrix(self)
    }

    /// Right-multiplies by `other`, e.g. embedding a reduced-space basis back
    /// into the ambient space.
    pub fn embed(&self, inner: &Basis) -> Result<Basis> {
        if self.d() != inner.p() {
            return Err(Error::Dimension(format!(
                "cannot embed a basis of R^{} through a {}-column basis",
                inner.p(),
                self.d()
            )));
        }
        Basis::new(&self.entries * inner.matrix())
    }
}

/// Bandwidth rule `h = c · n^(−1/(q+4))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub constant: f64,
    pub smoothing_dim: usize,
    pub sample_size: usize,
}

impl KernelSpec {
    pub fn new(constant: f64, smoothing_dim: usize, sample_size: usize) -> Result<Self> {
        if !(constant.is_finite() && constant > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tuning constant must be positive, got {constant}"
            )));
        }
        if smoothing_dim == 0 || sample_size == 0 {
            return Err(Error::InvalidInput(
                "smoothing dimension and sample size must be positive".into(),
            ));
        }
        Ok(Self {
            constant,
            smoothing_dim,
            sample_size,
        })
    }
}

pub fn bandwidth(spec: &KernelSpec) -> f64 {
    let exponent = -1.0 / (spec.smoothing_dim as f64 + 4.0);
    spec.constant * (spec.sample_size as f64).powf(exponent)
}

/// Product Gaussian kernel `Π_j φ(u_j / h) / h`.
pub fn gaussian_weight(u: &[f64], h: f64) -> f64 {
    debug_assert!(h > 0.0);
    let sq: f64 = u.iter().map(|v| v * v).sum();
    let norm = (INV_SQRT_2PI / h).powi(u.len() as i32);
    norm * (-0.5 * sq / (h * h)).exp()
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Moore–Penrose inverse through the SVD.
///
/// Singular values at or below `tol` are treated as zero; `tol == 0` selects
/// the relative default `1e-10 · σ_max`.
pub fn moore_penrose(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    pinv_impl(m, tol, None)
}

/// Pseudo-inverse restricted to the `max_rank` leading singular directions
/// (still honoring the default relative cutoff).
pub fn moore_penrose_truncated(m: &DMatrix<f64>, max_rank: usize) -> Result<DMatrix<f64>> {
    pinv_impl(m, 0.0, Some(max_rank))
}

fn pinv_impl(m: &DMatrix<f64>, tol: f64, max_rank: Option<usize>) -> Result<DMatrix<f64>> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("pseudo-inverse tolerance {tol}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "pseudo-inverse of a matrix with non-finite entries".into(),
        ));
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma = &svd.singular_values;
    let max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = if tol == 0.0 { PINV_TOL * max } else { tol };

    // nalgebra does not sort singular values, so rank truncation needs an order
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let keep = max_rank.unwrap_or(order.len()).min(order.len());

    let mut out = DMatrix::zeros(c, r);
    for &k in order.iter().take(keep) {
        let s = sigma[k];
        if s <= cutoff || s == 0.0 {
            continue;
        }
        // out += v_k u_kᵀ / s
        let vk = v_t.row(k).transpose();
        let uk = u.column(k);
        out.ger(1.0 / s, &vk, &uk, 1.0);
    }
    Ok(out)
}

/// Columns of the thin-QR factor, with signs fixed so the diagonal of R is
/// nonnegative.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn projection_matrix(basis: &Basis) -> DMatrix<f64> {
    let q = orthonormalize(basis.matrix());
    &q * q.transpose()
}

/// Frobenius norm of the difference of the two orthogonal projections.
pub fn subspace_distance(a: &Basis, b: &Basis) -> Result<f64> {
    if a.p() != b.p() {
        return Err(Error::Dimension(format!(
            "subspaces live in R^{} and R^{}",
            a.p(),
            b.p()
        )));
    }
    Ok((projection_matrix(a) - projection_matrix(b)).norm())
}

/// Eigenvectors of a symmetric matrix for its `k` largest eigenvalues, as
/// columns in decreasing eigenvalue order.
pub fn top_eigenvectors(sym: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = sym.nrows();
    let mut vecs = DMatrix::zeros(n, k);
    let mut vals = Vec::with_capacity(k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(idx));
        vals.push(eig.eigenvalues[idx]);
    }
    (vecs, vals)
}

/// Column-stacking `vec`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for a `rows × cols` matrix.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub(crate) fn check_finite(label: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{label} has non-finite entries")));
    }
    Ok(())
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

//! Dense symmetric linear algebra on top of `nalgebra`.
//!
//! Everything here works on small (d <= 64) dense matrices, so spectral decompositions are
//! used directly for fractional powers instead of iterative schemes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Relative floor below which a matrix counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;
/// Relative tolerance on negative eigenvalues for the PSD check.
const PSD_RTOL: f64 = 1e-10;
/// Eigenvalues are clamped to this fraction of the largest one before taking powers.
const EIGEN_CLAMP: f64 = 1e-14;
const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Number of Sherman-Morrison updates between full re-inversions in [`InverseTracker`].
pub const REFRESH_INTERVAL: usize = 64;

/// Symmetric positive (semi)definite matrix.
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2`, so `m[(i, j)] == m[(j, i)]` holds
/// bitwise. Values are immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

/// Eigen-decomposition `M = Q diag(λ) Qᵀ` with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)]) / 2.0)
}

impl SpdMatrix {
    /// Validates squareness, finiteness and positive semidefiniteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::param("matrix", "dimension must be positive"));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("matrix", "entries must be finite"));
        }
        let spd = Self::from_symmetric(&m);
        let spectral = spd.spectral();
        let max = spectral.eigenvalues[0];
        let min = spectral.eigenvalues[spectral.eigenvalues.len() - 1];
        if min < -PSD_RTOL * max.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        Ok(spd)
    }

    /// Trusted path: symmetrizes without checking definiteness.
    pub(crate) fn from_symmetric(m: &DMatrix<f64>) -> Self {
        SpdMatrix { inner: symmetrize(m) }
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::param("scale", format!("must be positive, got {scale}")));
        }
        Ok(SpdMatrix {
            inner: DMatrix::identity(dim, dim) * scale,
        })
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        for (index, &value) in diag.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidEigenvalue { index, value });
            }
        }
        Ok(SpdMatrix {
            inner: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::param("factor", format!("must be positive, got {factor}")));
        }
        Ok(SpdMatrix { inner: &self.inner * factor })
    }

    pub fn spectral(&self) -> SpectralDecomposition {
        SpectralDecomposition::of(&self.inner)
    }

    /// Largest eigenvalue, i.e. the operator norm.
    pub fn max_eigenvalue(&self) -> f64 {
        self.spectral().eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let ev = self.spectral().eigenvalues;
        ev[ev.len() - 1]
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        let ev = self.spectral().eigenvalues;
        ev[ev.len() - 1] >= -PSD_RTOL * ev[0].abs().max(f64::MIN_POSITIVE)
    }

    /// Lower Cholesky factor `L` with `M = L Lᵀ`.
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        cholesky(&self.inner).map(|c| c.l())
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        let inv = cholesky(&self.inner)?.inverse();
        Ok(SpdMatrix::from_symmetric(&inv))
    }

    /// `M^p` for any real `p` through the spectral path. Non-positive powers require `M`
    /// to be positive definite.
    pub fn power(&self, p: f64) -> Result<SpdMatrix> {
        let spectral = self.spectral();
        let values = powered_eigenvalues(&spectral.eigenvalues, p)?;
        Ok(spectral.recompose_with(&values))
    }

    /// `tr(M^p)` without forming the matrix.
    pub fn trace_power(&self, p: f64) -> Result<f64> {
        let spectral = self.spectral();
        Ok(powered_eigenvalues(&spectral.eigenvalues, p)?.sum())
    }
}

/// Applies `λ ↦ λ^p` after the positive-definiteness gate and clamping.
fn powered_eigenvalues(eigenvalues: &DVector<f64>, p: f64) -> Result<DVector<f64>> {
    let max = eigenvalues[0];
    let min = eigenvalues[eigenvalues.len() - 1];
    if !(max > 0.0) || min <= SINGULAR_RTOL * max {
        return Err(Error::SingularMatrix(format!("eigenvalue range [{min:e}, {max:e}]")));
    }
    let floor = EIGEN_CLAMP * max;
    Ok(eigenvalues.map(|l| l.max(floor).powf(p)))
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::SingularMatrix("Cholesky factorization failed".into()))
}

impl SpectralDecomposition {
    pub fn of(m: &DMatrix<f64>) -> Self {
        let eig = m.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
        let eigenvectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        SpectralDecomposition { eigenvalues, eigenvectors }
    }

    /// Eigenvalue shifts of `M + uuᵀ` as `(λ_i, μ_i - λ_i)` pairs, in the order of `self`.
    ///
    /// Each shift is the root of the secular equation `1 + Σ_j z_j² / (λ_j - λ_i - δ) = 0` with
    /// `z = Qᵀu`, solved directly for `δ`, so updates far below `ε ‖M‖` keep full relative accuracy.
    pub fn rank_one_shifts(&self, u: &DVector<f64>) -> Vec<(f64, f64)> {
        let n = self.eigenvalues.len();
        let z = self.eigenvectors.transpose() * u;
        // Ascending order, so root k lies between active eigenvalues k and k + 1.
        let lam: Vec<f64> = (0..n).rev().map(|i| self.eigenvalues[i]).collect();
        let mut w: Vec<f64> = (0..n).rev().map(|i| z[i] * z[i]).collect();
        let tie = 4.0 * f64::EPSILON * lam.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        // A repeated eigenvalue moves only along the projection of u onto its eigenspace.
        for i in 1..n {
            if lam[i] - lam[i - 1] <= tie {
                w[i] += w[i - 1];
                w[i - 1] = 0.0;
            }
        }
        let active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
        let total: f64 = w.iter().sum();
        let mut shift = vec![0.0; n];
        for (k, &i) in active.iter().enumerate() {
            let upper = active.get(k + 1).map_or(total, |&j| lam[j] - lam[i]);
            let secular = |delta: f64| 1.0 + active.iter().map(|&j| w[j] / ((lam[j] - lam[i]) - delta)).sum::<f64>();
            let (mut lo, mut hi) = (0.0f64, upper);
            for _ in 0..2200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if secular(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            shift[i] = 0.5 * (lo + hi);
        }
        (0..n).map(|i| (self.eigenvalues[i], shift[n - 1 - i])).collect()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        q * DMatrix::from_diagonal(&self.eigenvalues) * q.transpose()
    }

    fn recompose_with(&self, values: &DVector<f64>) -> SpdMatrix {
        let q = &self.eigenvectors;
        SpdMatrix::from_symmetric(&(q * DMatrix::from_diagonal(values) * q.transpose()))
    }
}

/// Builds `R diag(evals) Rᵀ`; `rotation` defaults to the identity.
pub fn spd_from_eigenvalues(evals: &[f64], rotation: Option<&DMatrix<f64>>) -> Result<SpdMatrix> {
    if evals.is_empty() {
        return Err(Error::param("evals", "must be nonempty"));
    }
    for (index, &value) in evals.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidEigenvalue { index, value });
        }
    }
    let d = evals.len();
    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(evals));
    match rotation {
        None => Ok(SpdMatrix::from_symmetric(&diag)),
        Some(q) => {
            if q.nrows() != d || q.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: q.nrows(),
                });
            }
            let deviation = orthogonality_defect(q);
            if deviation > ORTHOGONALITY_TOL {
                return Err(Error::InvalidRotation { deviation });
            }
            Ok(SpdMatrix::from_symmetric(&(q * diag * q.transpose())))
        }
    }
}

/// `max |QᵀQ - I|`.
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    let id = DMatrix::<f64>::identity(q.ncols(), q.ncols());
    (gram - id).amax()
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the sign fix).
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `M^p` for `p ∈ (0, 1]`.
pub fn fractional_power(m: &SpdMatrix, p: f64) -> Result<SpdMatrix> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1], got {p}")));
    }
    m.power(p)
}

/// Sum of log eigenvalues.
pub fn log_det(m: &SpdMatrix) -> Result<f64> {
    let ev = m.spectral().eigenvalues;
    let max = ev[0];
    let min = ev[ev.len() - 1];
    if !(min > 0.0) || min <= SINGULAR_RTOL * max {
        return Err(Error::SingularMatrix(format!("eigenvalue range [{min:e}, {max:e}]")));
    }
    Ok(ev.iter().map(|l| l.ln()).sum())
}

/// `log det(base + increment) - log det(base)` for PSD `increment`, computed as
/// `Σ log1p(μ_i)` over the eigenvalues of `L⁻¹ increment L⁻ᵀ` (`base = L Lᵀ`). Stays
/// accurate when the increment is tiny relative to `base`.
pub fn log_det_ratio(base: &SpdMatrix, increment: &DMatrix<f64>) -> Result<f64> {
    let d = base.dim();
    if increment.nrows() != d || increment.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: increment.nrows(),
        });
    }
    let l = base.cholesky_factor()?;
    let left = l
        .solve_lower_triangular(increment)
        .ok_or_else(|| Error::SingularMatrix("triangular solve failed".into()))?;
    let whitened = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::SingularMatrix("triangular solve failed".into()))?;
    let ev = SpectralDecomposition::of(&symmetrize(&whitened)).eigenvalues;
    Ok(ev.iter().map(|&mu| mu.max(0.0).ln_1p()).sum())
}

/// `xᵀ M x`, clamped at zero.
pub fn mahalanobis_sq(x: &DVector<f64>, m: &SpdMatrix) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    Ok(quad_form(m.as_matrix(), x))
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for j in 0..d {
        let mut col = 0.0;
        for i in 0..d {
            col += m[(i, j)] * x[i];
        }
        acc += col * x[j];
    }
    acc.max(0.0)
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        Err(Error::DimensionMismatch { expected, actual })
    } else {
        Ok(())
    }
}

/// Sherman-Morrison: given `V⁻¹`, returns `(V + uuᵀ)⁻¹`.
pub fn rank_one_precision_update(vinv: &SpdMatrix, u: &DVector<f64>) -> Result<SpdMatrix> {
    check_dim(vinv.dim(), u.len())?;
    let mut out = vinv.as_matrix().clone();
    sherman_morrison_in_place(&mut out, u, 1.0);
    Ok(SpdMatrix::from_symmetric(&out))
}

/// In-place `inv ← (inv⁻¹ + w uuᵀ)⁻¹`; returns `uᵀ inv u` evaluated before the update.
fn sherman_morrison_in_place(inv: &mut DMatrix<f64>, u: &DVector<f64>, weight: f64) -> f64 {
    let z = &*inv * u;
    let quad = u.dot(&z).max(0.0);
    let denom = 1.0 + weight * quad;
    inv.ger(-weight / denom, &z, &z, 1.0);
    quad
}

/// `mean + L z` with `cov = L Lᵀ` and `z` standard normal.
pub fn gaussian_sample<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut R) -> Result<DVector<f64>> {
    check_dim(cov.dim(), mean.len())?;
    let l = cov.cholesky_factor()?;
    Ok(sample_with_factor(mean, &l, rng))
}

pub(crate) fn sample_with_factor<R: Rng + ?Sized>(mean: &DVector<f64>, l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let d = mean.len();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = mean.clone();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l[(i, j)] * z[j];
        }
        out[i] += acc;
    }
    out
}

/// Keeps a growing matrix `M ← M + w uuᵀ` together with `M⁻¹`.
///
/// The inverse is updated by Sherman-Morrison in O(d²) and recomputed from `M` every
/// [`REFRESH_INTERVAL`] updates to bound round-off drift.
#[derive(Debug, Clone)]
pub struct InverseTracker {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    since_refresh: usize,
}

impl InverseTracker {
    pub fn new(m: &SpdMatrix) -> Result<Self> {
        Ok(InverseTracker {
            matrix: m.as_matrix().clone(),
            inverse: m.inverse()?.into_matrix(),
            since_refresh: 0,
        })
    }

    /// Starts from a known pair `(M, M⁻¹)`.
    pub fn from_pair(m: &SpdMatrix, inverse: &SpdMatrix) -> Result<Self> {
        check_dim(m.dim(), inverse.dim())?;
        Ok(InverseTracker {
            matrix: m.as_matrix().clone(),
            inverse: inverse.as_matrix().clone(),
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Adds `w uuᵀ`; returns `uᵀ M⁻¹ u` for the matrix before the update.
    pub fn add_rank_one(&mut self, u: &DVector<f64>, weight: f64) -> f64 {
        self.matrix.ger(weight, u, u, 1.0);
        let quad = sherman_morrison_in_place(&mut self.inverse, u, weight);
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
        quad
    }

    /// Recomputes the inverse from the matrix. Keeps the Sherman-Morrison value if the
    /// factorization fails.
    pub fn refresh(&mut self) {
        self.matrix = symmetrize(&self.matrix);
        if let Ok(c) = cholesky(&self.matrix) {
            self.inverse = symmetrize(&c.inverse());
        } else {
            self.inverse = symmetrize(&self.inverse);
        }
        self.since_refresh = 0;
    }

    /// `uᵀ M⁻¹ u`.
    pub fn inverse_quad(&self, u: &DVector<f64>) -> f64 {
        quad_form(&self.inverse, u)
    }

    /// `uᵀ M u`.
    pub fn quad(&self, u: &DVector<f64>) -> f64 {
        quad_form(&self.matrix, u)
    }

    pub fn matrix(&self) -> SpdMatrix {
        SpdMatrix::from_symmetric(&self.matrix)
    }

    pub fn inverse(&self) -> SpdMatrix {
        SpdMatrix::from_symmetric(&self.inverse)
    }

    pub(crate) fn raw_inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }
}

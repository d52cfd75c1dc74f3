//! Small dense complex linear algebra: pseudoinverses, Hermitian square
//! roots, orthogonal projections and kernels.
//!
//! Every routine works on `n x n` matrices where `n` is the channel count
//! (2 to 8 in practice), so clarity wins over blocking or in-place tricks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Default relative threshold for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// Default residual tolerance for linear identities, relative to matrix norms.
pub const TAU_LIN: f64 = 1e-10;
/// Default positivity threshold, relative to the matrix norm.
pub const TAU_POS: f64 = 1e-12;
/// Default Hermiticity threshold, relative to the matrix norm.
pub const TAU_HERM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (relative residual {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositive(f64),
    #[error("vectors span only the zero subspace")]
    InvalidSpan,
    #[error("matrix is not an orthogonal projection (residual {0:.3e})")]
    NotProjection(f64),
    #[error("beta^2 + gamma^2 = {0} exceeds 1/4")]
    OutOfDomain(f64),
    #[error("matrix is numerically singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

/// Build a complex matrix from real row-major entries.
pub fn real_mat(n: usize, rows: &[f64]) -> CMat {
    assert_eq!(rows.len(), n * n, "real_mat needs n*n entries");
    CMat::from_fn(n, n, |i, j| c64(rows[i * n + j], 0.0))
}

/// Build a complex matrix from row-major complex entries.
pub fn cmat(n: usize, rows: &[C64]) -> CMat {
    assert_eq!(rows.len(), n * n, "cmat needs n*n entries");
    CMat::from_fn(n, n, |i, j| rows[i * n + j])
}

pub fn diag(d: &[C64]) -> CMat {
    CMat::from_diagonal(&CVec::from_column_slice(d))
}

/// Largest entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
}

/// Frobenius norm.
pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn check_square(m: &CMat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare(m.nrows(), m.ncols()));
    }
    Ok(())
}

/// Relative distance between `a` and `b` measured in the max-entry norm of `b`
/// (absolute when `b` vanishes).
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    let scale = max_abs(b);
    let d = max_abs(&(a - b));
    if scale > 0.0 {
        d / scale
    } else {
        d
    }
}

/// Singular value decomposition with singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn svd_sorted(m: &CMat) -> Result<SortedSvd> {
    if !is_finite(m) {
        return Err(LinalgError::NonFinite);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let v = vt.adjoint();
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let us = CMat::from_fn(u.nrows(), idx.len(), |i, j| u[(i, idx[j])]);
    let vs = CMat::from_fn(v.nrows(), idx.len(), |i, j| v[(i, idx[j])]);
    Ok(SortedSvd {
        u: us,
        s: idx.iter().map(|&i| s[i]).collect(),
        v: vs,
    })
}

/// Moore-Penrose inverse via the SVD, discarding singular values below
/// `rank_tol * sigma_max`.
pub fn pinv(m: &CMat, rank_tol: f64) -> Result<CMat> {
    let svd = svd_sorted(m)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let mut out = CMat::zeros(m.ncols(), m.nrows());
    if smax == 0.0 {
        return Ok(out);
    }
    for (j, &sj) in svd.s.iter().enumerate() {
        if sj > rank_tol * smax {
            let vj = svd.v.column(j);
            let uj = svd.u.column(j);
            out += (vj * uj.adjoint()) * c64(1.0 / sj, 0.0);
        }
    }
    Ok(out)
}

/// Largest of the four Penrose residuals, each relative to the size of the
/// quantity it is compared against.
pub fn penrose_residual(m: &CMat, p: &CMat) -> f64 {
    let mp = m * p;
    let pm = p * m;
    let r1 = rel_diff(&(&mp * m), m);
    let r2 = rel_diff(&(&pm * p), p);
    let r3 = max_abs(&(&mp - mp.adjoint())) / max_abs(&mp).max(1e-300);
    let r4 = max_abs(&(&pm - pm.adjoint())) / max_abs(&pm).max(1e-300);
    r1.max(r2).max(r3).max(r4)
}

pub fn inverse(m: &CMat) -> Result<CMat> {
    check_square(m)?;
    if !is_finite(m) {
        return Err(LinalgError::NonFinite);
    }
    m.clone().try_inverse().ok_or(LinalgError::Singular)
}

/// 2-norm condition number (infinite for singular matrices).
pub fn cond(m: &CMat) -> f64 {
    match svd_sorted(m) {
        Ok(svd) => {
            let smax = svd.s.first().copied().unwrap_or(0.0);
            let smin = svd.s.last().copied().unwrap_or(0.0);
            if smin == 0.0 {
                f64::INFINITY
            } else {
                smax / smin
            }
        }
        Err(_) => f64::INFINITY,
    }
}

pub fn det(m: &CMat) -> C64 {
    m.clone().determinant()
}

/// Least-squares solution of `a x = b` through the pseudoinverse.
pub fn lstsq(a: &CMat, b: &CMat) -> Result<CMat> {
    Ok(pinv(a, 1e-13)? * b)
}

/// Replace `m` by its Hermitian part.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

pub fn herm_residual(m: &CMat) -> f64 {
    let scale = max_abs(m);
    let d = max_abs(&(m - m.adjoint()));
    if scale > 0.0 {
        d / scale
    } else {
        d
    }
}

/// A matrix that equals its conjugate transpose within tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct HermMatrix(CMat);

impl HermMatrix {
    /// Validate Hermiticity with the default tolerance and store the
    /// symmetrized matrix.
    pub fn new(m: CMat) -> Result<Self> {
        Self::with_tol(m, TAU_HERM)
    }

    pub fn with_tol(m: CMat, tol: f64) -> Result<Self> {
        check_square(&m)?;
        if !is_finite(&m) {
            return Err(LinalgError::NonFinite);
        }
        let r = herm_residual(&m);
        if r > tol {
            return Err(LinalgError::NotHermitian(r));
        }
        Ok(HermMatrix(hermitize(&m)))
    }

    /// Wrap a matrix known to be Hermitian up to rounding (it is symmetrized).
    pub fn from_hermitian_part(m: &CMat) -> Self {
        HermMatrix(hermitize(m))
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Eigenvalues in increasing order with matching orthonormal eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, CMat) {
        herm_eigen(&self.0)
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues increasing.
pub fn herm_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let e = hermitize(m).symmetric_eigen();
    let vals: Vec<f64> = e.eigenvalues.iter().copied().collect();
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    let vecs = CMat::from_fn(m.nrows(), idx.len(), |i, j| e.eigenvectors[(i, idx[j])]);
    (idx.iter().map(|&i| vals[i]).collect(), vecs)
}

/// Positive square root of a positive definite Hermitian matrix and its inverse.
pub fn herm_sqrt_inv(h: &HermMatrix) -> Result<(HermMatrix, HermMatrix)> {
    let (vals, vecs) = h.eigen();
    let scale = max_abs(h.matrix()).max(1e-300);
    let lo = vals.first().copied().unwrap_or(0.0);
    if lo <= TAU_POS * scale {
        return Err(LinalgError::NotPositive(lo));
    }
    let sq: Vec<C64> = vals.iter().map(|&l| c64(l.sqrt(), 0.0)).collect();
    let isq: Vec<C64> = vals.iter().map(|&l| c64(1.0 / l.sqrt(), 0.0)).collect();
    let root = &vecs * diag(&sq) * vecs.adjoint();
    let iroot = &vecs * diag(&isq) * vecs.adjoint();
    Ok((
        HermMatrix::from_hermitian_part(&root),
        HermMatrix::from_hermitian_part(&iroot),
    ))
}

/// An orthogonal projection `P = P^2 = P^dagger` with its rank.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthProjection {
    m: CMat,
    rank: usize,
}

impl OrthProjection {
    /// Validate a candidate projection against the defining identities.
    pub fn new(m: CMat) -> Result<Self> {
        check_square(&m)?;
        if !is_finite(&m) {
            return Err(LinalgError::NonFinite);
        }
        let r = projection_residual(&m);
        if r > 1e-8 {
            return Err(LinalgError::NotProjection(r));
        }
        let tr = m.trace().re;
        Ok(OrthProjection {
            rank: tr.round().max(0.0) as usize,
            m: hermitize(&m),
        })
    }

    /// Projection onto the span of orthonormal columns.
    pub fn from_orthonormal(basis: &CMat) -> Self {
        let m = basis * basis.adjoint();
        OrthProjection {
            rank: basis.ncols(),
            m: hermitize(&m),
        }
    }

    pub fn zero(n: usize) -> Self {
        OrthProjection {
            m: zeros(n),
            rank: 0,
        }
    }

    pub fn identity(n: usize) -> Self {
        OrthProjection { m: eye(n), rank: n }
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn complement(&self) -> Self {
        OrthProjection {
            m: eye(self.dim()) - &self.m,
            rank: self.dim() - self.rank,
        }
    }

    /// Orthonormal basis (n x rank) of the range.
    pub fn basis(&self) -> CMat {
        if self.rank == 0 {
            return CMat::zeros(self.dim(), 0);
        }
        let (_, vecs) = herm_eigen(&self.m);
        let n = self.dim();
        CMat::from_fn(n, self.rank, |i, j| vecs[(i, n - self.rank + j)])
    }

    /// Max residual of the identities P^2 = P and P^dagger = P.
    pub fn residual(&self) -> f64 {
        projection_residual(&self.m)
    }
}

pub fn projection_residual(m: &CMat) -> f64 {
    let r1 = max_abs(&(m * m - m));
    let r2 = max_abs(&(m - m.adjoint()));
    r1.max(r2)
}

/// Projection onto the span of the given vectors.
pub fn projector_from_span(vectors: &[CVec], rank_tol: f64) -> Result<OrthProjection> {
    if vectors.is_empty() {
        return Err(LinalgError::InvalidSpan);
    }
    let n = vectors[0].len();
    if vectors.iter().any(|v| v.len() != n) {
        return Err(LinalgError::Dimension("vectors of unequal length".into()));
    }
    let m = CMat::from_fn(n, vectors.len(), |i, j| vectors[j][i]);
    range_projector(&m, rank_tol)
}

/// Projection onto the column space of `m`.
pub fn range_projector(m: &CMat, rank_tol: f64) -> Result<OrthProjection> {
    let svd = svd_sorted(m)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(LinalgError::InvalidSpan);
    }
    let r = svd.s.iter().filter(|&&s| s > rank_tol * smax).count();
    let basis = CMat::from_fn(m.nrows(), r, |i, j| svd.u[(i, j)]);
    Ok(OrthProjection::from_orthonormal(&basis))
}

/// Kernel projection together with the diagnostics used in multiplicity
/// decisions.
#[derive(Debug, Clone)]
pub struct KernelInfo {
    pub projector: OrthProjection,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    /// Set when a singular value lies within a factor 10 of the threshold.
    pub ambiguous: bool,
}

/// Projection onto the numerical null space, with threshold
/// `rank_tol * sigma_max`.
pub fn kernel_projector(m: &CMat, rank_tol: f64) -> Result<OrthProjection> {
    Ok(kernel_info(m, rank_tol, None)?.projector)
}

/// Kernel projection with an optional absolute reference scale.
///
/// With `scale = Some(s)` the threshold is `rank_tol * s`; this is needed when
/// the whole matrix vanishes at a root (full multiplicity), where a threshold
/// relative to `sigma_max` would be meaningless.
pub fn kernel_info(m: &CMat, rank_tol: f64, scale: Option<f64>) -> Result<KernelInfo> {
    check_square(m)?;
    let svd = svd_sorted(m)?;
    let n = m.ncols();
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let reference = scale.unwrap_or(smax);
    let threshold = rank_tol * reference;
    let ambiguous = svd
        .s
        .iter()
        .any(|&s| s > threshold / 10.0 && s < threshold * 10.0);
    let null: Vec<usize> = (0..n).filter(|&j| svd.s[j] <= threshold).collect();
    let basis = CMat::from_fn(n, null.len(), |i, j| svd.v[(i, null[j])]);
    let projector = if reference == 0.0 {
        OrthProjection::identity(n)
    } else {
        OrthProjection::from_orthonormal(&basis)
    };
    Ok(KernelInfo {
        projector,
        singular_values: svd.s,
        threshold,
        ambiguous,
    })
}

/// The rank-one 2x2 projection
/// `[[1/2 + s r, b + i g], [b - i g, 1/2 - s r]]` with `r = sqrt(1/4 - b^2 - g^2)`
/// and `s` the chosen sign.
pub fn rank_one_proj_2x2(beta: f64, gamma: f64, sign: i32) -> Result<OrthProjection> {
    let rho2 = beta * beta + gamma * gamma;
    if !(beta.is_finite() && gamma.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if rho2 > 0.25 + 1e-15 {
        return Err(LinalgError::OutOfDomain(rho2));
    }
    let r = (0.25 - rho2).max(0.0).sqrt();
    let s = if sign >= 0 { 1.0 } else { -1.0 };
    let m = cmat(
        2,
        &[
            c64(0.5 + s * r, 0.0),
            c64(beta, gamma),
            c64(beta, -gamma),
            c64(0.5 - s * r, 0.0),
        ],
    );
    Ok(OrthProjection { m, rank: 1 })
}

/// Inverse of `w` restricted to the range spanned by the orthonormal columns
/// of `basis`: `U (U^dagger W U)^{-1} U^dagger`.
///
/// This is the Moore-Penrose inverse of `w` whenever the range of `w` is the
/// span of `basis`, and it avoids a rank decision on Gram matrices whose
/// entries shrink exponentially.
pub fn range_inverse(w: &CMat, basis: &CMat) -> Result<CMat> {
    if basis.ncols() == 0 {
        return Ok(CMat::zeros(w.nrows(), w.ncols()));
    }
    let core = basis.adjoint() * w * basis;
    let inv = inverse(&core)?;
    Ok(basis * inv * basis.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn pinv_of_identity() {
        let p = pinv(&eye(3), RANK_TOL).unwrap();
        assert!(close(&p, &eye(3), 1e-14));
    }

    #[test]
    fn pinv_rank_one_diagonal() {
        let w = 0.37;
        let m = diag(&[c64(w, 0.0), c64(0.0, 0.0)]);
        let p = pinv(&m, RANK_TOL).unwrap();
        assert!((p[(0, 0)].re - 1.0 / w).abs() < 1e-14);
        assert!(p[(1, 1)].norm() < 1e-14 && p[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn pinv_rejects_nan() {
        let mut m = eye(2);
        m[(0, 1)] = c64(f64::NAN, 0.0);
        assert_eq!(pinv(&m, RANK_TOL), Err(LinalgError::NonFinite));
    }

    #[test]
    fn sqrt_of_diagonal() {
        let h = HermMatrix::new(real_mat(2, &[4.0, 0.0, 0.0, 9.0])).unwrap();
        let (r, ir) = herm_sqrt_inv(&h).unwrap();
        assert!(close(r.matrix(), &real_mat(2, &[2.0, 0.0, 0.0, 3.0]), 1e-14));
        assert!(close(ir.matrix(), &real_mat(2, &[0.5, 0.0, 0.0, 1.0 / 3.0]), 1e-14));
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let h = HermMatrix::new(real_mat(2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert!(matches!(herm_sqrt_inv(&h), Err(LinalgError::NotPositive(_))));
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = real_mat(2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(HermMatrix::new(m), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn span_of_axis() {
        let e1 = CVec::from_column_slice(&[c64(1.0, 0.0), c64(0.0, 0.0)]);
        let p = projector_from_span(&[e1], RANK_TOL).unwrap();
        assert_eq!(p.rank(), 1);
        assert!(close(p.matrix(), &real_mat(2, &[1.0, 0.0, 0.0, 0.0]), 1e-14));
    }

    #[test]
    fn span_of_zero_vector_fails() {
        let z = CVec::zeros(2);
        assert_eq!(projector_from_span(&[z], RANK_TOL), Err(LinalgError::InvalidSpan));
    }

    #[test]
    fn kernel_of_invertible_is_zero() {
        let k = kernel_projector(&real_mat(2, &[2.0, 1.0, 1.0, 3.0]), RANK_TOL).unwrap();
        assert_eq!(k.rank(), 0);
        assert!(max_abs(k.matrix()) == 0.0);
    }

    #[test]
    fn rank_one_corner_cases() {
        let p = rank_one_proj_2x2(0.0, 0.0, 1).unwrap();
        assert!(close(p.matrix(), &real_mat(2, &[1.0, 0.0, 0.0, 0.0]), 1e-15));
        let p = rank_one_proj_2x2(0.0, 0.0, -1).unwrap();
        assert!(close(p.matrix(), &real_mat(2, &[0.0, 0.0, 0.0, 1.0]), 1e-15));
        assert!(matches!(
            rank_one_proj_2x2(0.4, 0.4, 1),
            Err(LinalgError::OutOfDomain(_))
        ));
    }

    #[test]
    fn range_inverse_matches_pinv() {
        let v = CVec::from_column_slice(&[c64(0.6, 0.0), c64(0.0, 0.8)]);
        let w = (&v * v.adjoint()) * c64(3.5, 0.0);
        let basis = CMat::from_column_slice(2, 1, v.as_slice());
        let a = range_inverse(&w, &basis).unwrap();
        let b = pinv(&w, RANK_TOL).unwrap();
        assert!(close(&a, &b, 1e-14));
    }
}

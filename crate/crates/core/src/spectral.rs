//! Jost and scattering matrices, bound states and their normalization data,
//! and the spectral measure.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::io::{cmatrix_to_json, complex_to_json};
use crate::linalg::{self, c64, eye, max_abs, CMat, HermMatrix, LinalgError, OrthProjection, C64};
use crate::ode::OdeOptions;
use crate::problem::{MomentClass, ProblemSpec};
use crate::quad::{self, QuadError};
use crate::wave::{self, JostSlice, WaveError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("J(k) is singular at the real point k = {0}")]
    ExceptionalPoint(f64),
    #[error("root polishing did not converge in [{lo}, {hi}]")]
    UnresolvedRoot { lo: f64, hi: f64 },
    #[error("inconsistent bound state at kappa = {kappa}: {msg}")]
    InconsistentBoundState { kappa: f64, msg: String },
    #[error("dependency matrix unresolved at kappa = {0}: f and f' singular at all probe points")]
    DependencyUnresolved(f64),
    #[error("potential class {0} is too weak for this operation (needs L1_1)")]
    ClassTooWeak(String),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// `J = f(-k*,0)^dagger B - f'(-k*,0)^dagger A` from a Jost slice at `-k*`.
pub fn jost_from_slice(spec: &ProblemSpec, f_conj: &JostSlice) -> CMat {
    let (f0, fp0) = f_conj.value_deriv(0.0);
    f0.adjoint() * spec.b() - fp0.adjoint() * spec.a()
}

/// Jost matrix at `k` in the closed upper half plane.
pub fn jost_matrix(spec: &ProblemSpec, k: C64) -> Result<CMat> {
    let slice = wave::solve_jost(spec, -k.conj())?;
    Ok(jost_from_slice(spec, &slice))
}

/// `S(k) = -J(-k) J(k)^{-1}` from Jost slices at `k` and `-k` (real `k`).
pub fn scattering_from_slices(spec: &ProblemSpec, f_plus: &JostSlice, f_minus: &JostSlice) -> Result<CMat> {
    // For real k, -k* = -k: J(k) uses f(-k) and J(-k) uses f(k).
    let jk = jost_from_slice(spec, f_minus);
    let jmk = jost_from_slice(spec, f_plus);
    let inv = linalg::inverse(&jk).map_err(|_| SpectralError::ExceptionalPoint(f_plus.k.re))?;
    if linalg::cond(&jk) > 1e12 {
        return Err(SpectralError::ExceptionalPoint(f_plus.k.re));
    }
    Ok(-jmk * inv)
}

/// Scattering matrix for real nonzero `k`.
pub fn scattering_matrix(spec: &ProblemSpec, k: f64) -> Result<CMat> {
    if k == 0.0 {
        return Err(SpectralError::ExceptionalPoint(0.0));
    }
    let fp = wave::solve_jost(spec, c64(k, 0.0))?;
    let fm = wave::solve_jost(spec, c64(-k, 0.0))?;
    scattering_from_slices(spec, &fp, &fm)
}

/// `(J(i kappa), s)` where `s = |f(0)||B| + |f'(0)||A|` is the absolute scale
/// used for rank decisions.
pub fn jost_on_axis(spec: &ProblemSpec, kappa: f64) -> Result<(CMat, f64)> {
    let slice = wave::solve_jost(spec, c64(0.0, kappa))?;
    let (f0, fp0) = slice.value_deriv(0.0);
    let j = f0.adjoint() * spec.b() - fp0.adjoint() * spec.a();
    let scale = max_abs(&f0) * max_abs(spec.b()) + max_abs(&fp0) * max_abs(spec.a());
    Ok((j, scale))
}

/// Located zero of `det J(i kappa)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RootInfo {
    pub kappa: f64,
    pub multiplicity: usize,
    /// `sigma_min(J) / s` at the polished root.
    pub residual: f64,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ScanReport {
    pub roots: Vec<RootInfo>,
    /// Largest `|Im det| / |det|` after removing a constant phase.
    pub imag_ratio: f64,
    pub warnings: Vec<String>,
}

struct Sample {
    kappa: f64,
    det: C64,
    smin: f64,
}

fn sample(spec: &ProblemSpec, kappa: f64) -> Result<Sample> {
    let (j, scale) = jost_on_axis(spec, kappa)?;
    let svd = linalg::svd_sorted(&j)?;
    let smin = svd.s.last().copied().unwrap_or(0.0) / scale.max(1e-300);
    Ok(Sample {
        kappa,
        det: linalg::det(&j),
        smin,
    })
}

/// Zeros of `det J(i kappa)` in `[kappa_min, kappa_max]` with their
/// multiplicities (the nullity of `J(i kappa)`), sorted by decreasing kappa.
pub fn find_bound_states(spec: &ProblemSpec, kappa_min: f64, kappa_max: f64) -> Result<ScanReport> {
    let class = spec.potential.class();
    if !class.at_least(MomentClass::L1_1) {
        // Finiteness of the bound-state set is not guaranteed; scan anyway
        // but say so.
    }
    let st = &spec.settings;
    let npts = st.scan_points.max(3);
    let ratio = (kappa_max / kappa_min).ln();
    let grid: Vec<f64> = (0..npts)
        .map(|i| kappa_min * (ratio * i as f64 / (npts - 1) as f64).exp())
        .collect();
    let samples: Vec<Sample> = grid
        .par_iter()
        .map(|&k| sample(spec, k))
        .collect::<Result<Vec<_>>>()?;

    // Remove a constant phase so that a real-up-to-phase determinant becomes real.
    let big = samples
        .iter()
        .max_by(|a, b| a.det.norm().partial_cmp(&b.det.norm()).unwrap())
        .map(|s| s.det)
        .unwrap_or(C64::new(1.0, 0.0));
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { C64::new(1.0, 0.0) };
    let mut imag_ratio: f64 = 0.0;
    for s in &samples {
        let d = s.det * phase;
        if s.det.norm() > 0.0 {
            imag_ratio = imag_ratio.max(d.im.abs() / d.norm());
        }
    }
    let mut report = ScanReport {
        imag_ratio,
        ..Default::default()
    };
    if imag_ratio > 1e-8 {
        report.warnings.push(format!(
            "det J(i kappa) is not real up to a constant phase (max |Im|/|det| = {imag_ratio:.2e}); sign-change bracketing may miss roots"
        ));
    }
    if !class.at_least(MomentClass::L1_1) {
        report.warnings.push(format!(
            "potential class {} is below L1_1; the bound-state set is not guaranteed finite",
            class.label()
        ));
    }
    let re = |s: &Sample| (s.det * phase).re;
    let det_re = |k: f64| -> Result<f64> {
        let (j, _) = jost_on_axis(spec, k)?;
        Ok((linalg::det(&j) * phase).re)
    };
    let smin_at = |k: f64| -> Result<f64> { Ok(sample(spec, k)?.smin) };

    let mut found: Vec<f64> = Vec::new();
    let mut bracketed = vec![false; samples.len()];
    for i in 0..samples.len() - 1 {
        let (a, b) = (re(&samples[i]), re(&samples[i + 1]));
        if a == 0.0 {
            found.push(samples[i].kappa);
            bracketed[i] = true;
            continue;
        }
        if a * b < 0.0 {
            let root = polish_sign_change(&det_re, samples[i].kappa, samples[i + 1].kappa, a, b, st.root_tol)?;
            found.push(root);
            bracketed[i] = true;
            bracketed[i + 1] = true;
        }
    }
    // Even-order zeros show up as local minima of the smallest singular value.
    for i in 1..samples.len() - 1 {
        if bracketed[i] || bracketed[i - 1] {
            continue;
        }
        let (l, c, r) = (samples[i - 1].smin, samples[i].smin, samples[i + 1].smin);
        if c < l && c <= r && c < 1e-2 {
            let (k, v) = golden_min(&smin_at, samples[i - 1].kappa, samples[i + 1].kappa, st.root_tol)?;
            if v < st.rank_tol * 10.0 {
                found.push(k);
            }
        }
    }
    found.sort_by(|a, b| b.partial_cmp(a).unwrap());
    found.dedup_by(|a, b| (*a - *b).abs() < 1e-8 * b.abs().max(1.0));
    for k in found {
        let (j, scale) = jost_on_axis(spec, k)?;
        let info = linalg::kernel_info(&j, st.rank_tol, Some(scale))?;
        let mut m = info.projector.rank();
        if m == 0 {
            m = 1;
            report.warnings.push(format!(
                "root at kappa = {k} has numerical nullity 0 at rank_tol; using multiplicity 1"
            ));
        }
        if info.ambiguous {
            report
                .warnings
                .push(format!("rank decision at kappa = {k} is close to the threshold"));
        }
        report.roots.push(RootInfo {
            kappa: k,
            multiplicity: m,
            residual: info.singular_values.last().copied().unwrap_or(0.0) / scale.max(1e-300),
            ambiguous: info.ambiguous,
        });
    }
    Ok(report)
}

fn polish_sign_change<F>(f: &F, mut lo: f64, mut hi: f64, mut flo: f64, mut fhi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let (l0, h0) = (lo, hi);
    for _ in 0..200 {
        if hi - lo <= tol * hi.max(1.0) * 1e-3 {
            break;
        }
        // Secant proposal, safeguarded by bisection.
        let mut mid = hi - fhi * (hi - lo) / (fhi - flo);
        let width = hi - lo;
        if !(mid > lo + 0.05 * width && mid < hi - 0.05 * width) {
            mid = 0.5 * (lo + hi);
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm * flo < 0.0 {
            hi = mid;
            fhi = fm;
        } else {
            lo = mid;
            flo = fm;
        }
        if hi - lo > 0.9 * width {
            // Secant stagnating on one side: force a bisection step.
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm * flo < 0.0 {
                hi = mid;
                fhi = fm;
            } else {
                lo = mid;
                flo = fm;
            }
        }
    }
    if hi - lo > tol * hi.max(1.0) {
        return Err(SpectralError::UnresolvedRoot { lo: l0, hi: h0 });
    }
    Ok(if flo.abs() < fhi.abs() { lo } else { hi })
}

fn golden_min<F>(f: &F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a) <= tol * b.max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Normalization and dependency data for one bound state.
#[derive(Clone)]
pub struct BoundState {
    pub kappa: f64,
    pub multiplicity: usize,
    pub q: OrthProjection,
    pub p: OrthProjection,
    /// Marchenko pieces.
    pub a_mat: CMat,
    pub b_mat: CMat,
    pub m: CMat,
    /// Gel'fand-Levitan pieces.
    pub g_mat: CMat,
    pub h_mat: CMat,
    pub c: CMat,
    pub d: CMat,
    /// Coefficients with `phi(i kappa, x) Q = f(i kappa, x) K`.
    pub k_mat: CMat,
    /// `J(i kappa)`.
    pub jost: CMat,
    pub jost_slice: Arc<JostSlice>,
}

impl std::fmt::Debug for BoundState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundState")
            .field("kappa", &self.kappa)
            .field("multiplicity", &self.multiplicity)
            .finish()
    }
}

impl BoundState {
    /// `Psi_j(x) = f(i kappa, x) M`.
    pub fn psi(&self, x: f64) -> CMat {
        self.jost_slice.value(x) * &self.m
    }

    /// `Phi_j(x) = phi(i kappa, x) C = f(i kappa, x) K C`.
    pub fn phi(&self, x: f64) -> CMat {
        self.jost_slice.value(x) * &self.k_mat * &self.c
    }

    pub fn phi_deriv(&self, x: f64) -> CMat {
        self.jost_slice.deriv(x) * &self.k_mat * &self.c
    }

    /// Eigenvalues of `M` and `C` (increasing).
    pub fn m_eigenvalues(&self) -> Vec<f64> {
        linalg::herm_eigen(&self.m).0
    }

    pub fn c_eigenvalues(&self) -> Vec<f64> {
        linalg::herm_eigen(&self.c).0
    }

    pub fn to_json(&self) -> Value {
        json!({
            "kappa": self.kappa,
            "multiplicity": self.multiplicity,
            "Q": cmatrix_to_json(self.q.matrix()),
            "P": cmatrix_to_json(self.p.matrix()),
            "A": cmatrix_to_json(&self.a_mat),
            "B": cmatrix_to_json(&self.b_mat),
            "M": cmatrix_to_json(&self.m),
            "G": cmatrix_to_json(&self.g_mat),
            "H": cmatrix_to_json(&self.h_mat),
            "C": cmatrix_to_json(&self.c),
            "D": cmatrix_to_json(&self.d),
            "M_eigenvalues": self.m_eigenvalues(),
            "C_eigenvalues": self.c_eigenvalues(),
        })
    }
}

/// Projections onto `Ker J(i kappa)` and `Ker J(i kappa)^dagger`, with the
/// nullity threshold measured against the absolute scale of [`jost_on_axis`].
pub fn bound_state_projections(spec: &ProblemSpec, kappa: f64, multiplicity: Option<usize>) -> Result<(CMat, OrthProjection, OrthProjection)> {
    let (j, scale) = jost_on_axis(spec, kappa)?;
    let rank_tol = spec.settings.rank_tol;
    let pick = |m: &CMat| -> Result<OrthProjection> {
        let info = linalg::kernel_info(m, rank_tol, Some(scale))?;
        match multiplicity {
            Some(want) if info.projector.rank() != want => {
                // Take the `want` smallest singular directions.
                let svd = linalg::svd_sorted(m)?;
                let n = m.ncols();
                let basis = CMat::from_fn(n, want, |i, c| svd.v[(i, n - want + c)]);
                Ok(OrthProjection::from_orthonormal(&basis))
            }
            _ => Ok(info.projector),
        }
    };
    let q = pick(&j)?;
    let p = pick(&j.adjoint())?;
    Ok((j, q, p))
}

/// Coefficients `K` with `phi(i kappa, x) Q = f(i kappa, x) K`, from the
/// stacked boundary data at `x = 0`; also returns the relative residual.
pub fn decaying_coefficients(spec: &ProblemSpec, slice: &JostSlice, q: &CMat) -> Result<(CMat, f64)> {
    let n = spec.n;
    let (f0, fp0) = slice.value_deriv(0.0);
    let mut lhs = CMat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&f0);
    lhs.view_mut((n, 0), (n, n)).copy_from(&fp0);
    let mut rhs = CMat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(spec.a() * q));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(spec.b() * q));
    let k = linalg::lstsq(&lhs, &rhs)?;
    let res = max_abs(&(&lhs * &k - &rhs)) / max_abs(&rhs).max(1e-300);
    Ok((k, res))
}

/// Marchenko data: `(A_j, B_j, M_j)` from `F(0) = int_0^inf f^dagger f`.
pub fn marchenko_data(kappa: f64, f_gram0: &CMat, p: &OrthProjection, tau_pos: f64) -> Result<(CMat, CMat, CMat)> {
    let pm = p.matrix();
    let a = linalg::hermitize(&(pm * f_gram0 * pm));
    let b = linalg::hermitize(&(eye(pm.nrows()) - pm + &a));
    let (_, b_inv_half) = linalg::herm_sqrt_inv(&HermMatrix::from_hermitian_part(&b)).map_err(|e| {
        SpectralError::InconsistentBoundState {
            kappa,
            msg: format!("B_j is not positive ({e})"),
        }
    })?;
    let _ = tau_pos;
    let m = b_inv_half.matrix() * pm;
    Ok((a, b, m))
}

/// Gel'fand-Levitan data `(G, H, C)` for projection `q` and Gram `G`.
pub fn gl_normalization(kappa: f64, g: &CMat, q: &CMat) -> Result<(CMat, CMat)> {
    let h = linalg::hermitize(&(eye(q.nrows()) - q + g));
    let (_, h_inv_half) = linalg::herm_sqrt_inv(&HermMatrix::from_hermitian_part(&h)).map_err(|e| {
        SpectralError::InconsistentBoundState {
            kappa,
            msg: format!("H_j is not positive ({e})"),
        }
    })?;
    let c = h_inv_half.matrix() * q;
    Ok((h, c))
}

/// Gel'fand-Levitan data `(G, H, C, K)` at a bound state.
pub fn gl_data(spec: &ProblemSpec, slice: &JostSlice, kappa: f64, q: &OrthProjection) -> Result<(CMat, CMat, CMat, CMat)> {
    let (k, res) = decaying_coefficients(spec, slice, q.matrix())?;
    if res > 1e-6 {
        return Err(SpectralError::InconsistentBoundState {
            kappa,
            msg: format!("phi(i kappa, x) Q is not a decaying solution (residual {res:.2e})"),
        });
    }
    let f0 = slice.gram_scaled(0.0).expect("slice carries its Gram integral");
    let g = linalg::hermitize(&(k.adjoint() * f0 * &k));
    let (h, c) = gl_normalization(kappa, &g, q.matrix())?;
    Ok((g, h, c, k))
}

/// Dependency matrix `D = M^+ f(i kappa, x)^{-1} Phi(x)`, evaluated at `x = 0`
/// when `f(i kappa, 0)` is well conditioned, else at `x = 1`, else from the
/// derivative form `D = M^+ f'(i kappa, 0)^{-1} Phi'(0)`.
pub fn dependency_matrix(spec: &ProblemSpec, slice: &JostSlice, m: &CMat, c: &CMat, rank_tol: f64) -> Result<CMat> {
    let kappa = slice.k.im;
    let m_plus = linalg::pinv(m, rank_tol)?;
    let f0 = slice.value(0.0);
    if linalg::cond(&f0) < 1e8 {
        let phi0 = spec.a() * c;
        return Ok(&m_plus * linalg::inverse(&f0)? * phi0);
    }
    let f1 = slice.value(1.0);
    if linalg::cond(&f1) < 1e8 {
        let phi1 = dependency_phi(spec, kappa, 1.0)? * c;
        return Ok(&m_plus * linalg::inverse(&f1)? * phi1);
    }
    let fp0 = slice.deriv(0.0);
    if linalg::cond(&fp0) < 1e8 {
        let dphi0 = spec.b() * c;
        return Ok(&m_plus * linalg::inverse(&fp0)? * dphi0);
    }
    Err(SpectralError::DependencyUnresolved(kappa))
}

/// `phi(i kappa, x)` by forward integration at tight tolerance.
fn dependency_phi(spec: &ProblemSpec, kappa: f64, x: f64) -> Result<CMat> {
    let opts = OdeOptions {
        rtol: 1e-13,
        atol: 1e-15,
        ..Default::default()
    };
    Ok(wave::solve_regular_opts(spec, c64(0.0, kappa), x, false, &opts)?.value(x))
}

/// `D` evaluated at an arbitrary probe point `x > 0` (for the x-independence check).
pub fn dependency_matrix_at(spec: &ProblemSpec, state: &BoundState, x: f64) -> Result<CMat> {
    let m_plus = linalg::pinv(&state.m, spec.settings.rank_tol)?;
    let fx = state.jost_slice.value(x);
    let phi = dependency_phi(spec, state.kappa, x)? * &state.c;
    Ok(m_plus * linalg::inverse(&fx)? * phi)
}

/// Full data for a bound state at `kappa` of the given multiplicity.
pub fn bound_state_data(spec: &ProblemSpec, kappa: f64, multiplicity: usize) -> Result<BoundState> {
    let (jost, q, p) = bound_state_projections(spec, kappa, Some(multiplicity))?;
    let slice = wave::solve_jost_with_gram(spec, c64(0.0, kappa), 0.0)?;
    let f_gram0 = slice.gram_scaled(0.0).expect("gram requested");
    let (a_mat, b_mat, m) = marchenko_data(kappa, &f_gram0, &p, spec.settings.tau_pos)?;
    let (g_mat, h_mat, c, k_mat) = gl_data(spec, &slice, kappa, &q)?;
    let d = dependency_matrix(spec, &slice, &m, &c, spec.settings.rank_tol)?;
    Ok(BoundState {
        kappa,
        multiplicity,
        q,
        p,
        a_mat,
        b_mat,
        m,
        g_mat,
        h_mat,
        c,
        d,
        k_mat,
        jost,
        jost_slice: Arc::new(slice),
    })
}

/// Bound states, continuous-spectrum accessors and diagnostics.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub spec: ProblemSpec,
    /// Sorted by decreasing kappa.
    pub states: Vec<BoundState>,
    pub scan: ScanReport,
    /// `J(0)` when the class permits evaluation at zero.
    pub j0: Option<CMat>,
    pub warnings: Vec<String>,
}

impl SpectrumReport {
    pub fn count(&self) -> usize {
        self.states.len()
    }

    /// Total number of bound states counting multiplicity.
    pub fn total(&self) -> usize {
        self.states.iter().map(|s| s.multiplicity).sum()
    }

    /// `J(0)` invertible (the generic case).
    pub fn generic(&self) -> Option<bool> {
        self.j0.as_ref().map(|j| linalg::cond(j) < 1e10)
    }

    pub fn jost_at(&self, k: C64) -> Result<CMat> {
        jost_matrix(&self.spec, k)
    }

    pub fn smatrix_at(&self, k: f64) -> Result<CMat> {
        scattering_matrix(&self.spec, k)
    }

    /// Continuous density `(sqrt(l)/pi) (J^dagger J)^{-1}` at `l > 0`.
    pub fn rho_density_at(&self, lambda: f64) -> Result<CMat> {
        let k = lambda.sqrt();
        let j = jost_matrix(&self.spec, c64(k, 0.0))?;
        let inv = linalg::inverse(&(j.adjoint() * j)).map_err(|_| SpectralError::ExceptionalPoint(k))?;
        Ok(linalg::hermitize(&inv) * c64(k / std::f64::consts::PI, 0.0))
    }

    /// Discrete atoms `(-kappa^2, C^2)`.
    pub fn rho_atoms(&self) -> Vec<(f64, CMat)> {
        self.states
            .iter()
            .map(|s| (-s.kappa * s.kappa, &s.c * &s.c))
            .collect()
    }

    pub fn state_near(&self, kappa: f64, tol: f64) -> Option<&BoundState> {
        self.states
            .iter()
            .find(|s| (s.kappa - kappa).abs() <= tol * kappa.max(1.0))
    }

    /// JSON report with `S(k)` and density samples on `k_grid`.
    pub fn to_json(&self, k_grid: &[f64]) -> Value {
        let samples: Vec<Value> = k_grid
            .par_iter()
            .filter(|k| **k != 0.0)
            .map(|&k| {
                let s = self.smatrix_at(k).ok();
                let rho = if k > 0.0 { self.rho_density_at(k * k).ok() } else { None };
                json!({
                    "k": k,
                    "S": s.as_ref().map(cmatrix_to_json),
                    "det_S": s.as_ref().map(|m| complex_to_json(linalg::det(m))),
                    "rho_density": rho.as_ref().map(cmatrix_to_json),
                })
            })
            .collect();
        json!({
            "n": self.spec.n,
            "potential": self.spec.potential.describe(),
            "moment_class": self.spec.potential.class().label(),
            "bound_states": self.states.iter().map(|s| s.to_json()).collect::<Vec<_>>(),
            "count": self.count(),
            "total_multiplicity": self.total(),
            "generic": self.generic(),
            "J0": self.j0.as_ref().map(cmatrix_to_json),
            "scan": {
                "imag_ratio": self.scan.imag_ratio,
                "roots": self.scan.roots.iter().map(|r| json!({"kappa": r.kappa, "multiplicity": r.multiplicity, "residual": r.residual, "ambiguous": r.ambiguous})).collect::<Vec<_>>(),
            },
            "samples": samples,
            "warnings": self.warnings,
        })
    }

    /// CSV with `k`, `S(k)` entries and density entries at `lambda = k^2`.
    pub fn to_csv(&self, k_grid: &[f64]) -> String {
        let n = self.spec.n;
        let mut header = vec!["k".to_string()];
        header.extend(crate::io::matrix_columns("S", n));
        header.extend(crate::io::matrix_columns("rho", n));
        let rows: Vec<Vec<f64>> = k_grid
            .iter()
            .filter(|k| **k > 0.0)
            .filter_map(|&k| {
                let s = self.smatrix_at(k).ok()?;
                let r = self.rho_density_at(k * k).ok()?;
                let mut row = vec![k];
                row.extend(crate::io::matrix_row(&s));
                row.extend(crate::io::matrix_row(&r));
                Some(row)
            })
            .collect();
        crate::io::csv_table(&header, &rows)
    }
}

/// Scan for bound states and compute all of their data.
pub fn assemble_spectrum(spec: &ProblemSpec) -> Result<SpectrumReport> {
    let class = spec.potential.class();
    if !class.at_least(MomentClass::L1_1) && !matches!(class, MomentClass::L1) {
        return Err(SpectralError::ClassTooWeak(class.label()));
    }
    let scan = find_bound_states(spec, spec.settings.kappa_min, spec.settings.kappa_max)?;
    let states: Vec<BoundState> = scan
        .roots
        .par_iter()
        .map(|r| bound_state_data(spec, r.kappa, r.multiplicity))
        .collect::<Result<Vec<_>>>()?;
    let j0 = if class.at_least(MomentClass::L1_1) {
        jost_matrix(spec, c64(0.0, 0.0)).ok()
    } else {
        None
    };
    let mut warnings = scan.warnings.clone();
    if !class.at_least(MomentClass::L1_1) {
        warnings.push("J(0) not evaluated: potential class below L1_1".into());
    }
    Ok(SpectrumReport {
        spec: spec.clone(),
        states,
        scan,
        j0,
        warnings,
    })
}

/// `int_0^inf a(x)^dagger b(x) dx` for bound-state solutions decaying like
/// `exp(-rate x)`: adaptive quadrature on `[0, X]` with `X = 40/rate`
/// plus an analytic tail assuming pure exponential decay.
pub fn overlap_integral<Fa, Fb>(a: Fa, b: Fb, rate: f64, extent: f64) -> Result<CMat>
where
    Fa: Fn(f64) -> CMat + Sync,
    Fb: Fn(f64) -> CMat + Sync,
{
    let x_end = 40.0 / rate + extent;
    let n = a(0.0).ncols();
    let opts = quad::QuadOptions {
        rtol: 1e-10,
        atol: 1e-300,
        max_intervals: 8000,
    };
    // Split on unit-ish panels so the adaptive rule sees the fast initial decay.
    let mut total = CMat::zeros(n, n);
    let mut lo = 0.0;
    let mut width = 0.5 / rate.max(1e-3);
    while lo < x_end {
        let hi = (lo + width).min(x_end);
        total += quad::integrate_matrix(|x| a(x).adjoint() * b(x), lo, hi, n, n, opts)?;
        lo = hi;
        width *= 1.5;
    }
    let tail = a(x_end).adjoint() * b(x_end) * c64(1.0 / rate, 0.0);
    Ok(total + tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_mat;
    use crate::problem::{validate_boundary, zero_potential};

    #[test]
    fn free_robin_jost() {
        let kap = 0.8;
        let spec = ProblemSpec::new(zero_potential(1), validate_boundary(real_mat(1, &[1.0]), real_mat(1, &[kap])).unwrap()).unwrap();
        let k = c64(0.3, 0.4);
        let j = jost_matrix(&spec, k).unwrap();
        let expected = -C64::i() * (k + C64::i() * kap);
        assert!((j[(0, 0)] - expected).norm() < 1e-12);
        let scan = find_bound_states(&spec, 1e-3, 50.0).unwrap();
        assert!(scan.roots.is_empty());
    }

    #[test]
    fn free_dirichlet_is_minus_identity() {
        let spec = ProblemSpec::new(zero_potential(2), validate_boundary(CMat::zeros(2, 2), eye(2)).unwrap()).unwrap();
        let s = scattering_matrix(&spec, 1.7).unwrap();
        assert!(max_abs(&(s + eye(2))) < 1e-12);
    }
}

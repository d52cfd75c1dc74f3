//! Matrix wave solutions: the Jost solution `f`, the regular solution `phi`,
//! the growing solution `g` and the physical solution `Psi`.
//!
//! All solutions are integrated in scaled variables so that exponentially
//! growing or decaying factors never appear in the ODE state:
//!
//! * Jost: `m = e^{-ikx} f`, `m'' = V m - 2ik m'`, integrated backward.
//! * growing: `m = e^{ikx} g`, `m'' = V m + 2ik m'`, integrated backward.
//! * regular: `psi = e^{-s x} phi` with `s = |Im k|`,
//!   `psi'' = (V - k^2 - s^2) psi - 2 s psi'`, integrated forward.
//!
//! Optionally the state is augmented with a scaled Gram integral (see
//! [`JostSlice::gram_scaled`] and [`RegularSlice::gram_scaled`]).

use crate::linalg::{c64, eye, max_abs, CMat, C64};
use crate::ode::{self, DenseOutput, OdeError};
use crate::problem::{MomentClass, Potential, ProblemSpec};
use crate::quad;
use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum WaveKind {
    JostF,
    RegularPhi,
    GrowingG,
    PhysicalPsi,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WaveError {
    #[error("{kind:?} solver diverged at k = {k}: {source}")]
    SolverDiverged {
        kind: WaveKind,
        k: C64,
        #[source]
        source: OdeError,
    },
    #[error("k = 0 is not supported for a potential of class {0} (needs L1_1 or better)")]
    UnsupportedAtZero(String),
    #[error("k = {0} is outside the domain of this solution")]
    Domain(C64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, WaveError>;

/// How the asymptotic initial data at `x_inf` was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum StartKind {
    /// Plane wave `e^{+-ikx} I`, justified by the tail criterion.
    PlaneWave,
    /// Plane wave at the cap, although the tail criterion was not met.
    PlaneWaveCapped,
    /// Exact Jost data supplied by the potential.
    Oracle,
}

/// Starting point for backward integration and the rule that produced it.
#[derive(Debug, Clone, Copy)]
pub struct StartPoint {
    pub x: f64,
    pub kind: StartKind,
}

/// Upper limit on `x_inf` for a given `k`.
pub fn x_cap(k: C64) -> f64 {
    200.0 / (k.im.abs() + 0.1).min(1.0)
}

/// Choose where to start backward integration for the Jost or growing
/// solution at `k`. `oracle_k` is the argument at which the potential's
/// exact Jost solution would be evaluated.
pub fn start_point(v: &Potential, k: C64, oracle_k: C64, settings: &Settings) -> StartPoint {
    let x_tail = v.tail().cutoff(settings.tail_tol);
    let cap = x_cap(k);
    if x_tail <= cap {
        return StartPoint {
            x: x_tail,
            kind: StartKind::PlaneWave,
        };
    }
    let x0 = settings.oracle_start;
    if v.jost_oracle(oracle_k, x0).is_some() {
        StartPoint {
            x: x0,
            kind: StartKind::Oracle,
        }
    } else {
        StartPoint {
            x: cap,
            kind: StartKind::PlaneWaveCapped,
        }
    }
}

fn mat(n: usize, s: &[C64]) -> CMat {
    CMat::from_column_slice(n, n, s)
}

fn check_zero(v: &Potential, k: C64) -> Result<()> {
    if k.norm() == 0.0 && !v.class().at_least(MomentClass::L1_1) {
        return Err(WaveError::UnsupportedAtZero(v.class().label()));
    }
    Ok(())
}

/// Jost solution at a fixed `k`, backed by a dense interpolant on `[0, x_inf]`.
#[derive(Clone)]
pub struct JostSlice {
    pub k: C64,
    pub n: usize,
    pub start: StartPoint,
    potential: Potential,
    dense: DenseOutput,
    gram: bool,
    /// Growing-solution flavour (`g`) instead of `f`.
    growing: bool,
}

impl JostSlice {
    fn sign(&self) -> f64 {
        if self.growing {
            -1.0
        } else {
            1.0
        }
    }

    /// Scaled pair `(m, m')`; `f = e^{ikx} m` (or `g = e^{-ikx} m`).
    pub fn scaled(&self, x: f64) -> (CMat, CMat) {
        let n = self.n;
        if x <= self.start.x || self.start.x == 0.0 && x <= 0.0 {
            let y = self.dense.eval(x.max(0.0));
            return (mat(n, &y[..n * n]), mat(n, &y[n * n..2 * n * n]));
        }
        // Beyond the starting point: exact data if available, else plane wave.
        let kk = if self.growing { -self.k } else { self.k };
        let s = self.sign();
        if let Some((f, fp)) = self.potential.jost_oracle(kk, x) {
            let e = (-C64::i() * s * self.k * x).exp();
            let m = f * e;
            let mp = fp * e - &m * (C64::i() * s * self.k);
            return (m, mp);
        }
        (eye(n), CMat::zeros(n, n))
    }

    pub fn value(&self, x: f64) -> CMat {
        let (m, _) = self.scaled(x);
        m * (C64::i() * self.sign() * self.k * x).exp()
    }

    pub fn deriv(&self, x: f64) -> CMat {
        let (m, mp) = self.scaled(x);
        let iks = C64::i() * self.sign() * self.k;
        (m * iks + mp) * (iks * x).exp()
    }

    pub fn value_deriv(&self, x: f64) -> (CMat, CMat) {
        let (m, mp) = self.scaled(x);
        let iks = C64::i() * self.sign() * self.k;
        let e = (iks * x).exp();
        (&m * e, (m * iks + mp) * e)
    }

    pub fn x_inf(&self) -> f64 {
        self.start.x
    }

    pub fn steps(&self) -> usize {
        self.dense.steps()
    }

    /// `e^{2 s x} int_x^inf f^dagger f` with `s = Im k > 0`.
    ///
    /// Beyond the integration range the tail integral is evaluated directly
    /// from the exact Jost solution when there is one, otherwise from the
    /// plane-wave asymptotics.
    pub fn gram_scaled(&self, x: f64) -> Option<CMat> {
        if !self.gram {
            return None;
        }
        let n = self.n;
        if x <= self.start.x {
            let y = self.dense.eval(x.max(0.0));
            return Some(mat(n, &y[2 * n * n..3 * n * n]));
        }
        Some(gram_tail(&self.potential, self.k, x, n))
    }
}

/// `int_x0^inf e^{-2s(y-x0)} m(y)^dagger m(y) dy` for the Jost solution.
fn gram_tail(v: &Potential, k: C64, x0: f64, n: usize) -> CMat {
    let s = k.im;
    if v.jost_oracle(k, x0).is_none() {
        return eye(n) * c64(1.0 / (2.0 * s), 0.0);
    }
    let opts = quad::QuadOptions {
        rtol: 1e-12,
        atol: 1e-300,
        max_intervals: 4000,
    };
    let r = quad::integrate(
        |t| {
            if t >= 1.0 {
                return vec![C64::new(0.0, 0.0); n * n];
            }
            let u = 1.0 - t;
            let y = t / u;
            // Fall back to the plane-wave value if the oracle declines a point.
            let m = match v.jost_oracle(k, x0 + y) {
                Some((f, _)) => f * (-C64::i() * k * (x0 + y)).exp(),
                None => eye(n),
            };
            let g = (m.adjoint() * m) * c64((-2.0 * s * y).exp() / (u * u), 0.0);
            g.as_slice().to_vec()
        },
        0.0,
        1.0,
        opts,
    );
    match r {
        Ok(r) => mat(n, &r.value),
        Err(_) => eye(n) * c64(1.0 / (2.0 * s), 0.0),
    }
}

fn backward_solve(
    v: &Potential,
    k: C64,
    growing: bool,
    gram: bool,
    x_min_cover: f64,
    settings: &Settings,
) -> Result<JostSlice> {
    let n = v.dim();
    let kind = if growing { WaveKind::GrowingG } else { WaveKind::JostF };
    check_zero(v, k)?;
    if gram && k.im <= 0.0 {
        return Err(WaveError::Domain(k));
    }
    let s = if growing { -1.0 } else { 1.0 };
    let oracle_k = if growing { -k } else { k };
    let mut start = start_point(v, k, oracle_k, settings);
    if x_min_cover > start.x {
        start.x = x_min_cover;
        if start.kind == StartKind::PlaneWave && v.jost_oracle(oracle_k, start.x).is_some() {
            start.kind = StartKind::Oracle;
        }
    }
    if start.kind == StartKind::Oracle {
        // Keep e^{-i s k x0} and the oracle value inside floating-point range.
        let limit = 600.0 / k.im.abs().max(1e-300);
        start.x = start.x.min(limit).max(x_min_cover);
    }
    let x0 = start.x;
    let nn = n * n;
    let dim = if gram { 3 * nn } else { 2 * nn };
    let mut y0 = vec![C64::new(0.0, 0.0); dim];
    let iks = C64::i() * s * k;
    let init = match start.kind {
        StartKind::Oracle => v.jost_oracle(oracle_k, x0).map(|(f, fp)| {
            let e = (-iks * x0).exp();
            let m = f * e;
            let mp = fp * e - &m * iks;
            (m, mp)
        }),
        _ => None,
    };
    let (m0, mp0) = init.unwrap_or_else(|| (eye(n), CMat::zeros(n, n)));
    y0[..nn].copy_from_slice(m0.as_slice());
    y0[nn..2 * nn].copy_from_slice(mp0.as_slice());
    if gram {
        let tail = gram_tail(v, k, x0, n);
        y0[2 * nn..].copy_from_slice(tail.as_slice());
    }
    let two_iks = iks * 2.0;
    let sig2 = 2.0 * k.im;
    let rhs = |x: f64, y: &[C64], dy: &mut [C64]| {
        let vx = v.eval(x);
        let m = mat(n, &y[..nn]);
        let mp = mat(n, &y[nn..2 * nn]);
        let mpp = &vx * &m - &mp * two_iks;
        dy[..nn].copy_from_slice(mp.as_slice());
        dy[nn..2 * nn].copy_from_slice(mpp.as_slice());
        if gram {
            let f = mat(n, &y[2 * nn..]);
            let g = f * c64(sig2, 0.0) - m.adjoint() * &m;
            dy[2 * nn..].copy_from_slice(g.as_slice());
        }
    };
    let sol = ode::solve(rhs, x0, &y0, 0.0, &settings.ode_options(), true)
        .map_err(|source| WaveError::SolverDiverged { kind, k, source })?;
    Ok(JostSlice {
        k,
        n,
        start,
        potential: v.clone(),
        dense: sol.dense.expect("dense output requested"),
        gram,
        growing,
    })
}

/// Jost solution `f(k, .)` for `k` in the closed upper half plane.
pub fn solve_jost(spec: &ProblemSpec, k: C64) -> Result<JostSlice> {
    solve_jost_potential(&spec.potential, k, false, 0.0, &spec.settings)
}

/// Jost solution with the scaled Gram integral, covering at least `[0, x_cover]`.
pub fn solve_jost_with_gram(spec: &ProblemSpec, k: C64, x_cover: f64) -> Result<JostSlice> {
    solve_jost_potential(&spec.potential, k, true, x_cover, &spec.settings)
}

pub fn solve_jost_potential(v: &Potential, k: C64, gram: bool, x_cover: f64, settings: &Settings) -> Result<JostSlice> {
    if k.im < -1e-14 {
        return Err(WaveError::Domain(k));
    }
    backward_solve(v, k, false, gram, x_cover, settings)
}

/// Growing solution `g(k, .)`, normalized as `e^{-ikx}[I + o(1)]`.
pub fn solve_growing_g(spec: &ProblemSpec, k: C64) -> Result<JostSlice> {
    if k.norm() == 0.0 {
        return Err(WaveError::Domain(k));
    }
    backward_solve(&spec.potential, k, true, false, 0.0, &spec.settings)
}

/// Regular solution at fixed `k` on `[0, x_max]`.
#[derive(Clone)]
pub struct RegularSlice {
    pub k: C64,
    pub n: usize,
    /// Scaling rate `|Im k|`.
    pub sigma: f64,
    pub x_max: f64,
    dense: DenseOutput,
    gram: bool,
}

impl RegularSlice {
    /// Scaled pair `(psi, psi')` with `phi = e^{sigma x} psi`.
    pub fn scaled(&self, x: f64) -> (CMat, CMat) {
        let n = self.n;
        let y = self.dense.eval(x.clamp(0.0, self.x_max));
        (mat(n, &y[..n * n]), mat(n, &y[n * n..2 * n * n]))
    }

    pub fn value(&self, x: f64) -> CMat {
        self.value_deriv(x).0
    }

    pub fn deriv(&self, x: f64) -> CMat {
        self.value_deriv(x).1
    }

    pub fn value_deriv(&self, x: f64) -> (CMat, CMat) {
        let (p, pp) = self.scaled(x);
        let e = (self.sigma * x).exp();
        let d = (pp + &p * c64(self.sigma, 0.0)) * c64(e, 0.0);
        (p * c64(e, 0.0), d)
    }

    /// `e^{-2 sigma x} int_0^x phi^dagger phi`.
    pub fn gram_scaled(&self, x: f64) -> Option<CMat> {
        if !self.gram {
            return None;
        }
        let n = self.n;
        let y = self.dense.eval(x.clamp(0.0, self.x_max));
        Some(mat(n, &y[2 * n * n..3 * n * n]))
    }

    pub fn steps(&self) -> usize {
        self.dense.steps()
    }
}

/// Regular solution with `phi(k,0) = A`, `phi'(k,0) = B`, integrated forward.
pub fn solve_regular(spec: &ProblemSpec, k: C64, x_max: f64) -> Result<RegularSlice> {
    solve_regular_opts(spec, k, x_max, false, &spec.settings.ode_options())
}

pub fn solve_regular_with_gram(spec: &ProblemSpec, k: C64, x_max: f64) -> Result<RegularSlice> {
    solve_regular_opts(spec, k, x_max, true, &spec.settings.ode_options())
}

pub fn solve_regular_opts(
    spec: &ProblemSpec,
    k: C64,
    x_max: f64,
    gram: bool,
    opts: &ode::OdeOptions,
) -> Result<RegularSlice> {
    regular_from(&spec.potential, spec.a(), spec.b(), k, x_max, gram, opts)
}

pub fn regular_from(
    v: &Potential,
    a: &CMat,
    b: &CMat,
    k: C64,
    x_max: f64,
    gram: bool,
    opts: &ode::OdeOptions,
) -> Result<RegularSlice> {
    let n = v.dim();
    let nn = n * n;
    let sigma = k.im.abs();
    let dim = if gram { 3 * nn } else { 2 * nn };
    let mut y0 = vec![C64::new(0.0, 0.0); dim];
    y0[..nn].copy_from_slice(a.as_slice());
    let bp = b - a * c64(sigma, 0.0);
    y0[nn..2 * nn].copy_from_slice(bp.as_slice());
    let shift = k * k + sigma * sigma;
    let rhs = |x: f64, y: &[C64], dy: &mut [C64]| {
        let mut vx = v.eval(x);
        for i in 0..n {
            vx[(i, i)] -= shift;
        }
        let p = mat(n, &y[..nn]);
        let pp = mat(n, &y[nn..2 * nn]);
        let ppp = &vx * &p - &pp * c64(2.0 * sigma, 0.0);
        dy[..nn].copy_from_slice(pp.as_slice());
        dy[nn..2 * nn].copy_from_slice(ppp.as_slice());
        if gram {
            let e = mat(n, &y[2 * nn..]);
            let g = p.adjoint() * &p - e * c64(2.0 * sigma, 0.0);
            dy[2 * nn..].copy_from_slice(g.as_slice());
        }
    };
    let sol = ode::solve(rhs, 0.0, &y0, x_max.max(0.0), opts, true).map_err(|source| WaveError::SolverDiverged {
        kind: WaveKind::RegularPhi,
        k,
        source,
    })?;
    Ok(RegularSlice {
        k,
        n,
        sigma,
        x_max: x_max.max(0.0),
        dense: sol.dense.expect("dense output requested"),
        gram,
    })
}

/// `Psi(k,x) = f(-k,x) + f(k,x) S(k)` for real `k`.
#[derive(Clone)]
pub struct PhysicalSolution {
    pub f_plus: JostSlice,
    pub f_minus: JostSlice,
    pub s: CMat,
}

impl PhysicalSolution {
    pub fn value(&self, x: f64) -> CMat {
        self.f_minus.value(x) + self.f_plus.value(x) * &self.s
    }

    pub fn deriv(&self, x: f64) -> CMat {
        self.f_minus.deriv(x) + self.f_plus.deriv(x) * &self.s
    }
}

pub fn physical_solution(f_plus: JostSlice, f_minus: JostSlice, s: CMat) -> Result<PhysicalSolution> {
    if f_plus.k.im.abs() > 1e-14 || (f_plus.k + f_minus.k).norm() > 1e-12 * (1.0 + f_plus.k.norm()) {
        return Err(WaveError::Domain(f_plus.k));
    }
    Ok(PhysicalSolution { f_plus, f_minus, s })
}

/// Solver-backed wave solution of a given kind for a problem.
pub struct WaveSolution<'a> {
    pub spec: &'a ProblemSpec,
    pub kind: WaveKind,
    /// Extent of the forward range for regular solutions.
    pub x_max: f64,
}

impl<'a> WaveSolution<'a> {
    pub fn new(spec: &'a ProblemSpec, kind: WaveKind) -> Self {
        WaveSolution { spec, kind, x_max: 20.0 }
    }

    /// Value and derivative at `(k, x)`.
    pub fn at(&self, k: C64, x: f64) -> Result<(CMat, CMat)> {
        match self.kind {
            WaveKind::JostF => Ok(solve_jost(self.spec, k)?.value_deriv(x)),
            WaveKind::GrowingG => Ok(solve_growing_g(self.spec, k)?.value_deriv(x)),
            WaveKind::RegularPhi => Ok(solve_regular(self.spec, k, self.x_max.max(x))?.value_deriv(x)),
            WaveKind::PhysicalPsi => {
                if k.im != 0.0 || k.re == 0.0 {
                    return Err(WaveError::Domain(k));
                }
                let fp = solve_jost(self.spec, k)?;
                let fm = solve_jost(self.spec, -k)?;
                let s = crate::spectral::scattering_from_slices(self.spec, &fp, &fm)
                    .map_err(|_| WaveError::Domain(k))?;
                let psi = physical_solution(fp, fm, s)?;
                Ok((psi.value(x), psi.deriv(x)))
            }
        }
    }

    pub fn value_at(&self, k: C64, x: f64) -> Result<CMat> {
        Ok(self.at(k, x)?.0)
    }

    pub fn deriv_at(&self, k: C64, x: f64) -> Result<CMat> {
        Ok(self.at(k, x)?.1)
    }
}

/// Relative residual of `-u'' + V u - k^2 u` from a five-point second
/// difference of the value function.
pub fn ode_residual<F>(v: &Potential, k: C64, x: f64, h: f64, u: F) -> f64
where
    F: Fn(f64) -> CMat,
{
    let u0 = u(x);
    let d2 = (u(x - 2.0 * h) * c64(-1.0, 0.0) + u(x - h) * c64(16.0, 0.0) - &u0 * c64(30.0, 0.0)
        + u(x + h) * c64(16.0, 0.0)
        - u(x + 2.0 * h))
        * c64(1.0 / (12.0 * h * h), 0.0);
    let r = -&d2 + v.eval(x) * &u0 - &u0 * (k * k);
    let scale = max_abs(&u0) * (1.0 + (k * k).norm() + max_abs(&v.eval(x)));
    max_abs(&r) / scale.max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{validate_boundary, zero_potential};
    use crate::linalg::real_mat;

    fn free(a: f64, b: f64) -> ProblemSpec {
        ProblemSpec::new(zero_potential(1), validate_boundary(real_mat(1, &[a]), real_mat(1, &[b])).unwrap()).unwrap()
    }

    #[test]
    fn free_regular_matches_trig() {
        let kap = 0.7;
        let spec = free(1.0, kap);
        let k = c64(1.3, 0.0);
        let r = solve_regular(&spec, k, 5.0).unwrap();
        for &x in &[0.0, 1.0, 2.5, 5.0] {
            let exact = (k * x).cos() + kap * (k * x).sin() / k;
            assert!((r.value(x)[(0, 0)] - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn free_jost_is_plane_wave() {
        let spec = free(0.0, 1.0);
        let k = c64(0.4, 0.9);
        let f = solve_jost(&spec, k).unwrap();
        for &x in &[0.0, 1.0, 3.0] {
            assert!((f.value(x)[(0, 0)] - (C64::i() * k * x).exp()).norm() < 1e-12);
        }
    }

    #[test]
    fn free_growing_is_plane_wave() {
        let spec = free(0.0, 1.0);
        let k = c64(0.0, 1.5);
        let g = solve_growing_g(&spec, k).unwrap();
        let x = 2.0;
        assert!((g.value(x)[(0, 0)] - (-C64::i() * k * x).exp()).norm() < 1e-10);
    }
}

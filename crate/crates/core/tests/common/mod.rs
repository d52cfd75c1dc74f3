//! Residual helpers shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use specsurg::fixtures::two_channel_spec;
use specsurg::linalg::{self, c64, eye, max_abs, CMat, C64};
use specsurg::problem::ProblemSpec;
use specsurg::spectral::{self, assemble_spectrum};
use specsurg::wave;

pub fn two_channel() -> ProblemSpec {
    two_channel_spec().expect("two-channel problem")
}

/// `max(|S(-k) - S(k)^dagger|, |S(k) S(k)^dagger - I|)`.
pub fn unitarity_residual(spec: &ProblemSpec, k: f64) -> f64 {
    let s = spectral::scattering_matrix(spec, k).unwrap();
    let sm = spectral::scattering_matrix(spec, -k).unwrap();
    let n = s.nrows();
    max_abs(&(&sm - s.adjoint())).max(max_abs(&(&s * s.adjoint() - eye(n))))
}

/// Relative mismatch of the regular solution against its two
/// representations through the physical and Jost solutions.
pub fn representation_residual(spec: &ProblemSpec, k: f64, x: f64) -> f64 {
    let kk = c64(k, 0.0);
    let phi = wave::solve_regular(spec, kk, x.max(0.1)).unwrap().value(x);
    let fp = wave::solve_jost(spec, kk).unwrap();
    let fm = wave::solve_jost(spec, -kk).unwrap();
    let j = spectral::jost_matrix(spec, kk).unwrap();
    let jm = spectral::jost_matrix(spec, -kk).unwrap();
    let two_ik = C64::i() * 2.0 * k;
    let via_jost = (fp.value(x) * &jm - fm.value(x) * &j) / two_ik;
    let s = spectral::scattering_matrix(spec, k).unwrap();
    let psi = wave::physical_solution(fp, fm, s).unwrap();
    let via_psi = -(psi.value(x) * &j) / two_ik;
    let scale = max_abs(&phi).max(1e-300);
    (max_abs(&(&via_jost - &phi)) / scale).max(max_abs(&(&via_psi - &phi)) / scale)
}

/// Largest of the four Penrose residuals for `pinv(m)`.
pub fn penrose(m: &CMat) -> f64 {
    let p = linalg::pinv(m, 1e-10).unwrap();
    linalg::penrose_residual(m, &p)
}

/// Complex `rows x cols` matrix of rank at most `rank` from entries in
/// `[-2, 2]`, consumed from `vals` (needs `2 * rank * (rows + cols)` values).
pub fn low_rank(rows: usize, cols: usize, rank: usize, vals: &[f64]) -> CMat {
    let mut it = vals.iter().copied();
    let mut next = || c64(it.next().unwrap_or(0.3), it.next().unwrap_or(-0.7));
    let a = CMat::from_fn(rows, rank, |_, _| next());
    let b = CMat::from_fn(rank, cols, |_, _| next());
    if rank == 0 {
        CMat::zeros(rows, cols)
    } else {
        a * b
    }
}

/// Changes in the scattering matrix and bound-state data (kappa,
/// multiplicity, P, M, Psi(0)) under `(A, B) -> (AT, BT)`.
pub fn gauge_residual(spec: &ProblemSpec, t: &CMat) -> f64 {
    let g = spec.gauge(t).unwrap();
    let mut worst = 0.0_f64;
    for k in [0.4, 1.1, 2.7] {
        let a = spectral::scattering_matrix(spec, k).unwrap();
        let b = spectral::scattering_matrix(&g, k).unwrap();
        worst = worst.max(max_abs(&(a - b)));
    }
    let (r0, r1) = (assemble_spectrum(spec).unwrap(), assemble_spectrum(&g).unwrap());
    if r0.count() != r1.count() {
        return f64::INFINITY;
    }
    for (a, b) in r0.states.iter().zip(&r1.states) {
        if a.multiplicity != b.multiplicity {
            return f64::INFINITY;
        }
        worst = worst
            .max((a.kappa - b.kappa).abs() / a.kappa)
            .max(max_abs(&(a.p.matrix() - b.p.matrix())))
            .max(linalg::rel_diff(&a.m, &b.m))
            .max(linalg::rel_diff(&a.psi(0.0), &b.psi(0.0)));
    }
    worst
}

/// An invertible 2x2 gauge built from four complex entries.
pub fn gauge_matrix(v: &[f64; 8]) -> CMat {
    let t = CMat::from_fn(2, 2, |i, j| c64(v[2 * (2 * i + j)], v[2 * (2 * i + j) + 1]));
    // Shift away from singular draws.
    let d = linalg::det(&t).norm();
    if d < 0.2 {
        t + eye(2) * c64(1.5, 0.0)
    } else {
        t
    }
}

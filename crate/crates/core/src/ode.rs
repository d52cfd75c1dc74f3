//! Embedded Runge-Kutta 5(4) pair of Dormand and Prince with step-size
//! control and continuous (dense) output, for complex first-order systems.
//!
//! Integration runs in either direction; the dense interpolant is the
//! standard fourth-order continuous extension of the pair.

use crate::linalg::C64;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: None,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("solution became non-finite near x = {0}")]
    NonFinite(f64),
    #[error("step size underflow at x = {0}")]
    StepUnderflow(f64),
    #[error("step budget exhausted at x = {0}")]
    TooManySteps(f64),
}

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Piecewise quartic interpolant over the accepted steps.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    dim: usize,
    x_start: f64,
    x_end: f64,
    xs: Vec<f64>,
    hs: Vec<f64>,
    coef: Vec<C64>,
}

impl DenseOutput {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lower and upper end of the covered interval.
    pub fn range(&self) -> (f64, f64) {
        (self.x_start.min(self.x_end), self.x_start.max(self.x_end))
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.range();
        x >= lo - 1e-12 * (1.0 + hi.abs()) && x <= hi + 1e-12 * (1.0 + hi.abs())
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        let forward = self.x_end >= self.x_start;
        // Steps are ordered along the integration direction.
        let (mut lo, mut hi) = (0usize, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let ahead = if forward { x >= self.xs[mid] } else { x <= self.xs[mid] };
            if ahead {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Evaluate the interpolant at `x` (clamped to the covered interval).
    pub fn eval_into(&self, x: f64, out: &mut [C64]) {
        let i = self.locate(x);
        let h = self.hs[i];
        let theta = ((x - self.xs[i]) / h).clamp(0.0, 1.0);
        let t1 = 1.0 - theta;
        let d = self.dim;
        let base = 5 * d * i;
        let r = &self.coef[base..base + 5 * d];
        for j in 0..d {
            out[j] = r[j] + (r[d + j] + (r[2 * d + j] + (r[3 * d + j] + r[4 * d + j] * t1) * theta) * t1) * theta;
        }
    }

    pub fn eval(&self, x: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Number of accepted steps.
    pub fn steps(&self) -> usize {
        self.xs.len()
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub x_end: f64,
    pub y_end: Vec<C64>,
    pub dense: Option<DenseOutput>,
    pub accepted: usize,
    pub rejected: usize,
}

fn err_norm(err: &[C64], y0: &[C64], y1: &[C64], rtol: f64, atol: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..err.len() {
        let sc = atol + rtol * y0[i].norm().max(y1[i].norm());
        let r = err[i].norm() / sc;
        s += r * r;
    }
    (s / err.len() as f64).sqrt()
}

/// Integrate `y' = rhs(x, y)` from `x0` to `x1`.
pub fn solve<F>(
    mut rhs: F,
    x0: f64,
    y0: &[C64],
    x1: f64,
    opts: &OdeOptions,
    dense: bool,
) -> Result<OdeSolution, OdeError>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let dim = y0.len();
    let zero = C64::new(0.0, 0.0);
    let span = x1 - x0;
    let dir = if span >= 0.0 { 1.0 } else { -1.0 };
    let mut out = DenseOutput {
        dim,
        x_start: x0,
        x_end: x1,
        xs: Vec::new(),
        hs: Vec::new(),
        coef: Vec::new(),
    };
    let mut y = y0.to_vec();
    if span == 0.0 {
        if dense {
            // A degenerate interval still yields a usable constant interpolant.
            out.xs.push(x0);
            out.hs.push(1.0);
            out.coef.extend_from_slice(&y);
            out.coef.extend(std::iter::repeat_n(zero, 4 * dim));
        }
        return Ok(OdeSolution {
            x_end: x1,
            y_end: y,
            dense: dense.then_some(out),
            accepted: 0,
            rejected: 0,
        });
    }
    let h_max = opts.h_max.unwrap_or(span.abs()).min(span.abs());
    let mut k1 = vec![zero; dim];
    let mut k2 = vec![zero; dim];
    let mut k3 = vec![zero; dim];
    let mut k4 = vec![zero; dim];
    let mut k5 = vec![zero; dim];
    let mut k6 = vec![zero; dim];
    let mut k7 = vec![zero; dim];
    let mut yt = vec![zero; dim];
    let mut y1 = vec![zero; dim];
    let mut err = vec![zero; dim];
    rhs(x0, &y, &mut k1);

    // Initial step (Hairer-Norsett-Wanner heuristic).
    let mut h = match opts.h_init {
        Some(h) => h.abs().min(h_max),
        None => {
            let sc = |i: usize, v: &[C64]| opts.atol + opts.rtol * v[i].norm();
            let mut d0 = 0.0;
            let mut d1 = 0.0;
            for i in 0..dim {
                d0 += (y[i].norm() / sc(i, &y)).powi(2);
                d1 += (k1[i].norm() / sc(i, &y)).powi(2);
            }
            d0 = (d0 / dim as f64).sqrt();
            d1 = (d1 / dim as f64).sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            let h0 = h0.min(h_max);
            for i in 0..dim {
                yt[i] = y[i] + k1[i] * (dir * h0);
            }
            rhs(x0 + dir * h0, &yt, &mut k2);
            let mut d2 = 0.0;
            for i in 0..dim {
                d2 += ((k2[i] - k1[i]).norm() / sc(i, &y)).powi(2);
            }
            d2 = (d2 / dim as f64).sqrt() / h0;
            let dm = d1.max(d2);
            let h1 = if dm <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / dm).powf(0.2)
            };
            (100.0 * h0).min(h1).min(h_max)
        }
    };

    let beta = 0.04;
    let expo1 = 0.2 - beta * 0.75;
    let mut facold: f64 = 1e-4;
    let mut x = x0;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut last_rejected = false;

    loop {
        let remaining = (x1 - x) * dir;
        if remaining <= 1e-14 * (1.0 + x1.abs()) {
            break;
        }
        if accepted + rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps(x));
        }
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        if h < 1e-15 * (1.0 + x.abs()) {
            return Err(OdeError::StepUnderflow(x));
        }
        let hs = dir * h;

        for i in 0..dim {
            yt[i] = y[i] + k1[i] * (hs * A21);
        }
        rhs(x + C2 * hs, &yt, &mut k2);
        for i in 0..dim {
            yt[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * hs;
        }
        rhs(x + C3 * hs, &yt, &mut k3);
        for i in 0..dim {
            yt[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * hs;
        }
        rhs(x + C4 * hs, &yt, &mut k4);
        for i in 0..dim {
            yt[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * hs;
        }
        rhs(x + C5 * hs, &yt, &mut k5);
        for i in 0..dim {
            yt[i] = y[i] + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * hs;
        }
        let xph = if last { x1 } else { x + hs };
        rhs(xph, &yt, &mut k6);
        for i in 0..dim {
            y1[i] = y[i] + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * hs;
        }
        rhs(xph, &y1, &mut k7);
        for i in 0..dim {
            err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * hs;
        }
        let en = err_norm(&err, &y, &y1, opts.rtol, opts.atol);
        if !en.is_finite() {
            if h < 1e-12 * (1.0 + x.abs()) {
                return Err(OdeError::NonFinite(x));
            }
            h *= 0.1;
            rejected += 1;
            last_rejected = true;
            continue;
        }
        let fac11 = en.powf(expo1);
        let mut fac = fac11 / facold.powf(beta);
        fac = (fac / 0.9).clamp(0.2, 10.0);
        let hnew = h / fac;
        if en <= 1.0 {
            facold = en.max(1e-4);
            accepted += 1;
            if dense {
                out.xs.push(x);
                out.hs.push(hs);
                let base = out.coef.len();
                out.coef.resize(base + 5 * dim, zero);
                for i in 0..dim {
                    let ydiff = y1[i] - y[i];
                    let bspl = k1[i] * hs - ydiff;
                    out.coef[base + i] = y[i];
                    out.coef[base + dim + i] = ydiff;
                    out.coef[base + 2 * dim + i] = bspl;
                    out.coef[base + 3 * dim + i] = ydiff - k7[i] * hs - bspl;
                    out.coef[base + 4 * dim + i] =
                        (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * hs;
                }
            }
            std::mem::swap(&mut k1, &mut k7);
            std::mem::swap(&mut y, &mut y1);
            x = xph;
            if y.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(OdeError::NonFinite(x));
            }
            if last {
                break;
            }
            h = if last_rejected { hnew.min(h) } else { hnew }.min(h_max);
            last_rejected = false;
        } else {
            h /= (fac11 / 0.9).clamp(1.0, 5.0);
            rejected += 1;
            last_rejected = true;
        }
    }
    Ok(OdeSolution {
        x_end: x1,
        y_end: y,
        dense: dense.then_some(out),
        accepted,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_forward_and_dense() {
        let opts = OdeOptions::default();
        let sol = solve(
            |_x, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            10.0,
            &opts,
            true,
        )
        .unwrap();
        assert!((sol.y_end[0].re - 10f64.sin()).abs() < 1e-8);
        let d = sol.dense.unwrap();
        for &x in &[0.3, 2.71, 5.5, 9.99] {
            let v = d.eval(x);
            assert!((v[0].re - x.sin()).abs() < 1e-8, "x={x}");
            assert!((v[1].re - x.cos()).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn backward_exponential() {
        let opts = OdeOptions::default();
        let sol = solve(
            |_x, y, dy| dy[0] = y[0] * C64::new(0.0, 3.0),
            5.0,
            &[C64::new(0.0, 15.0).exp()],
            0.0,
            &opts,
            true,
        )
        .unwrap();
        assert!((sol.y_end[0] - C64::new(1.0, 0.0)).norm() < 1e-8);
        let d = sol.dense.unwrap();
        let v = d.eval(2.5);
        assert!((v[0] - C64::new(0.0, 7.5).exp()).norm() < 1e-8);
    }

    #[test]
    fn zero_length_interval() {
        let sol = solve(|_x, _y, dy| dy[0] = C64::new(1.0, 0.0), 1.0, &[C64::new(2.0, 0.0)], 1.0, &OdeOptions::default(), true).unwrap();
        assert_eq!(sol.y_end[0], C64::new(2.0, 0.0));
        assert_eq!(sol.dense.unwrap().eval(1.0)[0], C64::new(2.0, 0.0));
    }
}

//! Adaptive Gauss-Kronrod (7-15) quadrature for vector-valued complex
//! integrands.

#![allow(clippy::excessive_precision)]

use crate::linalg::{C64, CMat};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rtol: 1e-11,
            atol: 1e-14,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadError {
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
    #[error("interval budget exhausted with error estimate {0:.3e}")]
    NotConverged(f64),
}

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub value: Vec<C64>,
    pub error: f64,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: Vec<C64>,
    error: f64,
}

fn gk15<F>(f: &F, a: f64, b: f64) -> Result<(Vec<C64>, f64), QuadError>
where
    F: Fn(f64) -> Vec<C64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let dim = fc.len();
    let mut k: Vec<C64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut g: Vec<C64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for i in 0..dim {
            let s = f1[i] + f2[i];
            k[i] += s * WGK[j];
            if j % 2 == 1 {
                g[i] += s * WG[j / 2];
            }
        }
    }
    let mut err = 0.0_f64;
    for i in 0..dim {
        k[i] *= h;
        g[i] *= h;
        if !(k[i].re.is_finite() && k[i].im.is_finite()) {
            return Err(QuadError::NonFinite(c));
        }
        err = err.max((k[i] - g[i]).norm());
    }
    Ok((k, err))
}

fn max_norm(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// Integrate a vector-valued function over `[a, b]`.
pub fn integrate<F>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult, QuadError>
where
    F: Fn(f64) -> Vec<C64>,
{
    let (v0, e0) = gk15(&f, a, b)?;
    let mut pieces = vec![Piece {
        a,
        b,
        value: v0,
        error: e0,
    }];
    loop {
        let dim = pieces[0].value.len();
        let mut total = vec![C64::new(0.0, 0.0); dim];
        let mut err = 0.0;
        for p in &pieces {
            for i in 0..dim {
                total[i] += p.value[i];
            }
            err += p.error;
        }
        let target = opts.atol.max(opts.rtol * max_norm(&total));
        if err <= target {
            return Ok(QuadResult {
                value: total,
                error: err,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= opts.max_intervals {
            return Err(QuadError::NotConverged(err));
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.partial_cmp(&y.1.error).unwrap())
            .expect("non-empty");
        let p = pieces.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(QuadError::NotConverged(err));
        }
        let (vl, el) = gk15(&f, p.a, m)?;
        let (vr, er) = gk15(&f, m, p.b)?;
        pieces.push(Piece {
            a: p.a,
            b: m,
            value: vl,
            error: el,
        });
        pieces.push(Piece {
            a: m,
            b: p.b,
            value: vr,
            error: er,
        });
    }
}

/// Integrate a real scalar function over `[a, b]`.
pub fn integrate_real<F>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    let r = integrate(|x| vec![C64::new(f(x), 0.0)], a, b, opts)?;
    Ok(r.value[0].re)
}

/// Integrate a matrix-valued function over `[a, b]`.
pub fn integrate_matrix<F>(
    f: F,
    a: f64,
    b: f64,
    rows: usize,
    cols: usize,
    opts: QuadOptions,
) -> Result<CMat, QuadError>
where
    F: Fn(f64) -> CMat,
{
    let r = integrate(|x| f(x).as_slice().to_vec(), a, b, opts)?;
    Ok(CMat::from_column_slice(rows, cols, &r.value))
}

/// Integrate a real function over `[a, inf)` with the map `x = a + t/(1-t)`.
pub fn integrate_real_to_infinity<F>(f: F, a: f64, opts: QuadOptions) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    integrate_real(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let x = a + t / s;
            let v = f(x) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate_real(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_complex() {
        let r = integrate(
            |x| vec![C64::new(0.0, 7.0 * x).exp()],
            0.0,
            3.0,
            QuadOptions::default(),
        )
        .unwrap();
        let exact = (C64::new(0.0, 21.0).exp() - 1.0) / C64::new(0.0, 7.0);
        assert!((r.value[0] - exact).norm() < 1e-11);
    }

    #[test]
    fn semi_infinite_exponential() {
        let v = integrate_real_to_infinity(|x| (-2.0 * x).exp(), 1.0, QuadOptions::default()).unwrap();
        assert!((v - (-2.0_f64).exp() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn nan_is_reported() {
        let r = integrate_real(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, QuadOptions::default());
        assert!(matches!(r, Err(QuadError::NonFinite(_))));
    }
}

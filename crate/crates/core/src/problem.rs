//! Potentials, boundary pairs and problem specifications, together with the
//! JSON problem-file format.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::linalg::{self, c64, cmat, eye, max_abs, CMat, C64};
use crate::quad;
use crate::settings::Settings;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("boundary matrices violate -B^dagger A + A^dagger B = 0 (residual {0:.3e})")]
    NonSelfadjointBoundary(f64),
    #[error("A^dagger A + B^dagger B is not positive definite (smallest eigenvalue {0:.3e})")]
    DegenerateBoundary(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample {index} is not Hermitian (relative residual {residual:.3e})")]
    InvalidSample { index: usize, residual: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("JSON syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("invalid problem file at {path}: {msg}")]
    Schema { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, ProblemError>;

/// Moment class of a potential, ordered from weakest to strongest decay.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MomentClass {
    L1,
    L1_1,
    L1_2,
    L1_3,
    /// Vanishes beyond the given point.
    CompactSupport(f64),
}

impl MomentClass {
    fn level(&self) -> u8 {
        match self {
            MomentClass::L1 => 0,
            MomentClass::L1_1 => 1,
            MomentClass::L1_2 => 2,
            MomentClass::L1_3 => 3,
            MomentClass::CompactSupport(_) => 4,
        }
    }

    pub fn at_least(&self, other: MomentClass) -> bool {
        self.level() >= other.level()
    }

    pub fn weaker(self, other: MomentClass) -> MomentClass {
        match (self, other) {
            (MomentClass::CompactSupport(a), MomentClass::CompactSupport(b)) => {
                MomentClass::CompactSupport(a.max(b))
            }
            _ => {
                if self.level() <= other.level() {
                    self
                } else {
                    other
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            MomentClass::L1 => "L1".into(),
            MomentClass::L1_1 => "L1_1".into(),
            MomentClass::L1_2 => "L1_2".into(),
            MomentClass::L1_3 => "L1_3".into(),
            MomentClass::CompactSupport(x) => format!("compact_support({x})"),
        }
    }
}

/// Envelope of `|V(x)|` for large `x`, used to place the asymptotic start point.
#[derive(Debug, Clone, PartialEq)]
pub enum Tail {
    /// `|V| <= c exp(-rate x)`.
    Exponential { c: f64, rate: f64 },
    /// `|V| <= c (1+x)^degree exp(-rate x)`.
    ExpPoly { c: f64, rate: f64, degree: u32 },
    /// `|V| <= c / (x + shift)^p`, `p > 1`.
    Power { c: f64, shift: f64, p: f64 },
    /// `V = 0` for `x >= x0`.
    Compact { x0: f64 },
    Sum(Vec<Tail>),
}

impl Tail {
    /// Upper bound for the integral of `|V|` over `[x, inf)`.
    pub fn integral_from(&self, x: f64) -> f64 {
        match self {
            Tail::Exponential { c, rate } => c / rate * (-rate * x).exp(),
            Tail::ExpPoly { c, rate, degree } => {
                let d = *degree as i32;
                let mut s = 0.0;
                let mut fall = 1.0;
                for j in 0..=d {
                    s += fall * (1.0 + x).powi(d - j) / rate.powi(j + 1);
                    fall *= (d - j) as f64;
                }
                c * (-rate * x).exp() * s
            }
            Tail::Power { c, shift, p } => c / ((p - 1.0) * (x + shift).powf(p - 1.0)),
            Tail::Compact { x0 } => {
                if x >= *x0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Tail::Sum(parts) => parts.iter().map(|t| t.integral_from(x)).sum(),
        }
    }

    /// Smallest `x >= 0` (to bisection accuracy) with tail integral below `tol`.
    pub fn cutoff(&self, tol: f64) -> f64 {
        if self.integral_from(0.0) < tol {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.integral_from(hi) >= tol {
            hi *= 2.0;
            if hi > 1e15 {
                return f64::INFINITY;
            }
        }
        let mut lo = hi / 2.0;
        if self.integral_from(lo) < tol {
            lo = 0.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.integral_from(mid) < tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// A matrix-valued potential on the half line.
pub trait PotentialFn: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: f64) -> CMat;
    fn class(&self) -> MomentClass;
    fn tail(&self) -> Tail;
    /// Exact Jost solution `(f, f')` when known in closed form.
    fn jost_oracle(&self, _k: C64, _x: f64) -> Option<(CMat, CMat)> {
        None
    }
    /// Serializable description, when the potential came from a problem file.
    fn source(&self) -> Option<PotentialSource> {
        None
    }
    fn describe(&self) -> String;
}

#[derive(Clone)]
pub struct Potential(pub Arc<dyn PotentialFn>);

impl Potential {
    pub fn new<P: PotentialFn + 'static>(p: P) -> Self {
        Potential(Arc::new(p))
    }
    pub fn dim(&self) -> usize {
        self.0.dim()
    }
    pub fn eval(&self, x: f64) -> CMat {
        self.0.eval(x)
    }
    pub fn class(&self) -> MomentClass {
        self.0.class()
    }
    pub fn tail(&self) -> Tail {
        self.0.tail()
    }
    pub fn jost_oracle(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        self.0.jost_oracle(k, x)
    }
    pub fn source(&self) -> Option<PotentialSource> {
        self.0.source()
    }
    pub fn describe(&self) -> String {
        self.0.describe()
    }
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Potential({})", self.describe())
    }
}

/// Identically zero `n x n` potential.
#[derive(Debug, Clone)]
pub struct ZeroPotential {
    pub n: usize,
}

impl PotentialFn for ZeroPotential {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, _x: f64) -> CMat {
        CMat::zeros(self.n, self.n)
    }
    fn class(&self) -> MomentClass {
        MomentClass::CompactSupport(0.0)
    }
    fn tail(&self) -> Tail {
        Tail::Compact { x0: 0.0 }
    }
    fn jost_oracle(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        let e = (C64::i() * k * x).exp();
        Some((eye(self.n) * e, eye(self.n) * (C64::i() * k * e)))
    }
    fn source(&self) -> Option<PotentialSource> {
        Some(PotentialSource::Family {
            name: "zero".into(),
            params: BTreeMap::new(),
        })
    }
    fn describe(&self) -> String {
        "zero".into()
    }
}

/// Scalar potential `-8 a e b^2 exp(2 b x) / (a + e exp(2 b x))^2` with its
/// closed-form Jost solution.
#[derive(Debug, Clone)]
pub struct ExponentialFamily {
    pub alpha: f64,
    pub epsilon: f64,
    pub beta: f64,
}

impl ExponentialFamily {
    // 1 / (alpha + eps e^{2 beta x}) written with decaying exponentials.
    fn s(&self, x: f64) -> f64 {
        let e = (-2.0 * self.beta * x).exp();
        e / (self.alpha * e + self.epsilon)
    }
    fn ds(&self, x: f64) -> f64 {
        let e = (-2.0 * self.beta * x).exp();
        let d = self.alpha * e + self.epsilon;
        -2.0 * self.beta * self.epsilon * e / (d * d)
    }
}

impl PotentialFn for ExponentialFamily {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: f64) -> CMat {
        let e = (-2.0 * self.beta * x).exp();
        let d = self.alpha * e + self.epsilon;
        let v = -8.0 * self.alpha * self.epsilon * self.beta * self.beta * e / (d * d);
        CMat::from_element(1, 1, c64(v, 0.0))
    }
    fn class(&self) -> MomentClass {
        MomentClass::L1_3
    }
    fn tail(&self) -> Tail {
        Tail::Exponential {
            c: 8.0 * self.alpha * self.beta * self.beta / self.epsilon,
            rate: 2.0 * self.beta,
        }
    }
    fn jost_oracle(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        let den = k + C64::i() * self.beta;
        if den.norm() < 1e-14 {
            return None;
        }
        let c = C64::i() * 2.0 * self.alpha * self.beta / den;
        let e = (C64::i() * k * x).exp();
        let f = e * (1.0 - c * self.s(x));
        let fp = C64::i() * k * f - e * c * self.ds(x);
        Some((CMat::from_element(1, 1, f), CMat::from_element(1, 1, fp)))
    }
    fn source(&self) -> Option<PotentialSource> {
        let mut params = BTreeMap::new();
        params.insert("alpha".into(), self.alpha);
        params.insert("epsilon".into(), self.epsilon);
        params.insert("beta".into(), self.beta);
        Some(PotentialSource::Family {
            name: "exponential".into(),
            params,
        })
    }
    fn describe(&self) -> String {
        format!(
            "exponential(alpha={}, epsilon={}, beta={})",
            self.alpha, self.epsilon, self.beta
        )
    }
}

/// Scalar potential `2/(x+a)^2` with Jost solution `e^{ikx}[1 + i/(k(x+a))]`.
#[derive(Debug, Clone)]
pub struct InverseSquare {
    pub a: f64,
}

impl PotentialFn for InverseSquare {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: f64) -> CMat {
        CMat::from_element(1, 1, c64(2.0 / (x + self.a).powi(2), 0.0))
    }
    fn class(&self) -> MomentClass {
        MomentClass::L1
    }
    fn tail(&self) -> Tail {
        Tail::Power {
            c: 2.0,
            shift: self.a,
            p: 2.0,
        }
    }
    fn jost_oracle(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        if k.norm() < 1e-300 {
            return None;
        }
        let e = (C64::i() * k * x).exp();
        let y = x + self.a;
        let f = e * (1.0 + C64::i() / (k * y));
        let fp = C64::i() * k * f - e * C64::i() / (k * y * y);
        Some((CMat::from_element(1, 1, f), CMat::from_element(1, 1, fp)))
    }
    fn source(&self) -> Option<PotentialSource> {
        let mut params = BTreeMap::new();
        params.insert("a".into(), self.a);
        Some(PotentialSource::Family {
            name: "inverse_square".into(),
            params,
        })
    }
    fn describe(&self) -> String {
        format!("inverse_square(a={})", self.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    Real,
    Complex,
}

/// `V = U diag(V1, V2) U^dagger` for two scalar potentials and a 2x2 unitary.
#[derive(Clone)]
pub struct Combined {
    pub v1: Potential,
    pub v2: Potential,
    pub u: CMat,
    pub mode: Option<CombineMode>,
}

impl Combined {
    fn assemble(&self, a: C64, b: C64) -> CMat {
        &self.u * linalg::diag(&[a, b]) * self.u.adjoint()
    }
}

impl PotentialFn for Combined {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: f64) -> CMat {
        let a = self.v1.eval(x)[(0, 0)];
        let b = self.v2.eval(x)[(0, 0)];
        self.assemble(a, b)
    }
    fn class(&self) -> MomentClass {
        self.v1.class().weaker(self.v2.class())
    }
    fn tail(&self) -> Tail {
        Tail::Sum(vec![self.v1.tail(), self.v2.tail()])
    }
    fn jost_oracle(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        let (f1, d1) = self.v1.jost_oracle(k, x)?;
        let (f2, d2) = self.v2.jost_oracle(k, x)?;
        Some((
            self.assemble(f1[(0, 0)], f2[(0, 0)]),
            self.assemble(d1[(0, 0)], d2[(0, 0)]),
        ))
    }
    fn source(&self) -> Option<PotentialSource> {
        Some(PotentialSource::Combine {
            v1: Box::new(self.v1.source()?),
            v2: Box::new(self.v2.source()?),
            mode: match self.mode {
                Some(m) => CombineSpec::Mode(m),
                None => CombineSpec::Unitary(self.u.clone()),
            },
        })
    }
    fn describe(&self) -> String {
        format!("combine({}, {})", self.v1.describe(), self.v2.describe())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
    Cubic,
}

/// Sampled potential, zero beyond the last grid point.
#[derive(Debug, Clone)]
pub struct Tabulated {
    n: usize,
    grid: Vec<f64>,
    values: Vec<CMat>,
    // Natural-spline second derivatives (cubic mode only).
    second: Vec<CMat>,
    interpolation: Interpolation,
}

impl Tabulated {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn values(&self) -> &[CMat] {
        &self.values
    }
}

impl PotentialFn for Tabulated {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: f64) -> CMat {
        let m = self.grid.len();
        let last = self.grid[m - 1];
        if m == 1 || x > last || x < 0.0 {
            if m == 1 && x == 0.0 {
                return self.values[0].clone();
            }
            return CMat::zeros(self.n, self.n);
        }
        let i = match self.grid.binary_search_by(|g| g.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(m - 2),
            Err(i) => i.saturating_sub(1).min(m - 2),
        };
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        match self.interpolation {
            Interpolation::Linear => &self.values[i] * c64(1.0 - t, 0.0) + &self.values[i + 1] * c64(t, 0.0),
            Interpolation::Cubic => {
                let a = 1.0 - t;
                let b = t;
                let ca = (a * a * a - a) * h * h / 6.0;
                let cb = (b * b * b - b) * h * h / 6.0;
                &self.values[i] * c64(a, 0.0)
                    + &self.values[i + 1] * c64(b, 0.0)
                    + &self.second[i] * c64(ca, 0.0)
                    + &self.second[i + 1] * c64(cb, 0.0)
            }
        }
    }
    fn class(&self) -> MomentClass {
        MomentClass::CompactSupport(*self.grid.last().unwrap())
    }
    fn tail(&self) -> Tail {
        Tail::Compact {
            x0: *self.grid.last().unwrap(),
        }
    }
    fn source(&self) -> Option<PotentialSource> {
        Some(PotentialSource::Tabulated {
            grid: self.grid.clone(),
            matrices: self.values.clone(),
            interpolation: self.interpolation,
        })
    }
    fn describe(&self) -> String {
        format!(
            "tabulated({} samples on [0, {}])",
            self.grid.len(),
            self.grid.last().unwrap()
        )
    }
}

fn natural_spline_second(grid: &[f64], values: &[CMat]) -> Vec<CMat> {
    let m = grid.len();
    let n = values[0].nrows();
    let mut second = vec![CMat::zeros(n, n); m];
    if m < 3 {
        return second;
    }
    // Thomas algorithm on the interior nodes, one matrix right-hand side.
    let mut diag_c = vec![0.0; m];
    let mut rhs = vec![CMat::zeros(n, n); m];
    let mut upper = vec![0.0; m];
    for i in 1..m - 1 {
        let h0 = grid[i] - grid[i - 1];
        let h1 = grid[i + 1] - grid[i];
        diag_c[i] = (h0 + h1) / 3.0;
        upper[i] = h1 / 6.0;
        rhs[i] = (&values[i + 1] - &values[i]) * c64(1.0 / h1, 0.0) - (&values[i] - &values[i - 1]) * c64(1.0 / h0, 0.0);
    }
    for i in 2..m - 1 {
        let lower = (grid[i] - grid[i - 1]) / 6.0;
        let w = lower / diag_c[i - 1];
        diag_c[i] -= w * upper[i - 1];
        let prev = rhs[i - 1].clone();
        rhs[i] -= prev * c64(w, 0.0);
    }
    for i in (1..m - 1).rev() {
        let next = if i + 1 < m - 1 {
            &second[i + 1] * c64(upper[i], 0.0)
        } else {
            CMat::zeros(n, n)
        };
        second[i] = (&rhs[i] - next) * c64(1.0 / diag_c[i], 0.0);
    }
    second
}

/// Serializable description of a potential.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSource {
    Family {
        name: String,
        params: BTreeMap<String, f64>,
    },
    Tabulated {
        grid: Vec<f64>,
        matrices: Vec<CMat>,
        interpolation: Interpolation,
    },
    Combine {
        v1: Box<PotentialSource>,
        v2: Box<PotentialSource>,
        mode: CombineSpec,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CombineSpec {
    Mode(CombineMode),
    Unitary(CMat),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// The scalar exponential family; all three parameters must be positive.
pub fn family_exponential(alpha: f64, epsilon: f64, beta: f64) -> Result<Potential> {
    positive("alpha", alpha)?;
    positive("epsilon", epsilon)?;
    positive("beta", beta)?;
    Ok(Potential::new(ExponentialFamily {
        alpha,
        epsilon,
        beta,
    }))
}

/// The scalar inverse-square family `2/(x+a)^2`, `a > 0`.
pub fn family_inverse_square(a: f64) -> Result<Potential> {
    positive("a", a)?;
    Ok(Potential::new(InverseSquare { a }))
}

pub fn zero_potential(n: usize) -> Potential {
    Potential::new(ZeroPotential { n })
}

/// Unitary used by the real and complex combination modes.
pub fn combine_unitary(mode: CombineMode) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match mode {
        CombineMode::Real => cmat(2, &[c64(s, 0.0), c64(s, 0.0), c64(s, 0.0), c64(-s, 0.0)]),
        CombineMode::Complex => cmat(2, &[c64(s, 0.0), c64(s, 0.0), c64(0.0, -s), c64(0.0, s)]),
    }
}

/// Combine two scalar potentials into a 2x2 potential.
///
/// Real mode gives `1/2 [[V1+V2, V1-V2], [V1-V2, V1+V2]]`; complex mode gives
/// `1/2 [[V1+V2, i(V1-V2)], [-i(V1-V2), V1+V2]]`. Closed-form Jost solutions
/// combine the same way.
pub fn combine_scalar_to_matrix(v1: Potential, v2: Potential, mode: CombineMode) -> Result<Potential> {
    if v1.dim() != 1 || v2.dim() != 1 {
        return Err(ProblemError::Dimension("combine expects scalar potentials".into()));
    }
    Ok(Potential::new(Combined {
        v1,
        v2,
        u: combine_unitary(mode),
        mode: Some(mode),
    }))
}

/// Combine two scalar potentials with an explicit 2x2 unitary `U`:
/// `V = U diag(V1, V2) U^dagger`.
pub fn combine_with_unitary(v1: Potential, v2: Potential, u: CMat) -> Result<Potential> {
    if v1.dim() != 1 || v2.dim() != 1 {
        return Err(ProblemError::Dimension("combine expects scalar potentials".into()));
    }
    if u.nrows() != 2 || u.ncols() != 2 {
        return Err(ProblemError::Dimension("combine unitary must be 2x2".into()));
    }
    let r = max_abs(&(u.adjoint() * &u - eye(2)));
    if r > 1e-10 {
        return Err(ProblemError::InvalidParameter(format!(
            "combine matrix is not unitary (residual {r:.3e})"
        )));
    }
    Ok(Potential::new(Combined {
        v1,
        v2,
        u,
        mode: None,
    }))
}

/// Interpolated potential from samples on a grid that starts at 0.
pub fn tabulated_potential(grid: Vec<f64>, matrices: Vec<CMat>, interpolation: Interpolation) -> Result<Potential> {
    if grid.is_empty() || grid.len() != matrices.len() {
        return Err(ProblemError::InvalidGrid(format!(
            "grid has {} points but {} matrices were given",
            grid.len(),
            matrices.len()
        )));
    }
    if grid[0] != 0.0 {
        return Err(ProblemError::InvalidGrid("grid must start at x = 0".into()));
    }
    if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(ProblemError::InvalidGrid(format!(
            "grid must be strictly increasing (index {})",
            i + 1
        )));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(ProblemError::InvalidGrid("grid has non-finite entries".into()));
    }
    let n = matrices[0].nrows();
    for (index, m) in matrices.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(ProblemError::Dimension(format!("sample {index} has the wrong shape")));
        }
        if !linalg::is_finite(m) {
            return Err(ProblemError::InvalidSample {
                index,
                residual: f64::NAN,
            });
        }
        let residual = linalg::herm_residual(m);
        if residual > 1e-12 {
            return Err(ProblemError::InvalidSample { index, residual });
        }
    }
    let second = match interpolation {
        Interpolation::Cubic => natural_spline_second(&grid, &matrices),
        Interpolation::Linear => vec![CMat::zeros(n, n); grid.len()],
    };
    Ok(Potential::new(Tabulated {
        n,
        grid,
        values: matrices,
        second,
        interpolation,
    }))
}

/// Result of fitting the sampled tail of a tabulated potential.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TailFit {
    /// Fitted rate `a` in `|V| ~ exp(-a x)`.
    pub exp_rate: f64,
    pub exp_residual: f64,
    /// Fitted power `p` in `|V| ~ x^-p`.
    pub power: f64,
    pub power_residual: f64,
    /// Moment class suggested by the better fit (a heuristic, not a proof).
    pub suggested: String,
}

fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let res = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / n;
    (slope, res.sqrt())
}

/// Fit the last 30% of nonzero samples against exponential and power decay.
pub fn fit_tail(grid: &[f64], values: &[CMat]) -> Option<TailFit> {
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(values)
        .map(|(x, v)| (*x, max_abs(v)))
        .filter(|(x, v)| *x > 0.0 && *v > 0.0)
        .collect();
    if pts.len() < 5 {
        return None;
    }
    let start = pts.len() - (pts.len() * 3 / 10).max(5);
    let tail = &pts[start..];
    let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let lx: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let (se, re) = line_fit(&xs, &ly);
    let (sp, rp) = line_fit(&lx, &ly);
    let suggested = if re <= rp && -se > 0.0 {
        "L1_3".to_string()
    } else if -sp > 4.0 {
        "L1_3".into()
    } else if -sp > 3.0 {
        "L1_2".into()
    } else if -sp > 2.0 {
        "L1_1".into()
    } else {
        "L1".into()
    };
    Some(TailFit {
        exp_rate: -se,
        exp_residual: re,
        power: -sp,
        power_residual: rp,
        suggested,
    })
}

/// Largest relative Hermiticity residual of `V` on `count` deterministic
/// pseudo-random points in `[0, xmax]`.
pub fn hermiticity_check(v: &Potential, xmax: f64, count: usize) -> f64 {
    let mut worst = 0.0_f64;
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for _ in 0..count {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let x = xmax * (state >> 11) as f64 / (1u64 << 53) as f64;
        worst = worst.max(linalg::herm_residual(&v.eval(x)));
    }
    worst
}

/// Numerically integrated moment `int_0^X (1+x)^eps |V(x)| dx`.
pub fn moment_integral(v: &Potential, eps: f64, xmax: f64) -> f64 {
    let opts = quad::QuadOptions {
        rtol: 1e-8,
        atol: 1e-14,
        max_intervals: 4000,
    };
    // Split geometrically so slowly decaying tails are resolved.
    let mut total = 0.0;
    let mut a = 0.0;
    let mut b = 1.0_f64.min(xmax);
    while a < xmax {
        total += quad::integrate_real(|x| (1.0 + x).powf(eps) * max_abs(&v.eval(x)), a, b, opts).unwrap_or(f64::NAN);
        a = b;
        b = (2.0 * b).min(xmax);
    }
    total
}

/// Validated boundary pair `(A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPair {
    pub a: CMat,
    pub b: CMat,
    /// Eigenvalues of `A^dagger A + B^dagger B`, increasing.
    pub gram_eigenvalues: Vec<f64>,
}

impl BoundaryPair {
    pub fn min_eigenvalue(&self) -> f64 {
        self.gram_eigenvalues[0]
    }

    /// The pair `(A T, B T)`.
    pub fn gauge(&self, t: &CMat) -> Result<BoundaryPair> {
        validate_boundary(&self.a * t, &self.b * t)
    }
}

/// Check `-B^dagger A + A^dagger B = 0` and `A^dagger A + B^dagger B > 0`.
pub fn validate_boundary(a: CMat, b: CMat) -> Result<BoundaryPair> {
    validate_boundary_tol(a, b, crate::linalg::TAU_LIN, crate::linalg::TAU_POS)
}

pub fn validate_boundary_tol(a: CMat, b: CMat, tau_lin: f64, tau_pos: f64) -> Result<BoundaryPair> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(ProblemError::Dimension(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if !linalg::is_finite(&a) || !linalg::is_finite(&b) {
        return Err(ProblemError::InvalidParameter("boundary matrices must be finite".into()));
    }
    let sym = -b.adjoint() * &a + a.adjoint() * &b;
    let scale = (max_abs(&a) * max_abs(&b)).max(1.0);
    let r = max_abs(&sym) / scale;
    if r > tau_lin {
        return Err(ProblemError::NonSelfadjointBoundary(r));
    }
    let gram = a.adjoint() * &a + b.adjoint() * &b;
    let (vals, _) = linalg::herm_eigen(&gram);
    let gscale = max_abs(&gram);
    if gscale == 0.0 || vals[0] <= tau_pos * gscale {
        return Err(ProblemError::DegenerateBoundary(vals[0]));
    }
    Ok(BoundaryPair {
        a,
        b,
        gram_eigenvalues: vals,
    })
}

/// A complete half-line problem: potential, boundary pair and numerical settings.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub n: usize,
    pub potential: Potential,
    pub boundary: BoundaryPair,
    pub settings: Settings,
}

impl ProblemSpec {
    pub fn new(potential: Potential, boundary: BoundaryPair) -> Result<Self> {
        let n = potential.dim();
        if boundary.a.nrows() != n {
            return Err(ProblemError::Dimension(format!(
                "potential is {n}x{n} but boundary matrices are {}x{}",
                boundary.a.nrows(),
                boundary.a.nrows()
            )));
        }
        Ok(ProblemSpec {
            n,
            potential,
            boundary,
            settings: Settings::default(),
        })
    }

    pub fn with_settings(mut self, settings: Settings) -> Self {
        self.settings = settings;
        self
    }

    pub fn a(&self) -> &CMat {
        &self.boundary.a
    }

    pub fn b(&self) -> &CMat {
        &self.boundary.b
    }

    /// Same potential with boundary pair `(A T, B T)`.
    pub fn gauge(&self, t: &CMat) -> Result<Self> {
        Ok(ProblemSpec {
            boundary: self.boundary.gauge(t)?,
            ..self.clone()
        })
    }

    /// Parse a problem file.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| ProblemError::Syntax {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| schema("$", "expected an object"))?;
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| schema("$.n", "expected a positive integer"))? as usize;
        if n == 0 || n > 64 {
            return Err(schema("$.n", "channel count must be between 1 and 64"));
        }
        let pv = obj.get("potential").ok_or_else(|| schema("$.potential", "missing"))?;
        let source = parse_potential_source(pv, "$.potential", n)?;
        let potential = build_potential(&source, n)?;
        if potential.dim() != n {
            return Err(ProblemError::Dimension(format!(
                "potential is {}x{} but n = {n}",
                potential.dim(),
                potential.dim()
            )));
        }
        let bv = obj
            .get("boundary")
            .and_then(Value::as_object)
            .ok_or_else(|| schema("$.boundary", "expected an object with A and B"))?;
        let a = parse_cmatrix(bv.get("A").ok_or_else(|| schema("$.boundary.A", "missing"))?, "$.boundary.A")?;
        let b = parse_cmatrix(bv.get("B").ok_or_else(|| schema("$.boundary.B", "missing"))?, "$.boundary.B")?;
        if a.nrows() != n || b.nrows() != n {
            return Err(ProblemError::Dimension(format!("boundary matrices must be {n}x{n}")));
        }
        let boundary = validate_boundary(a, b)?;
        ProblemSpec::new(potential, boundary)
    }

    /// Serialize; potentials without a file description are sampled on `grid`.
    pub fn to_json(&self, grid: &[f64]) -> Value {
        let pot = match self.potential.source() {
            Some(src) => source_to_json(&src),
            None => {
                let mats: Vec<CMat> = grid.iter().map(|&x| self.potential.eval(x)).collect();
                source_to_json(&PotentialSource::Tabulated {
                    grid: grid.to_vec(),
                    matrices: mats,
                    interpolation: Interpolation::Cubic,
                })
            }
        };
        json!({
            "n": self.n,
            "potential": pot,
            "boundary": {"A": cmatrix_to_json(self.a()), "B": cmatrix_to_json(self.b())},
        })
    }
}

fn schema(path: &str, msg: &str) -> ProblemError {
    ProblemError::Schema {
        path: path.to_string(),
        msg: msg.to_string(),
    }
}

fn parse_complex(v: &Value, path: &str) -> Result<C64> {
    if let Some(x) = v.as_f64() {
        return Ok(c64(x, 0.0));
    }
    match v.as_array() {
        Some(p) if p.len() == 2 => {
            let re = p[0].as_f64().ok_or_else(|| schema(path, "real part must be a number"))?;
            let im = p[1].as_f64().ok_or_else(|| schema(path, "imaginary part must be a number"))?;
            Ok(c64(re, im))
        }
        _ => Err(schema(path, "expected a number or a [re, im] pair")),
    }
}

/// Parse a square complex matrix given as rows of `[re, im]` pairs.
pub fn parse_cmatrix(v: &Value, path: &str) -> Result<CMat> {
    let rows = v.as_array().ok_or_else(|| schema(path, "expected an array of rows"))?;
    let n = rows.len();
    if n == 0 {
        return Err(schema(path, "matrix is empty"));
    }
    let mut m = CMat::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let cols = row.as_array().ok_or_else(|| schema(&rp, "expected a row array"))?;
        if cols.len() != n {
            return Err(schema(&rp, "matrix must be square"));
        }
        for (j, e) in cols.iter().enumerate() {
            m[(i, j)] = parse_complex(e, &format!("{rp}[{j}]"))?;
        }
    }
    Ok(m)
}

pub fn cmatrix_to_json(m: &CMat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| {
                Value::Array(
                    (0..m.ncols())
                        .map(|j| json!([m[(i, j)].re, m[(i, j)].im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

fn parse_potential_source(v: &Value, path: &str, n: usize) -> Result<PotentialSource> {
    let obj = v.as_object().ok_or_else(|| schema(path, "expected an object"))?;
    if let Some(name) = obj.get("family") {
        let name = name
            .as_str()
            .ok_or_else(|| schema(&format!("{path}.family"), "expected a string"))?;
        let mut params = BTreeMap::new();
        if let Some(p) = obj.get("params") {
            let p = p
                .as_object()
                .ok_or_else(|| schema(&format!("{path}.params"), "expected an object"))?;
            for (k, val) in p {
                let x = val
                    .as_f64()
                    .ok_or_else(|| schema(&format!("{path}.params.{k}"), "expected a number"))?;
                params.insert(k.clone(), x);
            }
        }
        return Ok(PotentialSource::Family {
            name: name.to_string(),
            params,
        });
    }
    if let Some(t) = obj.get("tabulated") {
        let tp = format!("{path}.tabulated");
        let t = t.as_object().ok_or_else(|| schema(&tp, "expected an object"))?;
        let grid: Vec<f64> = t
            .get("grid")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(&format!("{tp}.grid"), "expected an array of numbers"))?
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.as_f64()
                    .ok_or_else(|| schema(&format!("{tp}.grid[{i}]"), "expected a number"))
            })
            .collect::<Result<_>>()?;
        let mats: Vec<CMat> = t
            .get("matrices")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(&format!("{tp}.matrices"), "expected an array of matrices"))?
            .iter()
            .enumerate()
            .map(|(i, m)| parse_cmatrix(m, &format!("{tp}.matrices[{i}]")))
            .collect::<Result<_>>()?;
        if mats.iter().any(|m| m.nrows() != n) {
            return Err(schema(&format!("{tp}.matrices"), "sample matrices must be n x n"));
        }
        let interpolation = match t.get("interpolation").and_then(Value::as_str) {
            None | Some("cubic") => Interpolation::Cubic,
            Some("linear") => Interpolation::Linear,
            Some(other) => {
                return Err(schema(
                    &format!("{tp}.interpolation"),
                    &format!("unknown interpolation '{other}' (linear|cubic)"),
                ))
            }
        };
        return Ok(PotentialSource::Tabulated {
            grid,
            matrices: mats,
            interpolation,
        });
    }
    if let Some(c) = obj.get("combine") {
        let cp = format!("{path}.combine");
        let c = c.as_object().ok_or_else(|| schema(&cp, "expected an object"))?;
        let v1 = parse_potential_source(c.get("v1").ok_or_else(|| schema(&format!("{cp}.v1"), "missing"))?, &format!("{cp}.v1"), 1)?;
        let v2 = parse_potential_source(c.get("v2").ok_or_else(|| schema(&format!("{cp}.v2"), "missing"))?, &format!("{cp}.v2"), 1)?;
        let mode = if let Some(u) = c.get("unitary") {
            CombineSpec::Unitary(parse_cmatrix(u, &format!("{cp}.unitary"))?)
        } else {
            match c.get("mode").and_then(Value::as_str) {
                None | Some("real") => CombineSpec::Mode(CombineMode::Real),
                Some("complex") => CombineSpec::Mode(CombineMode::Complex),
                Some(other) => {
                    return Err(schema(
                        &format!("{cp}.mode"),
                        &format!("unknown mode '{other}' (real|complex)"),
                    ))
                }
            }
        };
        return Ok(PotentialSource::Combine {
            v1: Box::new(v1),
            v2: Box::new(v2),
            mode,
        });
    }
    Err(schema(path, "expected one of 'family', 'tabulated' or 'combine'"))
}

fn param(params: &BTreeMap<String, f64>, name: &str, family: &str) -> Result<f64> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| ProblemError::InvalidParameter(format!("family '{family}' needs parameter '{name}'")))
}

/// Construct the potential a source describes.
pub fn build_potential(src: &PotentialSource, n: usize) -> Result<Potential> {
    match src {
        PotentialSource::Family { name, params } => match name.as_str() {
            "zero" => Ok(zero_potential(n)),
            "exponential" => {
                if n != 1 {
                    return Err(ProblemError::Dimension("the exponential family is scalar; use combine".into()));
                }
                family_exponential(
                    param(params, "alpha", name)?,
                    param(params, "epsilon", name)?,
                    param(params, "beta", name)?,
                )
            }
            "inverse_square" => {
                if n != 1 {
                    return Err(ProblemError::Dimension("the inverse_square family is scalar; use combine".into()));
                }
                family_inverse_square(param(params, "a", name)?)
            }
            other => Err(ProblemError::InvalidParameter(format!(
                "unknown family '{other}' (zero|exponential|inverse_square)"
            ))),
        },
        PotentialSource::Tabulated {
            grid,
            matrices,
            interpolation,
        } => tabulated_potential(grid.clone(), matrices.clone(), *interpolation),
        PotentialSource::Combine { v1, v2, mode } => {
            if n != 2 {
                return Err(ProblemError::Dimension("combine produces a 2x2 potential".into()));
            }
            let p1 = build_potential(v1, 1)?;
            let p2 = build_potential(v2, 1)?;
            match mode {
                CombineSpec::Mode(m) => combine_scalar_to_matrix(p1, p2, *m),
                CombineSpec::Unitary(u) => combine_with_unitary(p1, p2, u.clone()),
            }
        }
    }
}

pub fn source_to_json(src: &PotentialSource) -> Value {
    match src {
        PotentialSource::Family { name, params } => {
            if params.is_empty() {
                json!({"family": name})
            } else {
                json!({"family": name, "params": params})
            }
        }
        PotentialSource::Tabulated {
            grid,
            matrices,
            interpolation,
        } => json!({"tabulated": {
            "grid": grid,
            "matrices": matrices.iter().map(cmatrix_to_json).collect::<Vec<_>>(),
            "interpolation": match interpolation { Interpolation::Linear => "linear", Interpolation::Cubic => "cubic" },
        }}),
        PotentialSource::Combine { v1, v2, mode } => {
            let mut m = serde_json::Map::new();
            m.insert("v1".into(), source_to_json(v1));
            m.insert("v2".into(), source_to_json(v2));
            match mode {
                CombineSpec::Mode(CombineMode::Real) => {
                    m.insert("mode".into(), json!("real"));
                }
                CombineSpec::Mode(CombineMode::Complex) => {
                    m.insert("mode".into(), json!("complex"));
                }
                CombineSpec::Unitary(u) => {
                    m.insert("unitary".into(), cmatrix_to_json(u));
                }
            }
            json!({ "combine": Value::Object(m) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_mat;

    #[test]
    fn dirichlet_is_valid_and_zero_pair_is_not() {
        assert!(validate_boundary(real_mat(1, &[0.0]), real_mat(1, &[1.0])).is_ok());
        assert!(matches!(
            validate_boundary(real_mat(1, &[0.0]), real_mat(1, &[0.0])),
            Err(ProblemError::DegenerateBoundary(_))
        ));
    }

    #[test]
    fn non_selfadjoint_pair_rejected() {
        let a = real_mat(2, &[1.0, 0.0, 0.0, 1.0]);
        let b = real_mat(2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(validate_boundary(a, b), Err(ProblemError::NonSelfadjointBoundary(_))));
    }

    #[test]
    fn inverse_square_values() {
        let v = family_inverse_square(1.0).unwrap();
        assert!((v.eval(0.0)[(0, 0)].re - 2.0).abs() < 1e-15);
        assert!((v.eval(1.0)[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!(family_inverse_square(0.0).is_err());
    }

    #[test]
    fn tail_cutoff_exponential() {
        let t = Tail::Exponential { c: 2.0, rate: 1.0 };
        let x = t.cutoff(1e-12);
        assert!((t.integral_from(x) - 1e-12).abs() < 1e-15);
    }

    #[test]
    fn single_sample_is_zero() {
        let v = tabulated_potential(vec![0.0], vec![CMat::zeros(2, 2)], Interpolation::Cubic).unwrap();
        assert_eq!(max_abs(&v.eval(0.5)), 0.0);
    }

    #[test]
    fn decreasing_grid_rejected() {
        let r = tabulated_potential(vec![0.0, 1.0, 0.5], vec![CMat::zeros(1, 1); 3], Interpolation::Linear);
        assert!(matches!(r, Err(ProblemError::InvalidGrid(_))));
    }
}

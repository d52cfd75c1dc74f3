//! Spectral surgery: removing or adding a bound state, and lowering or
//! raising the multiplicity of an existing one.
//!
//! Every transformation is a finite-rank Gel'fand-Levitan perturbation, so
//! the perturbed potential and solutions follow in closed form from a matrix
//! bridge solution `Y` of the unperturbed equation at `k = i kappa` and its
//! Gram function `G`:
//!
//! * remove / lower (`s = +1`): `Y = phi(i kappa, .) C`, `G(x) = int_x^inf Y^dagger Y`;
//! * add / raise (`s = -1`): `Y = phi(i kappa, .) C~`, `G(x) = Q~ + int_0^x Y^dagger Y`.
//!
//! Then `V~ = V + 2 s (Y G^+ Y^dagger)'` and the boundary pair becomes
//! `(A, B + s A C^2 A^dagger A)`. The bridge is stored in the scaled form
//! `Y^ = e^{s kappa x} Y`, `G^ = e^{2 s kappa x} G` so that nothing grows or
//! decays exponentially, and the derivative in `V~` is taken analytically.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::io::{cmatrix_to_json, complex_to_json, csv_table, matrix_columns, matrix_row};
use crate::linalg::{self, c64, eye, max_abs, CMat, HermMatrix, LinalgError, OrthProjection, C64};
use crate::ode::{self, OdeOptions};
use crate::problem::{self, MomentClass, Potential, PotentialFn, ProblemError, ProblemSpec, Tail};
use crate::quad;
use crate::spectral::{self, BoundState, SpectralError, SpectrumReport};
use crate::wave::{self, JostSlice, RegularSlice, WaveError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurgeryError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("no bound state at kappa = {0}")]
    NoSuchState(f64),
    #[error("kappa = {kappa} collides with the existing bound state at kappa = {existing}")]
    Collision { kappa: f64, existing: f64 },
    #[error("invalid subprojection: {0}")]
    InvalidSubprojection(String),
    #[error("projection overlap: {0}")]
    ProjectionOverlap(String),
    #[error("invalid normalization: {0}")]
    InvalidNormalization(String),
    #[error("Gram function has rank {rank} at x = {x}, expected {expected}")]
    KernelDegeneracy { rank: usize, expected: usize, x: f64 },
    #[error("expected a rank-one 2x2 projection, got rank {rank} in dimension {dim}")]
    InvalidRank { rank: usize, dim: usize },
    #[error("invalid plan at {path}: {msg}")]
    Plan { path: String, msg: String },
    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<SurgeryError>,
    },
}

impl SurgeryError {
    /// The innermost error, looking through step wrappers.
    pub fn root(&self) -> &SurgeryError {
        match self {
            SurgeryError::Step { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, SurgeryError>;

// ---------------------------------------------------------------------------
// Plans

/// How the normalization of an added bound state is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum AddNormalization {
    /// The Gel'fand-Levitan normalization `C~` itself.
    Direct(HermMatrix),
    /// A projection `Q~` with a Gram-type matrix `G~`; `C~ = (I - Q~ + G~)^{-1/2} Q~`.
    FromGram { q: OrthProjection, g: HermMatrix },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurgeryPlan {
    Remove { kappa: f64 },
    Lower { kappa: f64, q_r: OrthProjection },
    Add { kappa: f64, normalization: AddNormalization },
    Raise { kappa: f64, q_i: OrthProjection, g_i: HermMatrix },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Remove,
    Lower,
    Add,
    Raise,
}

impl Operation {
    /// `+1` for the operations that take states away, `-1` for those that add.
    pub fn sign(self) -> f64 {
        match self {
            Operation::Remove | Operation::Lower => 1.0,
            Operation::Add | Operation::Raise => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Operation::Remove => "remove",
            Operation::Lower => "lower",
            Operation::Add => "add",
            Operation::Raise => "raise",
        }
    }
}

fn plan_err(path: &str, msg: impl Into<String>) -> SurgeryError {
    SurgeryError::Plan {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn plan_matrix(v: Option<&Value>, path: &str) -> Result<CMat> {
    let v = v.ok_or_else(|| plan_err(path, "missing"))?;
    if let Some(x) = v.as_f64() {
        return Ok(CMat::from_element(1, 1, c64(x, 0.0)));
    }
    problem::parse_cmatrix(v, path).map_err(|e| match e {
        ProblemError::Schema { path, msg } => SurgeryError::Plan { path, msg },
        other => plan_err(path, other.to_string()),
    })
}

fn plan_projection(v: Option<&Value>, path: &str) -> Result<OrthProjection> {
    let m = plan_matrix(v, path)?;
    OrthProjection::new(m).map_err(|e| plan_err(path, e.to_string()))
}

fn plan_herm(v: Option<&Value>, path: &str) -> Result<HermMatrix> {
    let m = plan_matrix(v, path)?;
    HermMatrix::with_tol(m, 1e-9).map_err(|e| plan_err(path, e.to_string()))
}

impl SurgeryPlan {
    pub fn operation(&self) -> Operation {
        match self {
            SurgeryPlan::Remove { .. } => Operation::Remove,
            SurgeryPlan::Lower { .. } => Operation::Lower,
            SurgeryPlan::Add { .. } => Operation::Add,
            SurgeryPlan::Raise { .. } => Operation::Raise,
        }
    }

    pub fn kappa(&self) -> f64 {
        match self {
            SurgeryPlan::Remove { kappa }
            | SurgeryPlan::Lower { kappa, .. }
            | SurgeryPlan::Add { kappa, .. }
            | SurgeryPlan::Raise { kappa, .. } => *kappa,
        }
    }

    /// Parse one plan object; `path` prefixes error locations.
    pub fn from_json(v: &Value, path: &str) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| plan_err(path, "expected an object"))?;
        let op = obj
            .get("op")
            .and_then(Value::as_str)
            .ok_or_else(|| plan_err(&format!("{path}.op"), "expected one of remove, lower, add, raise"))?;
        let kappa = obj
            .get("kappa")
            .and_then(Value::as_f64)
            .ok_or_else(|| plan_err(&format!("{path}.kappa"), "expected a number"))?;
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(plan_err(&format!("{path}.kappa"), "kappa must be positive and finite"));
        }
        match op {
            "remove" => Ok(SurgeryPlan::Remove { kappa }),
            "lower" => Ok(SurgeryPlan::Lower {
                kappa,
                q_r: plan_projection(obj.get("Q_r"), &format!("{path}.Q_r"))?,
            }),
            "add" => {
                let normalization = if obj.contains_key("C") {
                    AddNormalization::Direct(plan_herm(obj.get("C"), &format!("{path}.C"))?)
                } else if obj.contains_key("Q") {
                    AddNormalization::FromGram {
                        q: plan_projection(obj.get("Q"), &format!("{path}.Q"))?,
                        g: plan_herm(obj.get("G"), &format!("{path}.G"))?,
                    }
                } else {
                    return Err(plan_err(path, "add needs either C or the pair Q, G"));
                };
                Ok(SurgeryPlan::Add { kappa, normalization })
            }
            "raise" => Ok(SurgeryPlan::Raise {
                kappa,
                q_i: plan_projection(obj.get("Q"), &format!("{path}.Q"))?,
                g_i: plan_herm(obj.get("G"), &format!("{path}.G"))?,
            }),
            other => Err(plan_err(
                &format!("{path}.op"),
                format!("unknown operation '{other}' (remove|lower|add|raise)"),
            )),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            SurgeryPlan::Remove { kappa } => json!({"op": "remove", "kappa": kappa}),
            SurgeryPlan::Lower { kappa, q_r } => {
                json!({"op": "lower", "kappa": kappa, "Q_r": cmatrix_to_json(q_r.matrix())})
            }
            SurgeryPlan::Add { kappa, normalization } => match normalization {
                AddNormalization::Direct(c) => json!({"op": "add", "kappa": kappa, "C": cmatrix_to_json(c.matrix())}),
                AddNormalization::FromGram { q, g } => json!({
                    "op": "add", "kappa": kappa,
                    "Q": cmatrix_to_json(q.matrix()), "G": cmatrix_to_json(g.matrix()),
                }),
            },
            SurgeryPlan::Raise { kappa, q_i, g_i } => json!({
                "op": "raise", "kappa": kappa,
                "Q": cmatrix_to_json(q_i.matrix()), "G": cmatrix_to_json(g_i.matrix()),
            }),
        }
    }
}

/// Parse a plan file: a single plan object, an array of plans, or an object
/// with a `steps` array.
pub fn parse_plans(text: &str) -> Result<Vec<SurgeryPlan>> {
    let v: Value = serde_json::from_str(text).map_err(|e| {
        plan_err(
            &format!("line {}, column {}", e.line(), e.column()),
            format!("JSON syntax error: {e}"),
        )
    })?;
    let (items, prefix) = match &v {
        Value::Array(a) => (a.as_slice(), "$"),
        Value::Object(o) if o.contains_key("steps") => match o.get("steps") {
            Some(Value::Array(a)) => (a.as_slice(), "$.steps"),
            _ => return Err(plan_err("$.steps", "expected an array")),
        },
        Value::Object(_) => return Ok(vec![SurgeryPlan::from_json(&v, "$")?]),
        _ => return Err(plan_err("$", "expected a plan object or an array of plans")),
    };
    items
        .iter()
        .enumerate()
        .map(|(i, p)| SurgeryPlan::from_json(p, &format!("{prefix}[{i}]")))
        .collect()
}

// ---------------------------------------------------------------------------
// Bridges

#[derive(Clone)]
enum BridgeSource {
    /// `Y^ = m K C` from the scaled Jost solution `m = e^{kappa x} f(i kappa, x)`.
    Decaying { slice: Arc<JostSlice>, kc: CMat },
    /// `Y^ = psi C~` from the scaled regular solution `psi = e^{-kappa x} phi(i kappa, x)`.
    Growing { slice: Arc<RegularSlice>, c: CMat, q: CMat },
}

/// The separable-kernel data of one transformation.
#[derive(Clone)]
pub struct Bridge {
    pub kappa: f64,
    /// `+1` for remove/lower, `-1` for add/raise.
    pub sign: f64,
    pub rank: usize,
    /// Orthonormal basis of the (x-independent) range of `G`.
    basis: CMat,
    source: BridgeSource,
}

struct Kernel {
    y: CMat,
    z: CMat,
    ginv: CMat,
    pi: CMat,
}

impl Bridge {
    fn decaying(kappa: f64, slice: Arc<JostSlice>, kc: CMat, basis: CMat) -> Self {
        Bridge {
            kappa,
            sign: 1.0,
            rank: basis.ncols(),
            basis,
            source: BridgeSource::Decaying { slice, kc },
        }
    }

    fn growing(kappa: f64, slice: Arc<RegularSlice>, c: CMat, q: &OrthProjection) -> Self {
        Bridge {
            kappa,
            sign: -1.0,
            rank: q.rank(),
            basis: q.basis(),
            source: BridgeSource::Growing {
                slice,
                c,
                q: q.matrix().clone(),
            },
        }
    }

    /// Right end of the range where the bridge is backed by integrated data;
    /// the growing bridge is held at its last value beyond this point.
    pub fn extent(&self) -> f64 {
        match &self.source {
            BridgeSource::Decaying { .. } => f64::INFINITY,
            BridgeSource::Growing { slice, .. } => slice.x_max,
        }
    }

    /// Scaled `(Y^, Y^', G^)`.
    pub fn scaled(&self, x: f64) -> (CMat, CMat, CMat) {
        match &self.source {
            BridgeSource::Decaying { slice, kc } => {
                let (m, mp) = slice.scaled(x);
                let fg = slice.gram_scaled(x).expect("decaying bridge slices carry their Gram integral");
                let g = kc.adjoint() * fg * kc;
                (m * kc, mp * kc, linalg::hermitize(&g))
            }
            BridgeSource::Growing { slice, c, q } => {
                let (p, pp) = slice.scaled(x);
                let e = slice.gram_scaled(x).expect("growing bridge slices carry their Gram integral");
                let g = q * c64((-2.0 * self.kappa * x).exp(), 0.0) + c * e * c;
                (p * c, pp * c, linalg::hermitize(&g))
            }
        }
    }

    fn kernel(&self, x: f64) -> Kernel {
        let (y, yp, g) = self.scaled(x);
        let z = yp - &y * c64(self.sign * self.kappa, 0.0);
        let ginv = linalg::range_inverse(&g, &self.basis)
            .or_else(|_| linalg::pinv(&g, 1e-13))
            .unwrap_or_else(|_| CMat::zeros(g.nrows(), g.ncols()));
        let pi = &y * &ginv * y.adjoint();
        Kernel { y, z, ginv, pi }
    }

    /// `V~(x) - V(x)`.
    pub fn increment(&self, x: f64) -> CMat {
        let k = self.kernel(x);
        let t = &k.z * &k.ginv * k.y.adjoint();
        let d = &t + t.adjoint() + &k.pi * &k.pi * c64(self.sign, 0.0);
        linalg::hermitize(&d) * c64(2.0 * self.sign, 0.0)
    }

    /// Apply the transformation kernel to a solution `u` (with derivative
    /// `up`) of the unperturbed equation at `k`:
    /// `u + s/(k^2+kappa^2) Y^ G^+ (Z^dagger u - Y^dagger u')`, where
    /// `Z = Y^' - s kappa Y^`. The Wronskian boundary term at `x = 0`
    /// vanishes because `(A, B)` is selfadjoint.
    pub fn bracket(&self, k: C64, x: f64, u: &CMat, up: &CMat) -> (CMat, CMat) {
        let kn = self.kernel(x);
        let s = self.sign;
        let w = c64(s, 0.0) / (k * k + self.kappa * self.kappa);
        let uh = kn.z.adjoint() * u - kn.y.adjoint() * up;
        let yg = &kn.y * &kn.ginv;
        let value = u + &yg * &uh * w;
        let dcoef = &kn.z * &kn.ginv + &kn.pi * &yg * c64(s, 0.0);
        let deriv = up + dcoef * &uh * w + &kn.pi * u * c64(s, 0.0);
        (value, deriv)
    }

    /// Unscaled bridge solution `Y(x)` (`Phi` or `xi`).
    pub fn solution(&self, x: f64) -> CMat {
        let (y, _, _) = self.scaled(x);
        y * c64((-self.sign * self.kappa * x).exp(), 0.0)
    }

    /// Unscaled Gram function `G(x)` (`W` or `Omega`).
    pub fn gram(&self, x: f64) -> CMat {
        let (_, _, g) = self.scaled(x);
        g * c64((-2.0 * self.sign * self.kappa * x).exp(), 0.0)
    }

    /// Numerical rank of `G^(x)`.
    pub fn gram_rank(&self, x: f64, rank_tol: f64) -> usize {
        let (_, _, g) = self.scaled(x);
        match linalg::svd_sorted(&g) {
            Ok(svd) => {
                let smax = svd.s.first().copied().unwrap_or(0.0);
                svd.s.iter().filter(|&&v| v > rank_tol * smax && smax > 0.0).count()
            }
            Err(_) => 0,
        }
    }

    /// Initial data `(a, b)` for the scalar Riccati form of an add/raise
    /// increment: `a = phi'/phi - kappa` and `b = xi^2/Omega - 2 kappa`.
    fn riccati_start(&self, x: f64) -> Option<(C64, C64)> {
        match &self.source {
            BridgeSource::Growing { slice, .. } if slice.n == 1 => {
                let (p, pp) = slice.scaled(x);
                let psi = p[(0, 0)];
                if psi.norm() < 1e-8 {
                    return None;
                }
                let kn = self.kernel(x);
                Some((pp[(0, 0)] / psi, kn.pi[(0, 0)] - 2.0 * self.kappa))
            }
            _ => None,
        }
    }
}

/// `I + s 2 i kappa/(k - s i kappa) P`: the factor relating perturbed and
/// unperturbed Jost matrices and Jost solutions.
#[derive(Debug, Clone)]
pub struct JostFactor {
    pub kappa: f64,
    pub sign: f64,
    pub p: CMat,
    pub rank: usize,
}

impl JostFactor {
    pub fn eval(&self, k: C64) -> CMat {
        let ik = C64::i() * self.kappa;
        let coef = ik * (2.0 * self.sign) / (k - ik * self.sign);
        eye(self.p.nrows()) + &self.p * coef
    }

    /// `det` of the factor: `((k + s i kappa)/(k - s i kappa))^rank`.
    pub fn det_factor(&self, k: C64) -> C64 {
        let ik = C64::i() * self.kappa;
        ((k + ik * self.sign) / (k - ik * self.sign)).powi(self.rank as i32)
    }

    fn near(&self, k: C64, guard: f64) -> bool {
        let ik = C64::i() * self.kappa;
        (k - ik).norm() < guard || (k + ik).norm() < guard
    }
}

const CIRCLE_POINTS: usize = 8;

/// Points on a small circle around `k`, used to evaluate functions with a
/// removable singularity at `k` by the mean-value property.
fn circle(k: C64, radius: f64) -> Vec<C64> {
    (0..CIRCLE_POINTS)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / CIRCLE_POINTS as f64;
            k + C64::from_polar(radius, t)
        })
        .collect()
}

fn average(ms: Vec<CMat>) -> CMat {
    let n = ms.len() as f64;
    let mut it = ms.into_iter();
    let first = it.next().expect("nonempty average");
    it.fold(first, |acc, m| acc + m) * c64(1.0 / n, 0.0)
}

// ---------------------------------------------------------------------------
// The perturbed potential

/// Perturbed potential `V~ = V + increment`, with the perturbed Jost solution
/// as its exact asymptotic data whenever the unperturbed potential has one.
pub struct SurgeryPotential {
    base: Potential,
    bridge: Arc<Bridge>,
    factor: JostFactor,
    class: MomentClass,
    tail: Tail,
    guard: f64,
    label: String,
}

impl SurgeryPotential {
    fn oracle_direct(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        let (f, fp) = self.base.jost_oracle(k, x)?;
        let (b, bp) = self.bridge.bracket(k, x, &f, &fp);
        let r = self.factor.eval(k);
        Some((b * &r, bp * &r))
    }

    pub fn bridge(&self) -> &Bridge {
        &self.bridge
    }

    pub fn base(&self) -> &Potential {
        &self.base
    }
}

impl PotentialFn for SurgeryPotential {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, x: f64) -> CMat {
        self.base.eval(x) + self.bridge.increment(x)
    }
    fn class(&self) -> MomentClass {
        self.class
    }
    fn tail(&self) -> Tail {
        self.tail.clone()
    }
    fn jost_oracle(&self, k: C64, x: f64) -> Option<(CMat, CMat)> {
        if !self.factor.near(k, self.guard) {
            return self.oracle_direct(k, x);
        }
        let mut fs = Vec::with_capacity(CIRCLE_POINTS);
        let mut ds = Vec::with_capacity(CIRCLE_POINTS);
        for kk in circle(k, 2.0 * self.guard) {
            let (f, d) = self.oracle_direct(kk, x)?;
            fs.push(f);
            ds.push(d);
        }
        Some((average(fs), average(ds)))
    }
    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Decay rate of an exponential tail envelope (infinite for compact support).
fn tail_rate(t: &Tail) -> Option<f64> {
    match t {
        Tail::Exponential { rate, .. } | Tail::ExpPoly { rate, .. } => Some(*rate),
        Tail::Compact { .. } => Some(f64::INFINITY),
        Tail::Power { .. } => None,
        Tail::Sum(parts) => parts
            .iter()
            .map(tail_rate)
            .try_fold(f64::INFINITY, |acc, r| r.map(|r| acc.min(r))),
    }
}

fn compact_end(t: &Tail) -> Option<f64> {
    match t {
        Tail::Compact { x0 } => Some(*x0),
        Tail::Sum(parts) => parts
            .iter()
            .map(compact_end)
            .try_fold(0.0_f64, |acc, r| r.map(|r| acc.max(r))),
        _ => None,
    }
}

/// Envelope for the potential increment, with the constant fitted to samples.
fn increment_tail(base: &Potential, bridge: &Bridge) -> Tail {
    let bt = base.tail();
    if bridge.sign > 0.0 {
        if let Some(x0) = compact_end(&bt) {
            return Tail::Compact { x0 };
        }
    }
    match tail_rate(&bt) {
        Some(alpha) => {
            let rate = if bridge.sign > 0.0 {
                alpha
            } else {
                alpha.min(2.0 * bridge.kappa)
            };
            let xmax = (30.0 / rate).min(bridge.extent()).max(1.0);
            let mut c = 0.0_f64;
            for i in 0..=60 {
                let x = xmax * i as f64 / 60.0;
                let env = (1.0 + x).powi(2) * (-rate * x).exp();
                c = c.max(max_abs(&bridge.increment(x)) / env);
            }
            Tail::ExpPoly {
                c: (4.0 * c).max(1e-300),
                rate,
                degree: 2,
            }
        }
        None => bt,
    }
}

/// Where to stop integrating the growing bridge: well past the point where
/// the unperturbed potential is negligible and the scaled bridge has settled.
fn bridge_extent(spec: &ProblemSpec, kappa: f64) -> f64 {
    let cut = spec.potential.tail().cutoff(spec.settings.tail_tol);
    if !cut.is_finite() {
        return 400.0;
    }
    (cut.max(spec.settings.oracle_start) + 10.0 + 20.0 / kappa).min(400.0)
}

/// Jost slice at `i kappa` covering the whole bridge extent. Past the end of
/// a slice the Gram tail needs a quadrature per evaluation, which is far too
/// slow inside the right-hand side of later integrations.
fn decaying_slice(spec: &ProblemSpec, state: &BoundState) -> Result<Arc<JostSlice>> {
    let cover = bridge_extent(spec, state.kappa);
    if state.jost_slice.x_inf() >= cover {
        return Ok(state.jost_slice.clone());
    }
    Ok(Arc::new(wave::solve_jost_with_gram(spec, c64(0.0, state.kappa), cover)?))
}

fn bridge_ode_options() -> OdeOptions {
    OdeOptions {
        rtol: 1e-12,
        atol: 1e-14,
        ..Default::default()
    }
}

// ---------------------------------------------------------------------------
// Results

/// One applied transformation.
#[derive(Clone)]
pub struct SurgeryStep {
    pub plan: SurgeryPlan,
    pub operation: Operation,
    pub kappa: f64,
    /// Number of bound states removed or added, counting multiplicity.
    pub rank: usize,
    /// Multiplicity of the bound state at `kappa` after the step.
    pub new_multiplicity: usize,
    pub base: ProblemSpec,
    pub perturbed: ProblemSpec,
    pub bridge: Arc<Bridge>,
    pub factor: JostFactor,
    /// `C_N`, `C_r`, `C~` or `C~_i`.
    pub normalization: CMat,
    /// The projection acted on: `Q_N`, `Q_r`, `Q~` or `Q~_i`.
    pub q: OrthProjection,
    /// Gram-type matrix and `H` of the step, when one was formed.
    pub g: Option<CMat>,
    pub h: Option<CMat>,
    /// `L = J(i kappa)/(2 kappa)` for add/raise.
    pub l_matrix: Option<CMat>,
    pub warnings: Vec<String>,
}

impl SurgeryStep {
    /// The projection `P` (or `P~`) in the Jost factor.
    pub fn projector(&self) -> &CMat {
        &self.factor.p
    }

    pub fn to_json(&self) -> Value {
        json!({
            "operation": self.operation,
            "kappa": self.kappa,
            "rank": self.rank,
            "new_multiplicity": self.new_multiplicity,
            "plan": self.plan.to_json(),
            "normalization": cmatrix_to_json(&self.normalization),
            "Q": cmatrix_to_json(self.q.matrix()),
            "P": cmatrix_to_json(&self.factor.p),
            "G": self.g.as_ref().map(cmatrix_to_json),
            "H": self.h.as_ref().map(cmatrix_to_json),
            "L": self.l_matrix.as_ref().map(cmatrix_to_json),
            "A": cmatrix_to_json(self.perturbed.a()),
            "B": cmatrix_to_json(self.perturbed.b()),
            "base": self.base.potential.describe(),
            "warnings": self.warnings,
        })
    }
}

/// A perturbed operator together with the closed-form data that produced it.
#[derive(Clone)]
pub struct TransformResult {
    pub original: ProblemSpec,
    pub steps: Vec<SurgeryStep>,
    pub perturbed_spec: ProblemSpec,
    pub warnings: Vec<String>,
}

/// One row of the determinant audit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DetAuditRow {
    pub k: f64,
    /// `det J~(k)/det J(k)` from independently integrated Jost matrices.
    pub ratio: C64,
    /// The product of the transformation laws.
    pub law: C64,
    pub rel_error: f64,
    /// Relative difference between the integrated `J~(k)` and the closure `R(k) J(k)`.
    pub closure_rel_error: f64,
}

impl DetAuditRow {
    pub fn to_json(&self) -> Value {
        json!({
            "k": self.k,
            "ratio": complex_to_json(self.ratio),
            "law": complex_to_json(self.law),
            "rel_error": self.rel_error,
            "closure_rel_error": self.closure_rel_error,
        })
    }
}

#[derive(Clone)]
enum BaseSlice {
    Regular(RegularSlice),
    Jost(JostSlice),
}

impl BaseSlice {
    fn value_deriv(&self, x: f64) -> (CMat, CMat) {
        match self {
            BaseSlice::Regular(s) => s.value_deriv(x),
            BaseSlice::Jost(s) => s.value_deriv(x),
        }
    }
}

#[derive(Clone)]
struct Branch {
    k: C64,
    base: BaseSlice,
}

/// A perturbed solution `phi~(k, .)` or `f~(k, .)` obtained by applying the
/// step kernels in order to an unperturbed solution.
#[derive(Clone)]
pub struct PerturbedSolution {
    branches: Vec<Branch>,
    steps: Vec<(Arc<Bridge>, Option<JostFactor>)>,
}

impl PerturbedSolution {
    pub fn value_deriv(&self, x: f64) -> (CMat, CMat) {
        let mut vs = Vec::with_capacity(self.branches.len());
        let mut ds = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let (mut u, mut up) = br.base.value_deriv(x);
            for (bridge, factor) in &self.steps {
                let (b, bp) = bridge.bracket(br.k, x, &u, &up);
                match factor {
                    Some(f) => {
                        let r = f.eval(br.k);
                        u = b * &r;
                        up = bp * r;
                    }
                    None => {
                        u = b;
                        up = bp;
                    }
                }
            }
            vs.push(u);
            ds.push(up);
        }
        (average(vs), average(ds))
    }

    pub fn value(&self, x: f64) -> CMat {
        self.value_deriv(x).0
    }
}

impl TransformResult {
    fn identity(spec: &ProblemSpec) -> Self {
        TransformResult {
            original: spec.clone(),
            steps: Vec::new(),
            perturbed_spec: spec.clone(),
            warnings: Vec::new(),
        }
    }

    fn guard(&self) -> f64 {
        self.original.settings.singular_guard
    }

    fn near_singular(&self, k: C64) -> bool {
        let g = self.guard();
        self.steps.iter().any(|s| s.factor.near(k, g))
    }

    /// The last step, if any.
    pub fn last(&self) -> Option<&SurgeryStep> {
        self.steps.last()
    }

    /// `P~` of the last step.
    pub fn projector(&self) -> Option<&CMat> {
        self.last().map(|s| s.projector())
    }

    /// `V~(x) - V(x)` relative to the original potential.
    pub fn potential_increment(&self, x: f64) -> CMat {
        self.perturbed_spec.potential.eval(x) - self.original.potential.eval(x)
    }

    fn jost_direct(&self, k: C64) -> Result<CMat> {
        let mut j = spectral::jost_matrix(&self.original, k)?;
        for s in &self.steps {
            j = s.factor.eval(k) * j;
        }
        Ok(j)
    }

    /// `J~(k) = R_m(k) ... R_1(k) J(k)` from the unperturbed Jost matrix.
    pub fn jost(&self, k: C64) -> Result<CMat> {
        if !self.near_singular(k) {
            return self.jost_direct(k);
        }
        let js = circle(k, 2.0 * self.guard())
            .into_iter()
            .map(|kk| self.jost_direct(kk))
            .collect::<Result<Vec<_>>>()?;
        Ok(average(js))
    }

    /// `S~(k) = -J~(-k) J~(k)^{-1}` for real `k`.
    pub fn smatrix(&self, k: f64) -> Result<CMat> {
        let jp = self.jost(c64(k, 0.0))?;
        let jm = self.jost(c64(-k, 0.0))?;
        Ok(-jm * linalg::inverse(&jp)?)
    }

    fn branches_at(&self, k: C64) -> Vec<C64> {
        if self.near_singular(k) {
            circle(k, 2.0 * self.guard())
        } else {
            vec![k]
        }
    }

    /// `phi~(k, .)` on `[0, x_max]` from the bridge closures.
    pub fn phi_tilde(&self, k: C64, x_max: f64) -> Result<PerturbedSolution> {
        let branches = self
            .branches_at(k)
            .into_iter()
            .map(|kk| {
                let s = wave::solve_regular_opts(&self.original, kk, x_max, false, &bridge_ode_options())?;
                Ok(Branch {
                    k: kk,
                    base: BaseSlice::Regular(s),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PerturbedSolution {
            branches,
            steps: self.steps.iter().map(|s| (s.bridge.clone(), None)).collect(),
        })
    }

    /// `f~(k, .)` for `Im k >= 0` from the bridge closures.
    pub fn f_tilde(&self, k: C64) -> Result<PerturbedSolution> {
        let branches = self
            .branches_at(k)
            .into_iter()
            .map(|kk| {
                let s = wave::solve_jost(&self.original, kk)?;
                Ok(Branch {
                    k: kk,
                    base: BaseSlice::Jost(s),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PerturbedSolution {
            branches,
            steps: self
                .steps
                .iter()
                .map(|s| (s.bridge.clone(), Some(s.factor.clone())))
                .collect(),
        })
    }

    /// Product of the determinant laws of all steps at `k`.
    pub fn det_law(&self, k: C64) -> C64 {
        self.steps
            .iter()
            .fold(c64(1.0, 0.0), |acc, s| acc * s.factor.det_factor(k))
    }

    /// Compare `det J~/det J` from independently integrated Jost matrices
    /// with the determinant laws, at real `k`.
    pub fn det_audit(&self, ks: &[f64]) -> Result<Vec<DetAuditRow>> {
        ks.par_iter()
            .map(|&kr| {
                let k = c64(kr, 0.0);
                let j0 = spectral::jost_matrix(&self.original, k)?;
                let j1 = spectral::jost_matrix(&self.perturbed_spec, k)?;
                let ratio = linalg::det(&j1) / linalg::det(&j0);
                let law = self.det_law(k);
                let closure = self.jost(k)?;
                Ok(DetAuditRow {
                    k: kr,
                    ratio,
                    law,
                    rel_error: (ratio - law).norm() / law.norm().max(1e-300),
                    closure_rel_error: linalg::rel_diff(&j1, &closure),
                })
            })
            .collect()
    }

    /// Largest relative difference between `phi~` from the closures and a
    /// direct integration of the perturbed equation, over the probe points.
    pub fn phi_consistency(&self, ks: &[C64], xs: &[f64]) -> Result<f64> {
        let x_max = xs.iter().copied().fold(0.0, f64::max);
        let errs = ks
            .par_iter()
            .map(|&k| {
                let closed = self.phi_tilde(k, x_max)?;
                let direct = wave::solve_regular_opts(&self.perturbed_spec, k, x_max, false, &bridge_ode_options())?;
                Ok(xs
                    .iter()
                    .map(|&x| linalg::rel_diff(&closed.value(x), &direct.value(x)))
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    }

    pub fn provenance(&self) -> Vec<Value> {
        let mut out = vec![json!({"origin": self.original.potential.describe()})];
        out.extend(self.steps.iter().enumerate().map(|(i, s)| {
            json!({"step": i, "plan": s.plan.to_json(), "kappa": s.kappa, "operation": s.operation})
        }));
        out
    }

    /// JSON summary: perturbed boundary pair, steps, sampled potentials on
    /// `x_grid`, the determinant audit and `S~` on `k_grid`.
    pub fn to_json(&self, x_grid: &[f64], k_grid: &[f64]) -> Result<Value> {
        let samples: Vec<Value> = x_grid
            .iter()
            .map(|&x| {
                json!({
                    "x": x,
                    "V": cmatrix_to_json(&self.original.potential.eval(x)),
                    "V_tilde": cmatrix_to_json(&self.perturbed_spec.potential.eval(x)),
                })
            })
            .collect();
        let audit = self.det_audit(k_grid)?;
        let smat = k_grid
            .iter()
            .map(|&k| Ok(json!({"k": k, "S_tilde": cmatrix_to_json(&self.smatrix(k)?)})))
            .collect::<Result<Vec<Value>>>()?;
        Ok(json!({
            "n": self.original.n,
            "A_tilde": cmatrix_to_json(self.perturbed_spec.a()),
            "B_tilde": cmatrix_to_json(self.perturbed_spec.b()),
            "steps": self.steps.iter().map(SurgeryStep::to_json).collect::<Vec<_>>(),
            "potential_samples": samples,
            "det_audit": audit.iter().map(DetAuditRow::to_json).collect::<Vec<_>>(),
            "smatrix": smat,
            "provenance": self.provenance(),
            "warnings": self.warnings,
        }))
    }

    /// CSV of `V` and `V~` on `x_grid`.
    pub fn potential_csv(&self, x_grid: &[f64]) -> String {
        let n = self.original.n;
        let mut header = vec!["x".to_string()];
        header.extend(matrix_columns("V", n));
        header.extend(matrix_columns("Vt", n));
        let rows: Vec<Vec<f64>> = x_grid
            .iter()
            .map(|&x| {
                let mut r = vec![x];
                r.extend(matrix_row(&self.original.potential.eval(x)));
                r.extend(matrix_row(&self.perturbed_spec.potential.eval(x)));
                r
            })
            .collect();
        csv_table(&header, &rows)
    }

    /// CSV of `S~(k)` on `k_grid`.
    pub fn smatrix_csv(&self, k_grid: &[f64]) -> Result<String> {
        let n = self.original.n;
        let mut header = vec!["k".to_string()];
        header.extend(matrix_columns("S", n));
        let rows = k_grid
            .iter()
            .map(|&k| {
                let mut r = vec![k];
                r.extend(matrix_row(&self.smatrix(k)?));
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(csv_table(&header, &rows))
    }
}

// ---------------------------------------------------------------------------
// Operations

fn find_state<'a>(report: &'a SpectrumReport, kappa: f64) -> Result<&'a BoundState> {
    report
        .state_near(kappa, 1e-4)
        .ok_or(SurgeryError::NoSuchState(kappa))
}

fn class_warnings(spec: &ProblemSpec) -> Vec<String> {
    let class = spec.potential.class();
    if !class.at_least(MomentClass::L1_1) {
        vec![format!(
            "potential class {} is below L1_1; the transformation is applied formally",
            class.label()
        )]
    } else if !class.at_least(MomentClass::L1_2) {
        vec![format!(
            "potential class {} is below L1_2; Jost closures are used without the sufficiency guarantee",
            class.label()
        )]
    } else {
        Vec::new()
    }
}

fn sub_residual(outer: &CMat, inner: &CMat) -> f64 {
    max_abs(&(outer * inner - inner)).max(max_abs(&(inner * outer - inner)))
}

/// Perturbed boundary pair `(A, B + s A C^2 A^dagger A)`.
fn perturbed_boundary(spec: &ProblemSpec, c: &CMat, sign: f64) -> Result<problem::BoundaryPair> {
    let a = spec.a();
    let b = spec.b() + a * c * c * a.adjoint() * a * c64(sign, 0.0);
    Ok(problem::validate_boundary(a.clone(), b)?)
}

fn finish(
    spec: &ProblemSpec,
    plan: SurgeryPlan,
    bridge: Bridge,
    factor: JostFactor,
    c: CMat,
    q: OrthProjection,
    extra: (Option<CMat>, Option<CMat>, Option<CMat>),
    new_multiplicity: usize,
    warnings: Vec<String>,
) -> Result<SurgeryStep> {
    let operation = plan.operation();
    let sign = operation.sign();
    let boundary = perturbed_boundary(spec, &c, sign)?;
    let bridge = Arc::new(bridge);
    let base_class = spec.potential.class();
    let class = match (sign > 0.0, base_class) {
        (false, MomentClass::CompactSupport(_)) => MomentClass::L1_3,
        _ => base_class,
    };
    let tail = Tail::Sum(vec![spec.potential.tail(), increment_tail(&spec.potential, &bridge)]);
    let label = format!(
        "{}({}, kappa={})",
        operation.label(),
        spec.potential.describe(),
        bridge.kappa
    );
    let potential = Potential::new(SurgeryPotential {
        base: spec.potential.clone(),
        bridge: bridge.clone(),
        factor: factor.clone(),
        class,
        tail,
        guard: spec.settings.singular_guard,
        label,
    });
    let perturbed = ProblemSpec::new(potential, boundary)?.with_settings(spec.settings);
    let kappa = bridge.kappa;
    Ok(SurgeryStep {
        plan,
        operation,
        kappa,
        rank: factor.rank,
        new_multiplicity,
        base: spec.clone(),
        perturbed,
        bridge,
        factor,
        normalization: c,
        q,
        g: extra.0,
        h: extra.1,
        l_matrix: extra.2,
        warnings,
    })
}

fn check_bridge_rank(bridge: &Bridge, expected: usize, rank_tol: f64) -> Result<()> {
    for &x in &[0.5, 2.0] {
        let rank = bridge.gram_rank(x, rank_tol);
        if rank != expected {
            return Err(SurgeryError::KernelDegeneracy { rank, expected, x });
        }
    }
    Ok(())
}

fn remove_step(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64, mut warnings: Vec<String>) -> Result<SurgeryStep> {
    let state = find_state(report, kappa)?;
    warnings.extend(class_warnings(spec));
    let kc = &state.k_mat * &state.c;
    let bridge = Bridge::decaying(state.kappa, decaying_slice(spec, state)?, kc, state.q.basis());
    check_bridge_rank(&bridge, state.multiplicity, spec.settings.rank_tol)?;
    let factor = JostFactor {
        kappa: state.kappa,
        sign: 1.0,
        p: state.p.matrix().clone(),
        rank: state.multiplicity,
    };
    finish(
        spec,
        SurgeryPlan::Remove { kappa: state.kappa },
        bridge,
        factor,
        state.c.clone(),
        state.q.clone(),
        (Some(state.g_mat.clone()), Some(state.h_mat.clone()), None),
        0,
        warnings,
    )
}

fn lower_step(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64, q_r: &OrthProjection) -> Result<SurgeryStep> {
    let state = find_state(report, kappa)?;
    let qn = state.q.matrix();
    let qr = q_r.matrix();
    if q_r.dim() != spec.n {
        return Err(SurgeryError::InvalidSubprojection(format!(
            "Q_r is {}x{} but the problem has n = {}",
            q_r.dim(),
            q_r.dim(),
            spec.n
        )));
    }
    let res = sub_residual(qn, qr);
    if res > 1e-6 {
        return Err(SurgeryError::InvalidSubprojection(format!(
            "Q_N Q_r = Q_r Q_N = Q_r fails (residual {res:.3e})"
        )));
    }
    let r = q_r.rank();
    if r == 0 {
        return Err(SurgeryError::InvalidSubprojection("Q_r is zero".into()));
    }
    if r >= state.multiplicity {
        let note = format!(
            "rank(Q_r) = {r} equals the multiplicity at kappa = {}; the request was carried out as a removal",
            state.kappa
        );
        return remove_step(report, spec, kappa, vec![note]);
    }
    let mut warnings = class_warnings(spec);
    let f0 = state
        .jost_slice
        .gram_scaled(0.0)
        .expect("bound-state slices carry their Gram integral");
    let k = &state.k_mat;
    let g_r = linalg::hermitize(&(qr * k.adjoint() * f0 * k * qr));
    let (h_r, c_r) = spectral::gl_normalization(state.kappa, &g_r, qr)?;
    // phi(i kappa, x) w = f(i kappa, x) K w for w in the range of Q_r, so the
    // columns of K Q_r span the range of P_r.
    let p_r = linalg::range_projector(&(k * qr), spec.settings.rank_tol)?;
    if p_r.rank() != r {
        return Err(SurgeryError::KernelDegeneracy {
            rank: p_r.rank(),
            expected: r,
            x: 0.0,
        });
    }
    let bridge = Bridge::decaying(state.kappa, decaying_slice(spec, state)?, k * &c_r, q_r.basis());
    check_bridge_rank(&bridge, r, spec.settings.rank_tol)?;
    let factor = JostFactor {
        kappa: state.kappa,
        sign: 1.0,
        p: p_r.matrix().clone(),
        rank: r,
    };
    if state.multiplicity - r == 0 {
        warnings.push("no multiplicity left".into());
    }
    finish(
        spec,
        SurgeryPlan::Lower {
            kappa: state.kappa,
            q_r: q_r.clone(),
        },
        bridge,
        factor,
        c_r,
        q_r.clone(),
        (Some(g_r), Some(h_r), None),
        state.multiplicity - r,
        warnings,
    )
}

/// `C = (I - Q + G)^{-1/2} Q` after checking `Q G = G Q = G` and that `G`
/// is positive on the range of `Q`.
fn normalization_from_gram(kappa: f64, q: &OrthProjection, g: &HermMatrix) -> Result<(CMat, CMat)> {
    let qm = q.matrix();
    let gm = g.matrix();
    if gm.nrows() != qm.nrows() {
        return Err(SurgeryError::InvalidNormalization("Q and G differ in size".into()));
    }
    let scale = max_abs(gm).max(1e-300);
    let res = sub_residual(qm, gm) / scale;
    if res > 1e-8 {
        return Err(SurgeryError::InvalidNormalization(format!(
            "G must satisfy Q G = G Q = G (relative residual {res:.3e})"
        )));
    }
    let basis = q.basis();
    if basis.ncols() == 0 {
        return Err(SurgeryError::InvalidNormalization("Q is zero".into()));
    }
    let core = basis.adjoint() * gm * &basis;
    let (vals, _) = linalg::herm_eigen(&core);
    if vals[0] <= 1e-12 * scale {
        return Err(SurgeryError::InvalidNormalization(format!(
            "G is not positive on the range of Q (smallest eigenvalue {:.3e})",
            vals[0]
        )));
    }
    Ok(spectral::gl_normalization(kappa, gm, qm)?)
}

fn add_step(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64, norm: &AddNormalization) -> Result<SurgeryStep> {
    if let Some(s) = report
        .states
        .iter()
        .find(|s| (s.kappa - kappa).abs() <= 1e-4 * kappa.max(1.0))
    {
        return Err(SurgeryError::Collision {
            kappa,
            existing: s.kappa,
        });
    }
    let warnings = class_warnings(spec);
    let n = spec.n;
    let (c, q, g, h) = match norm {
        AddNormalization::Direct(c) => {
            let cm = c.matrix().clone();
            if cm.nrows() != n {
                return Err(SurgeryError::InvalidNormalization(format!("C must be {n}x{n}")));
            }
            let (vals, _) = c.eigen();
            let scale = max_abs(&cm);
            if scale == 0.0 {
                return Err(SurgeryError::InvalidNormalization("C is zero".into()));
            }
            if vals[0] < -1e-10 * scale {
                return Err(SurgeryError::InvalidNormalization(format!(
                    "C must be nonnegative (smallest eigenvalue {:.3e})",
                    vals[0]
                )));
            }
            let q = linalg::range_projector(&cm, spec.settings.rank_tol)?;
            (cm, q, None, None)
        }
        AddNormalization::FromGram { q, g } => {
            if q.dim() != n {
                return Err(SurgeryError::InvalidNormalization(format!("Q must be {n}x{n}")));
            }
            let (h, c) = normalization_from_gram(kappa, q, g)?;
            (c, q.clone(), Some(g.matrix().clone()), Some(h))
        }
    };
    let k = c64(0.0, kappa);
    let j = spectral::jost_matrix(spec, k)?;
    grow_step(
        spec,
        SurgeryPlan::Add {
            kappa,
            normalization: norm.clone(),
        },
        kappa,
        j,
        c,
        q,
        (g, h),
        0,
        warnings,
    )
}

fn raise_step(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64, q_i: &OrthProjection, g_i: &HermMatrix) -> Result<SurgeryStep> {
    let state = find_state(report, kappa)?;
    let n = spec.n;
    if state.multiplicity >= n {
        return Err(SurgeryError::ProjectionOverlap(format!(
            "the bound state at kappa = {} already has full multiplicity {n}",
            state.kappa
        )));
    }
    if q_i.dim() != n {
        return Err(SurgeryError::ProjectionOverlap(format!("Q~_i must be {n}x{n}")));
    }
    let overlap = max_abs(&(q_i.matrix() * state.q.matrix()));
    if overlap > 1e-6 {
        return Err(SurgeryError::ProjectionOverlap(format!(
            "Q~_i Q_N must vanish (max entry {overlap:.3e})"
        )));
    }
    if q_i.rank() + state.multiplicity > n {
        return Err(SurgeryError::ProjectionOverlap("rank(Q~_i) + m_N exceeds n".into()));
    }
    let (h, c) = normalization_from_gram(state.kappa, q_i, g_i)?;
    let warnings = class_warnings(spec);
    grow_step(
        spec,
        SurgeryPlan::Raise {
            kappa: state.kappa,
            q_i: q_i.clone(),
            g_i: g_i.clone(),
        },
        state.kappa,
        state.jost.clone(),
        c,
        q_i.clone(),
        (Some(g_i.matrix().clone()), Some(h)),
        state.multiplicity,
        warnings,
    )
}

/// Shared tail of add and raise: `P~` from the range of `J(i kappa) C~`, the
/// growing bridge and the perturbed problem.
#[allow(clippy::too_many_arguments)]
fn grow_step(
    spec: &ProblemSpec,
    plan: SurgeryPlan,
    kappa: f64,
    j: CMat,
    c: CMat,
    q: OrthProjection,
    gh: (Option<CMat>, Option<CMat>),
    existing: usize,
    warnings: Vec<String>,
) -> Result<SurgeryStep> {
    let rank = q.rank();
    // The Wronskian f(i kappa)^dagger phi' - f'(i kappa)^dagger phi is constant;
    // at x = 0 it is J(i kappa), at infinity it is 2 kappa L.
    let l = &j * c64(1.0 / (2.0 * kappa), 0.0);
    let p = linalg::range_projector(&(&j * &c), spec.settings.rank_tol)?;
    if p.rank() != rank {
        return Err(SurgeryError::InvalidNormalization(format!(
            "J(i kappa) C~ has rank {} but C~ has rank {rank}",
            p.rank()
        )));
    }
    let x_max = bridge_extent(spec, kappa);
    let slice = wave::regular_from(
        &spec.potential,
        spec.a(),
        spec.b(),
        c64(0.0, kappa),
        x_max,
        true,
        &bridge_ode_options(),
    )?;
    let bridge = Bridge::growing(kappa, Arc::new(slice), c.clone(), &q);
    check_bridge_rank(&bridge, rank, spec.settings.rank_tol)?;
    let factor = JostFactor {
        kappa,
        sign: -1.0,
        p: p.matrix().clone(),
        rank,
    };
    finish(
        spec,
        plan,
        bridge,
        factor,
        c,
        q,
        (gh.0, gh.1, Some(l)),
        existing + rank,
        warnings,
    )
}

fn apply_step(report: &SpectrumReport, spec: &ProblemSpec, plan: &SurgeryPlan) -> Result<SurgeryStep> {
    match plan {
        SurgeryPlan::Remove { kappa } => remove_step(report, spec, *kappa, Vec::new()),
        SurgeryPlan::Lower { kappa, q_r } => lower_step(report, spec, *kappa, q_r),
        SurgeryPlan::Add { kappa, normalization } => add_step(report, spec, *kappa, normalization),
        SurgeryPlan::Raise { kappa, q_i, g_i } => raise_step(report, spec, *kappa, q_i, g_i),
    }
}

fn single(spec: &ProblemSpec, step: SurgeryStep) -> TransformResult {
    TransformResult {
        original: spec.clone(),
        perturbed_spec: step.perturbed.clone(),
        warnings: step.warnings.clone(),
        steps: vec![step],
    }
}

/// Remove the bound state at `kappa` entirely.
pub fn remove_bound_state(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64) -> Result<TransformResult> {
    Ok(single(spec, remove_step(report, spec, kappa, Vec::new())?))
}

/// Lower the multiplicity of the bound state at `kappa` by `rank(Q_r)`.
pub fn lower_multiplicity(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64, q_r: &OrthProjection) -> Result<TransformResult> {
    Ok(single(spec, lower_step(report, spec, kappa, q_r)?))
}

/// Add a bound state at `kappa` with the given normalization.
pub fn add_bound_state(report: &SpectrumReport, spec: &ProblemSpec, kappa: f64, normalization: &AddNormalization) -> Result<TransformResult> {
    Ok(single(spec, add_step(report, spec, kappa, normalization)?))
}

/// Raise the multiplicity of the bound state at `kappa` by `rank(Q~_i)`.
pub fn raise_multiplicity(
    report: &SpectrumReport,
    spec: &ProblemSpec,
    kappa: f64,
    q_i: &OrthProjection,
    g_i: &HermMatrix,
) -> Result<TransformResult> {
    Ok(single(spec, raise_step(report, spec, kappa, q_i, g_i)?))
}

/// Apply one plan against a precomputed spectrum.
pub fn apply(report: &SpectrumReport, spec: &ProblemSpec, plan: &SurgeryPlan) -> Result<TransformResult> {
    Ok(single(spec, apply_step(report, spec, plan)?))
}

/// Apply plans in order, recomputing the spectrum before each step.
pub fn compose(plans: &[SurgeryPlan], spec: &ProblemSpec) -> Result<TransformResult> {
    let mut result = TransformResult::identity(spec);
    let wrap = |index: usize, e: SurgeryError| SurgeryError::Step {
        index,
        source: Box::new(e),
    };
    for (i, plan) in plans.iter().enumerate() {
        let report = spectral::assemble_spectrum(&result.perturbed_spec).map_err(|e| wrap(i, e.into()))?;
        let step = apply_step(&report, &result.perturbed_spec, plan).map_err(|e| wrap(i, e))?;
        result
            .warnings
            .extend(step.warnings.iter().map(|w| format!("step {i}: {w}")));
        result.perturbed_spec = step.perturbed.clone();
        result.steps.push(step);
    }
    Ok(result)
}

/// `I - P` for a rank-one 2x2 orthogonal projection `P`.
pub fn complementary_projection_2x2(p: &OrthProjection) -> Result<OrthProjection> {
    if p.dim() != 2 || p.rank() != 1 {
        return Err(SurgeryError::InvalidRank {
            rank: p.rank(),
            dim: p.dim(),
        });
    }
    Ok(p.complement())
}

// ---------------------------------------------------------------------------
// Decay diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BoundStatus {
    Satisfied,
    Violated,
}

/// Comparison of `|V~ - V|` with one envelope over `[x1, x2]`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub status: BoundStatus,
    /// `ln(ratio(x2)) - ln(ratio(x1))` for `ratio = |V~ - V| / envelope`.
    pub log_growth: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecayReport {
    pub operation: Operation,
    pub kappa: f64,
    pub x1: f64,
    pub x2: f64,
    /// Rate `r` of the compensating factor `e^{r x}`.
    pub compensation_rate: f64,
    /// Least-squares slope of `ln(|V~ - V| e^{r x})` against `ln x`.
    pub slope: f64,
    /// `(x, |V~(x) - V(x)|)`.
    pub samples: Vec<(f64, f64)>,
    pub method: String,
    pub bounds: Vec<BoundCheck>,
    pub notes: Vec<String>,
}

impl DecayReport {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }

    pub fn bound(&self, name: &str) -> Option<&BoundCheck> {
        self.bounds.iter().find(|b| b.name == name)
    }
}

/// Growth threshold on the log ratio above which a bound counts as violated.
const GROWTH_THRESHOLD: f64 = 0.5;

fn slope_fit(samples: &[(f64, f64)], rate: f64) -> f64 {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|&(x, v)| (x.ln(), v.ln() + rate * x))
        .collect();
    let m = pts.len() as f64;
    if m < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn check_bound(name: &str, samples: &[(f64, f64)], env: impl Fn(f64) -> f64) -> BoundCheck {
    let (x1, v1) = samples[0];
    let (x2, v2) = samples[samples.len() - 1];
    let g = (v2 / env(x2)).ln() - (v1 / env(x1)).ln();
    BoundCheck {
        name: name.to_string(),
        status: if g > GROWTH_THRESHOLD {
            BoundStatus::Violated
        } else {
            BoundStatus::Satisfied
        },
        log_growth: g,
    }
}

/// Scalar add/raise increment from the Riccati variables
/// `a = phi'/phi - kappa`, `b = xi^2/Omega - 2 kappa`, which stay small where
/// the direct formula loses everything to cancellation:
/// `a' = V - 2 kappa a - a^2`, `b' = 4 kappa a + 2 a b - 2 kappa b - b^2`,
/// `V~ - V = -2 b'`.
fn riccati_increments(step: &SurgeryStep, xs: &[f64]) -> Option<Vec<f64>> {
    let kappa = step.kappa;
    let mut x0 = 1.0_f64.min(xs[0]);
    let start = loop {
        if let Some(s) = step.bridge.riccati_start(x0) {
            break s;
        }
        x0 += 0.5;
        if x0 > xs[0] {
            return None;
        }
    };
    let v = step.base.potential.clone();
    let rhs = |x: f64, y: &[C64], dy: &mut [C64]| {
        let vx = v.eval(x)[(0, 0)];
        let (a, b) = (y[0], y[1]);
        dy[0] = vx - a * (2.0 * kappa) - a * a;
        dy[1] = a * (4.0 * kappa) + a * b * 2.0 - b * (2.0 * kappa) - b * b;
    };
    let opts = OdeOptions {
        rtol: 1e-12,
        atol: 1e-30,
        ..Default::default()
    };
    let x_end = *xs.last()?;
    let sol = ode::solve(rhs, x0, &[start.0, start.1], x_end, &opts, true).ok()?;
    let dense = sol.dense?;
    Some(
        xs.iter()
            .map(|&x| {
                let y = dense.eval(x);
                let (a, b) = (y[0], y[1]);
                let bp = a * (4.0 * kappa) + a * b * 2.0 - b * (2.0 * kappa) - b * b;
                (bp * 2.0).norm()
            })
            .collect(),
    )
}

fn abs_v(v: &Potential, x: f64) -> f64 {
    max_abs(&v.eval(x))
}

/// `int_x^inf |V|` by quadrature.
fn tail_integral(v: &Potential, x: f64) -> f64 {
    let opts = quad::QuadOptions {
        rtol: 1e-8,
        atol: 1e-300,
        max_intervals: 4000,
    };
    quad::integrate_real_to_infinity(|y| abs_v(v, y), x, opts).unwrap_or(f64::NAN)
}

/// The general add/raise envelope with `a = 0`:
/// `x e^{-2 kappa x} + int_x^inf |V| + e^{-2 eps kappa x} int_0^{(1-eps)x} |V|
///  + int_{(1-eps)x}^x e^{-2 kappa (x-y)} |V(y)| dy`.
fn add_envelope(v: &Potential, kappa: f64, eps: f64, x: f64) -> f64 {
    let opts = quad::QuadOptions {
        rtol: 1e-8,
        atol: 1e-300,
        max_intervals: 4000,
    };
    let xm = (1.0 - eps) * x;
    let near = quad::integrate_real(|y| abs_v(v, y), 0.0, xm, opts).unwrap_or(f64::NAN);
    let mid = quad::integrate_real(|y| (-2.0 * kappa * (x - y)).exp() * abs_v(v, y), xm, x, opts).unwrap_or(f64::NAN);
    x * (-2.0 * kappa * x).exp() + tail_integral(v, x) + (-2.0 * eps * kappa * x).exp() * near + mid
}

/// Fit the decay of `|V~ - V|` for the last step on `[x1, x2]` and compare it
/// with the applicable envelopes. Purely diagnostic: the envelopes are upper
/// bounds, so a satisfied bound says nothing about sharpness.
pub fn decay_estimate_check(result: &TransformResult, x1: f64, x2: f64) -> Result<DecayReport> {
    let step = result
        .last()
        .ok_or_else(|| SurgeryError::InvalidNormalization("decay check needs at least one step".into()))?;
    let kappa = step.kappa;
    let count = 41;
    let xs: Vec<f64> = (0..count)
        .map(|i| x1 + (x2 - x1) * i as f64 / (count - 1) as f64)
        .collect();
    let mut notes = Vec::new();
    let (vals, method) = match (step.operation.sign() < 0.0, riccati_increments(step, &xs)) {
        (true, Some(v)) => (v, "riccati".to_string()),
        _ => {
            let v: Vec<f64> = xs.iter().map(|&x| max_abs(&step.bridge.increment(x))).collect();
            let floor = 1e-9 * xs.iter().map(|&x| abs_v(&step.base.potential, x)).fold(1.0, f64::max);
            if v.iter().any(|&d| d < floor) {
                notes.push(format!(
                    "some samples are below the integration noise floor (about {floor:.1e}); the fit there is unreliable"
                ));
            }
            (v, "bridge".to_string())
        }
    };
    let samples: Vec<(f64, f64)> = xs.iter().copied().zip(vals).collect();
    let base = &step.base.potential;
    let alpha = tail_rate(&base.tail()).unwrap_or(0.0);
    let rate = if step.operation.sign() < 0.0 {
        alpha.min(2.0 * kappa)
    } else {
        alpha
    };
    let rate = if rate.is_finite() { rate } else { 2.0 * kappa };
    let slope = slope_fit(&samples, rate);
    let mut bounds = Vec::new();
    if step.operation.sign() > 0.0 {
        if let Some(x0) = compact_end(&base.tail()) {
            let beyond = samples.iter().filter(|(x, _)| *x > x0).map(|p| p.1).fold(0.0, f64::max);
            bounds.push(BoundCheck {
                name: "support within [0, x0]".into(),
                status: if beyond < 1e-8 {
                    BoundStatus::Satisfied
                } else {
                    BoundStatus::Violated
                },
                log_growth: beyond,
            });
        } else {
            bounds.push(check_bound("tail integral of |V|", &samples, |x| tail_integral(base, x)));
        }
    } else {
        bounds.push(check_bound("general envelope", &samples, |x| add_envelope(base, kappa, 0.5, x)));
        bounds.push(check_bound("exp(-2 kappa x)", &samples, |x| (-2.0 * kappa * x).exp()));
    }
    Ok(DecayReport {
        operation: step.operation,
        kappa,
        x1,
        x2,
        compensation_rate: rate,
        slope,
        samples,
        method,
        bounds,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_mat;

    #[test]
    fn complement_of_rank_one() {
        let p = OrthProjection::new(real_mat(2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let q = complementary_projection_2x2(&p).unwrap();
        assert!(max_abs(&(q.matrix() - real_mat(2, &[0.0, 0.0, 0.0, 1.0]))) < 1e-15);
        assert!(complementary_projection_2x2(&OrthProjection::identity(2)).is_err());
    }

    #[test]
    fn plan_parsing_reports_paths() {
        let plans = parse_plans(r#"{"steps": [{"op": "remove", "kappa": 1.0}, {"op": "add", "kappa": 2}]}"#);
        match plans {
            Err(SurgeryError::Plan { path, .. }) => assert_eq!(path, "$.steps[1]"),
            other => panic!("unexpected {other:?}"),
        }
        let ok = parse_plans(r#"[{"op": "lower", "kappa": 1, "Q_r": [[1, 0], [0, 0]]}]"#).unwrap();
        assert_eq!(ok[0].operation(), Operation::Lower);
        let back = SurgeryPlan::from_json(&ok[0].to_json(), "$").unwrap();
        assert_eq!(back, ok[0]);
    }

    #[test]
    fn jost_factor_determinant() {
        let f = JostFactor {
            kappa: 1.5,
            sign: -1.0,
            p: real_mat(2, &[1.0, 0.0, 0.0, 0.0]),
            rank: 1,
        };
        let k = c64(0.7, 0.2);
        assert!((linalg::det(&f.eval(k)) - f.det_factor(k)).norm() < 1e-14);
    }
}

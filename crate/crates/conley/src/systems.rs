//! Catalog of discrete dynamical systems: worked examples plus user-defined
//! expression maps, exposing evaluation, inversion where available, and
//! Jacobians (exact where the formulas allow, finite-difference otherwise).

use crate::space::{Ambient, SpaceError};
use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("unknown system name {0:?}")]
    UnknownName(String),
    #[error("invalid parameters for {name}: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("system {0} is not invertible")]
    NotInvertible(String),
    #[error("jacobian unavailable for {0} (finite differences disabled)")]
    JacobianUnavailable(String),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("inverse solve failed: {0}")]
    InverseFailed(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Immutable description of a system: identity, ambient, normalized
/// parameters, and capability flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub dim: usize,
    pub ambient: Ambient,
    pub params: Value,
    pub invertible: bool,
    pub jacobian_available: bool,
}

/// Derivative of one step at a base point. `approximate` is set when the
/// matrix came from finite differences rather than an exact formula.
#[derive(Debug, Clone)]
pub struct TangentMap {
    pub base: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub approximate: bool,
}

#[derive(Debug, Clone)]
enum Kind {
    LinearTorus {
        fwd: Vec<Vec<i64>>,
        inv: Vec<Vec<i64>>,
    },
    Rotation {
        angles: Vec<f64>,
    },
    Identity,
    Morse,
    DerivedAnosov(DerivedAnosov),
    Expr(ExprMap),
}

/// A concrete system: a [`SystemSpec`] plus its evaluator.
#[derive(Debug, Clone)]
pub struct System {
    spec: SystemSpec,
    kind: Kind,
}

fn wrap_pm_half(x: f64) -> f64 {
    let m = x.rem_euclid(1.0);
    if m >= 0.5 {
        m - 1.0
    } else {
        m
    }
}

// ---------------------------------------------------------------------------
// integer torus automorphisms

fn int_det(m: &[Vec<i64>]) -> i128 {
    // fraction-free elimination keeps everything in integers
    let n = m.len();
    let mut a: Vec<Vec<i128>> = m
        .iter()
        .map(|row| row.iter().map(|&v| v as i128).collect())
        .collect();
    let mut sign = 1_i128;
    let mut prev = 1_i128;
    for k in 0..n.saturating_sub(1) {
        if a[k][k] == 0 {
            let Some(swap) = (k + 1..n).find(|&i| a[i][k] != 0) else {
                return 0;
            };
            a.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

fn int_inverse(m: &[Vec<i64>]) -> Option<Vec<Vec<i64>>> {
    // |det| = 1, so the inverse is integer: recover it through the f64
    // inverse and certify the product exactly
    let n = m.len();
    let f = DMatrix::from_fn(n, n, |i, j| m[i][j] as f64);
    let inv = f.try_inverse()?;
    let mut out = vec![vec![0_i64; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = inv[(i, j)].round() as i64;
        }
    }
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0_i128;
            for (k, row) in out.iter().enumerate() {
                acc += m[i][k] as i128 * row[j] as i128;
            }
            if acc != i128::from(i == j) {
                return None;
            }
        }
    }
    Some(out)
}

fn apply_int(m: &[Vec<i64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(&c, &v)| c as f64 * v).sum())
        .collect()
}

// ---------------------------------------------------------------------------
// Morse time-1 map on T²: descent flow of h(x,y) = cos(2πx) + cos(2πy),
// integrated by 64 RK4 substeps of size 1/64. The substep is a contraction
// perturbation of the identity (field Lipschitz constant 4π², times the
// substep is about 0.62), so each substep inverts by Newton with the exact
// substep derivative.

const MORSE_SUBSTEPS: usize = 64;
const MORSE_H: f64 = 1.0 / 64.0;

fn morse_field(x: Vector2<f64>) -> Vector2<f64> {
    let tau = std::f64::consts::TAU;
    Vector2::new(tau * (tau * x[0]).sin(), tau * (tau * x[1]).sin())
}

fn morse_dfield(x: Vector2<f64>) -> Matrix2<f64> {
    let tau = std::f64::consts::TAU;
    Matrix2::from_diagonal(&Vector2::new(
        tau * tau * (tau * x[0]).cos(),
        tau * tau * (tau * x[1]).cos(),
    ))
}

fn morse_substep(x: Vector2<f64>) -> Vector2<f64> {
    let h = MORSE_H;
    let k1 = morse_field(x);
    let k2 = morse_field(x + k1 * (h / 2.0));
    let k3 = morse_field(x + k2 * (h / 2.0));
    let k4 = morse_field(x + k3 * h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Derivative of the discrete RK4 substep (the variational recursion of the
/// scheme itself, not of the flow).
fn morse_substep_jac(x: Vector2<f64>) -> Matrix2<f64> {
    let h = MORSE_H;
    let id = Matrix2::identity();
    let k1 = morse_field(x);
    let x2 = x + k1 * (h / 2.0);
    let k2 = morse_field(x2);
    let x3 = x + k2 * (h / 2.0);
    let k3 = morse_field(x3);
    let x4 = x + k3 * h;
    let j1 = morse_dfield(x);
    let j2 = morse_dfield(x2) * (id + j1 * (h / 2.0));
    let j3 = morse_dfield(x3) * (id + j2 * (h / 2.0));
    let j4 = morse_dfield(x4) * (id + j3 * h);
    id + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (h / 6.0)
}

fn morse_step_lift(x: &[f64]) -> Vec<f64> {
    let mut v = Vector2::new(x[0], x[1]);
    for _ in 0..MORSE_SUBSTEPS {
        v = morse_substep(v);
    }
    vec![v[0], v[1]]
}

fn morse_jacobian(x: &[f64]) -> Matrix2<f64> {
    let mut v = Vector2::new(x[0], x[1]);
    let mut j = Matrix2::identity();
    for _ in 0..MORSE_SUBSTEPS {
        j = morse_substep_jac(v) * j;
        v = morse_substep(v);
    }
    j
}

fn morse_inverse_substep(y: Vector2<f64>) -> Result<Vector2<f64>, SystemError> {
    // initial guess from one backward substep of the reversed field
    let h = MORSE_H;
    let k1 = -morse_field(y);
    let k2 = -morse_field(y + k1 * (h / 2.0));
    let k3 = -morse_field(y + k2 * (h / 2.0));
    let k4 = -morse_field(y + k3 * h);
    let mut x = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    for _ in 0..60 {
        let r = morse_substep(x) - y;
        if r.amax() < 1e-14 {
            return Ok(x);
        }
        let j = morse_substep_jac(x);
        let Some(jinv) = j.try_inverse() else {
            return Err(SystemError::InverseFailed(
                "singular substep derivative".into(),
            ));
        };
        x -= jinv * r;
    }
    if (morse_substep(x) - y).amax() < 1e-11 {
        Ok(x)
    } else {
        Err(SystemError::InverseFailed(
            "substep Newton did not converge".into(),
        ))
    }
}

fn morse_inverse_lift(y: &[f64]) -> Result<Vec<f64>, SystemError> {
    let mut v = Vector2::new(y[0], y[1]);
    for _ in 0..MORSE_SUBSTEPS {
        v = morse_inverse_substep(v)?;
    }
    Ok(vec![v[0], v[1]])
}

// ---------------------------------------------------------------------------
// Derived-from-Anosov deformation on T³.
//
// Linear model: the companion matrix ((0,1,0),(0,0,1),(1,-5,6)) in GL(3,Z),
// characteristic polynomial t³ - 6t² + 5t - 1, with three distinct real
// eigenvalues 0 < λ1 < λ2 < 1 < λu and determinant one. The deformation acts
// in the eigenbasis around the fixed point 0 and shifts only the weak stable
// coordinate u2:
//
//   u2 ↦ λ2·u2 + (κ/(ab))·φ(a·u1)·ψ(ab·u2)·φ(ab·u3)
//
// with φ the cubic Hermite bump 1 - 3t² + 2|t|³ on [-1,1] and ψ(s) = s·φ(s).
// The three factors vanish outside |u1| ≤ 1/a, |u2|,|u3| ≤ 1/(ab), so the map
// equals the linear model outside a ball of eigenbox radius 1/a around 0.

const ANOSOV_MAT: [[i64; 3]; 3] = [[0, 1, 0], [0, 0, 1], [1, -5, 6]];
const ANOSOV_INV: [[i64; 3]; 3] = [[5, -6, 1], [1, 0, 0], [0, 1, 0]];
const LAMBDA_1: f64 = 0.30797852836990414;
const LAMBDA_2: f64 = 0.6431041321077906;
const LAMBDA_U: f64 = 5.048917339522306;
// sup of |ψ| on [-1,1] (attained at s = (1+√33)/16), slightly padded
const PSI_SUP: f64 = 0.26;
// inf of ψ' on [-1,1] is -11/16 (attained at s = 3/4)
const PSI_SLOPE_INF: f64 = 11.0 / 16.0;

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let s = t.abs();
        1.0 - 3.0 * t * t + 2.0 * s * s * s
    }
}

fn dbump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        -6.0 * t * (1.0 - t.abs())
    }
}

fn odd_bump(s: f64) -> f64 {
    s * bump(s)
}

fn odd_bump_slope(s: f64) -> f64 {
    bump(s) + s * dbump(s)
}

#[derive(Debug, Clone)]
struct DerivedAnosov {
    a: f64,
    b: f64,
    kappa: f64,
    /// columns: unit eigenvectors for λu, λ2, λ1
    p: Matrix3<f64>,
    pinv: Matrix3<f64>,
    /// ambient radius of a ball containing the deformation support
    radius: f64,
}

impl DerivedAnosov {
    fn new(a: f64, b: f64, kappa: f64) -> Result<Self, SystemError> {
        let bad = |reason: &str| SystemError::InvalidParams {
            name: "derived_anosov_3d".into(),
            reason: reason.into(),
        };
        if !(a >= 1.0 && b >= 1.0) || !a.is_finite() || !b.is_finite() {
            return Err(bad("deformation sizes must satisfy a, b >= 1"));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(bad("deformation amplitude kappa must be >= 0"));
        }
        if kappa * PSI_SLOPE_INF >= LAMBDA_2 {
            return Err(bad(
                "kappa too large: the deformed coordinate map loses monotonicity",
            ));
        }
        let col = |l: f64| Vector3::new(1.0, l, l * l).normalize();
        let p = Matrix3::from_columns(&[col(LAMBDA_U), col(LAMBDA_2), col(LAMBDA_1)]);
        let mut pinv = p
            .try_inverse()
            .ok_or_else(|| bad("eigenbasis is singular"))?;
        // one Newton polish of the inverse tightens the chart round-trip
        pinv = pinv * (Matrix3::identity() * 2.0 - p * pinv);
        let op = p.svd(false, false).singular_values[0];
        let ab = a * b;
        let radius = op * (1.0 / (a * a) + 2.0 / (ab * ab)).sqrt();
        // images of the support must stay well inside the fundamental chart,
        // otherwise the chart-based inverse is ambiguous
        let image_reach = op
            * ((LAMBDA_U / a).powi(2) + (LAMBDA_2 / ab).powi(2) + (LAMBDA_1 / ab).powi(2)).sqrt()
            + kappa * PSI_SUP / ab;
        if radius >= 0.25 || image_reach >= 0.45 {
            return Err(bad(
                "deformation ball too large for the torus chart; increase a",
            ));
        }
        Ok(DerivedAnosov {
            a,
            b,
            kappa,
            p,
            pinv,
            radius,
        })
    }

    fn delta_and_grad(&self, u: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let (a, ab) = (self.a, self.a * self.b);
        let scale = self.kappa / ab;
        let f1 = bump(a * u[0]);
        let f2 = odd_bump(ab * u[1]);
        let f3 = bump(ab * u[2]);
        let delta = scale * f1 * f2 * f3;
        let grad = Vector3::new(
            scale * a * dbump(a * u[0]) * f2 * f3,
            self.kappa * f1 * odd_bump_slope(ab * u[1]) * f3,
            self.kappa * f1 * f2 * dbump(ab * u[2]),
        );
        (delta, grad)
    }

    fn delta_at(&self, w: &Vector3<f64>) -> f64 {
        let u = self.pinv * w;
        self.delta_and_grad(&u).0
    }

    fn step_lift(&self, x: &[f64]) -> Vec<f64> {
        let w = Vector3::new(wrap_pm_half(x[0]), wrap_pm_half(x[1]), wrap_pm_half(x[2]));
        let lin = apply_int(&ANOSOV_MAT.map(|r| r.to_vec()), x);
        let delta = self.delta_at(&w);
        let p2 = self.p.column(1);
        vec![
            lin[0] + delta * p2[0],
            lin[1] + delta * p2[1],
            lin[2] + delta * p2[2],
        ]
    }

    fn jacobian(&self, x: &[f64]) -> Matrix3<f64> {
        let w = Vector3::new(wrap_pm_half(x[0]), wrap_pm_half(x[1]), wrap_pm_half(x[2]));
        let u = self.pinv * w;
        let (_, grad) = self.delta_and_grad(&u);
        let mut m = Matrix3::from_fn(|i, j| ANOSOV_MAT[i][j] as f64);
        // rank-one correction p2 · (∇δ)ᵀ, with the gradient pulled back to
        // ambient coordinates
        let ambient_grad = self.pinv.transpose() * grad;
        let p2 = self.p.column(1);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += p2[i] * ambient_grad[j];
            }
        }
        m
    }

    /// Exact inverse: the candidate A⁻¹x differs from the true preimage only
    /// along the deformed eigendirection, where a monotone scalar equation
    /// recovers the coordinate.
    fn inverse_step(&self, x: &[f64], ambient: &Ambient) -> Result<Vec<f64>, SystemError> {
        let mut cand = apply_int(&ANOSOV_INV.map(|r| r.to_vec()), x);
        ambient.canonicalize(&mut cand)?;
        let wz = Vector3::new(
            wrap_pm_half(cand[0]),
            wrap_pm_half(cand[1]),
            wrap_pm_half(cand[2]),
        );
        let u = self.pinv * wz;
        let (a, ab) = (self.a, self.a * self.b);
        let c = (self.kappa / ab) * bump(a * u[0]) * bump(ab * u[2]);
        if c == 0.0 {
            return Ok(cand);
        }
        // solve λ2·t + c·ψ(ab·t) = λ2·u2 for t; the derivative is at least
        // λ2 - κ·11/16 > 0, so bisection-safeguarded Newton converges
        let rhs = LAMBDA_2 * u[1];
        let g = |t: f64| LAMBDA_2 * t + c * odd_bump(ab * t) - rhs;
        let span = c * PSI_SUP / LAMBDA_2;
        let (mut lo, mut hi) = (u[1] - span, u[1] + span);
        if g(lo) > 0.0 || g(hi) < 0.0 {
            return Err(SystemError::InverseFailed("bracket failed".into()));
        }
        let mut t = u[1];
        for _ in 0..200 {
            let gv = g(t);
            if gv.abs() < 1e-16 {
                break;
            }
            if gv > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let slope = LAMBDA_2 + c * ab * odd_bump_slope(ab * t);
            let newton = t - gv / slope;
            t = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-17 {
                break;
            }
        }
        if odd_bump(ab * t) == 0.0 {
            // the bump never acted: the integer-inverse candidate was exact
            return Ok(cand);
        }
        let w = self.p * Vector3::new(u[0], t, u[2]);
        let mut out = vec![w[0], w[1], w[2]];
        ambient.canonicalize(&mut out)?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// user-defined expression maps

#[derive(Debug, Clone)]
struct ExprMap {
    fwd: Vec<meval::Expr>,
    inv: Option<Vec<meval::Expr>>,
    finite_differences: bool,
}

fn parse_exprs(raw: &[String]) -> Result<Vec<meval::Expr>, SystemError> {
    raw.iter()
        .map(|s| {
            s.parse::<meval::Expr>()
                .map_err(|e| SystemError::Expr(format!("{s:?}: {e}")))
        })
        .collect()
}

fn eval_exprs(exprs: &[meval::Expr], x: &[f64]) -> Result<Vec<f64>, SystemError> {
    let mut ctx = meval::Context::new();
    for (i, &v) in x.iter().enumerate() {
        ctx.var(format!("x{i}"), v);
    }
    for (alias, i) in [("x", 0), ("y", 1), ("z", 2)] {
        if i < x.len() {
            ctx.var(alias, x[i]);
        }
    }
    exprs
        .iter()
        .map(|e| {
            let v = e
                .eval_with_context(&ctx)
                .map_err(|err| SystemError::Expr(err.to_string()))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SystemError::Expr(
                    "expression produced a non-finite value".into(),
                ))
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// parameter records

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityParams {
    d: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RotationParams {
    angles: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    matrix: Vec<Vec<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnosovParams {
    #[serde(default = "default_a")]
    a: f64,
    #[serde(default = "default_b")]
    b: f64,
    #[serde(default = "default_kappa")]
    kappa: f64,
    #[serde(default = "default_profile")]
    profile: String,
}

fn default_a() -> f64 {
    24.0
}
fn default_b() -> f64 {
    2.0
}
fn default_kappa() -> f64 {
    0.15
}
fn default_profile() -> String {
    "cubic_hermite".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprParams {
    space: Ambient,
    exprs: Vec<String>,
    #[serde(default)]
    inverse_exprs: Option<Vec<String>>,
    #[serde(default = "default_true")]
    finite_differences: bool,
}

fn default_true() -> bool {
    true
}

fn params_from<T: serde::de::DeserializeOwned>(
    name: &str,
    params: &Value,
) -> Result<T, SystemError> {
    // An absent parameter record means "no parameters", not the null value.
    let value = if params.is_null() {
        Value::Object(serde_json::Map::new())
    } else {
        params.clone()
    };
    serde_json::from_value(value).map_err(|e| SystemError::InvalidParams {
        name: name.into(),
        reason: e.to_string(),
    })
}

/// Build a system from its name and JSON parameter record. Unknown names and
/// unknown or out-of-range parameters are rejected.
pub fn make_system(name: &str, params: &Value) -> Result<System, SystemError> {
    let bad = |reason: String| SystemError::InvalidParams {
        name: name.into(),
        reason,
    };
    match name {
        "cat_map" => {
            params_from::<NoParams>(name, params)?;
            linear_torus_system("cat_map", vec![vec![2, 1], vec![1, 1]], params.clone())
        }
        "linear_torus" => {
            let p: LinearParams = params_from(name, params)?;
            linear_torus_system("linear_torus", p.matrix, params.clone())
        }
        "identity" => {
            let p: IdentityParams = params_from(name, params)?;
            if p.d == 0 {
                return Err(bad("dimension must be positive".into()));
            }
            Ok(System {
                spec: SystemSpec {
                    name: name.into(),
                    dim: p.d,
                    ambient: Ambient::torus(p.d),
                    params: params.clone(),
                    invertible: true,
                    jacobian_available: true,
                },
                kind: Kind::Identity,
            })
        }
        "rotation" => {
            let p: RotationParams = params_from(name, params)?;
            if p.angles.is_empty() || p.angles.iter().any(|a| !a.is_finite()) {
                return Err(bad(
                    "angles must be a nonempty list of finite numbers".into()
                ));
            }
            let d = p.angles.len();
            Ok(System {
                spec: SystemSpec {
                    name: name.into(),
                    dim: d,
                    ambient: Ambient::torus(d),
                    params: params.clone(),
                    invertible: true,
                    jacobian_available: true,
                },
                kind: Kind::Rotation { angles: p.angles },
            })
        }
        "morse_gradient_t1" => {
            params_from::<NoParams>(name, params)?;
            Ok(System {
                spec: SystemSpec {
                    name: name.into(),
                    dim: 2,
                    ambient: Ambient::torus(2),
                    params: params.clone(),
                    invertible: true,
                    jacobian_available: true,
                },
                kind: Kind::Morse,
            })
        }
        "derived_anosov_3d" => {
            let p: AnosovParams = params_from(name, params)?;
            if p.profile != "cubic_hermite" {
                return Err(bad(format!(
                    "unsupported deformation profile {:?} (available: cubic_hermite)",
                    p.profile
                )));
            }
            let da = DerivedAnosov::new(p.a, p.b, p.kappa)?;
            Ok(System {
                spec: SystemSpec {
                    name: name.into(),
                    dim: 3,
                    ambient: Ambient::torus(3),
                    params: params.clone(),
                    invertible: true,
                    jacobian_available: true,
                },
                kind: Kind::DerivedAnosov(da),
            })
        }
        "user_defined" => {
            if params.get("exprs").is_none() {
                return Err(bad("user_defined requires an exprs list".into()));
            }
            let p: ExprParams = params_from(name, params)?;
            let d = p.space.dim();
            if p.exprs.len() != d {
                return Err(bad(format!(
                    "expected {d} expressions for a {d}-dimensional space, got {}",
                    p.exprs.len()
                )));
            }
            let fwd = parse_exprs(&p.exprs)?;
            let inv = match &p.inverse_exprs {
                Some(raw) => {
                    if raw.len() != d {
                        return Err(bad("inverse_exprs arity mismatch".into()));
                    }
                    Some(parse_exprs(raw)?)
                }
                None => None,
            };
            let invertible = inv.is_some();
            let sys = System {
                spec: SystemSpec {
                    name: name.into(),
                    dim: d,
                    ambient: p.space,
                    params: params.clone(),
                    invertible,
                    jacobian_available: p.finite_differences,
                },
                kind: Kind::Expr(ExprMap {
                    fwd,
                    inv,
                    finite_differences: p.finite_differences,
                }),
            };
            // catch unknown variables at construction, not mid-run
            let probe = sys.probe_point();
            sys.step(&probe)?;
            if sys.spec.invertible {
                let fwd = sys.step(&probe)?;
                let back = sys.inverse_step(&fwd)?;
                let dist = sys.spec.ambient.distance(&back, &probe);
                if dist > 1e-8 {
                    return Err(bad(format!(
                        "inverse_exprs do not invert exprs (round-trip error {dist:.2e} at a sample point)"
                    )));
                }
            }
            Ok(sys)
        }
        other => Err(SystemError::UnknownName(other.into())),
    }
}

fn linear_torus_system(
    name: &str,
    matrix: Vec<Vec<i64>>,
    params: Value,
) -> Result<System, SystemError> {
    let bad = |reason: String| SystemError::InvalidParams {
        name: name.into(),
        reason,
    };
    let d = matrix.len();
    if d == 0 || matrix.iter().any(|row| row.len() != d) {
        return Err(bad("matrix must be square and nonempty".into()));
    }
    let det = int_det(&matrix);
    if det.abs() != 1 {
        return Err(bad(format!(
            "matrix must lie in GL(d,Z) to define a torus diffeomorphism (det = {det})"
        )));
    }
    let inv =
        int_inverse(&matrix).ok_or_else(|| bad("integer inverse certification failed".into()))?;
    Ok(System {
        spec: SystemSpec {
            name: name.into(),
            dim: d,
            ambient: Ambient::torus(d),
            params,
            invertible: true,
            jacobian_available: true,
        },
        kind: Kind::LinearTorus { fwd: matrix, inv },
    })
}

impl System {
    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn ambient(&self) -> &Ambient {
        &self.spec.ambient
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Ambient radius of the ball outside which the derived-from-Anosov
    /// deformation vanishes identically; `None` for undeformed systems.
    pub fn deformation_radius(&self) -> Option<f64> {
        match &self.kind {
            Kind::DerivedAnosov(da) => Some(da.radius),
            _ => None,
        }
    }

    fn probe_point(&self) -> Vec<f64> {
        match self.ambient() {
            Ambient::Torus { dim } => vec![0.3; *dim],
            Ambient::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// One forward step, canonicalized into the ambient space.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.spec.ambient.check_dim(x.len())?;
        let mut y = self.step_lift_raw(x)?;
        self.spec.ambient.canonicalize(&mut y)?;
        Ok(y)
    }

    /// One forward step of the lift: torus systems act on R^d without
    /// wrapping the output (the bump or field data still see the wrapped
    /// representative), so positional winding survives.
    pub fn step_lift(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.spec.ambient.check_dim(x.len())?;
        self.step_lift_raw(x)
    }

    fn step_lift_raw(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        match &self.kind {
            Kind::LinearTorus { fwd, .. } => Ok(apply_int(fwd, x)),
            Kind::Rotation { angles } => Ok(x.iter().zip(angles).map(|(v, a)| v + a).collect()),
            Kind::Identity => Ok(x.to_vec()),
            Kind::Morse => Ok(morse_step_lift(x)),
            Kind::DerivedAnosov(da) => Ok(da.step_lift(x)),
            Kind::Expr(e) => {
                let arg: Vec<f64> = match self.ambient() {
                    // expressions define the lift through the wrapped point
                    Ambient::Torus { .. } => {
                        let wrapped: Vec<f64> = x.iter().map(|v| v.rem_euclid(1.0)).collect();
                        let img = eval_exprs(&e.fwd, &wrapped)?;
                        return Ok(img
                            .iter()
                            .zip(x.iter().zip(&wrapped))
                            .map(|(iv, (xv, wv))| iv + (xv - wv))
                            .collect());
                    }
                    Ambient::Box { .. } => x.to_vec(),
                };
                eval_exprs(&e.fwd, &arg)
            }
        }
    }

    /// One backward step, canonicalized. Errors on non-invertible systems.
    pub fn inverse_step(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.spec.ambient.check_dim(x.len())?;
        if !self.spec.invertible {
            return Err(SystemError::NotInvertible(self.spec.name.clone()));
        }
        let mut y = match &self.kind {
            Kind::LinearTorus { inv, .. } => apply_int(inv, x),
            Kind::Rotation { angles } => x.iter().zip(angles).map(|(v, a)| v - a).collect(),
            Kind::Identity => x.to_vec(),
            Kind::Morse => morse_inverse_lift(x)?,
            Kind::DerivedAnosov(da) => return da.inverse_step(x, &self.spec.ambient),
            Kind::Expr(e) => {
                let inv = e
                    .inv
                    .as_ref()
                    .expect("invertible flag implies inverse exprs");
                eval_exprs(inv, x)?
            }
        };
        self.spec.ambient.canonicalize(&mut y)?;
        Ok(y)
    }

    /// `f^steps(x)` by repeated single steps, so the composition law is
    /// satisfied by construction. Negative step counts need invertibility.
    pub fn evaluate(&self, x: &[f64], steps: i64) -> Result<Vec<f64>, SystemError> {
        let mut p = x.to_vec();
        self.spec.ambient.canonicalize(&mut p)?;
        if steps >= 0 {
            for _ in 0..steps {
                p = self.step(&p)?;
            }
        } else {
            for _ in 0..(-steps) {
                p = self.inverse_step(&p)?;
            }
        }
        Ok(p)
    }

    /// Derivative of one step at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<TangentMap, SystemError> {
        self.spec.ambient.check_dim(x.len())?;
        let d = self.dim();
        let (matrix, approximate) = match &self.kind {
            Kind::LinearTorus { fwd, .. } => {
                (DMatrix::from_fn(d, d, |i, j| fwd[i][j] as f64), false)
            }
            Kind::Rotation { .. } | Kind::Identity => (DMatrix::identity(d, d), false),
            Kind::Morse => {
                let j = morse_jacobian(x);
                (DMatrix::from_fn(2, 2, |i, k| j[(i, k)]), false)
            }
            Kind::DerivedAnosov(da) => {
                let j = da.jacobian(x);
                (DMatrix::from_fn(3, 3, |i, k| j[(i, k)]), false)
            }
            Kind::Expr(e) => {
                if !e.finite_differences {
                    return Err(SystemError::JacobianUnavailable(self.spec.name.clone()));
                }
                let h = 1e-6;
                let mut m = DMatrix::zeros(d, d);
                for j in 0..d {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[j] += h;
                    xm[j] -= h;
                    let fp = self.step_lift(&xp)?;
                    let fm = self.step_lift(&xm)?;
                    for i in 0..d {
                        m[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                (m, true)
            }
        };
        Ok(TangentMap {
            base: x.to_vec(),
            matrix,
            approximate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = tol);
        }
    }

    #[test]
    fn cat_map_hand_value() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let y = sys.evaluate(&[0.25, 0.5], 1).unwrap();
        close(&y, &[0.0, 0.75], 0.0);
    }

    #[test]
    fn cat_map_period_two_orbit() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let p = [0.2, 0.4];
        let y = sys.evaluate(&p, 2).unwrap();
        close(&y, &p, 1e-12);
        let mid = sys.evaluate(&p, 1).unwrap();
        close(&mid, &[0.8, 0.6], 1e-12);
    }

    #[test]
    fn cat_map_origin_is_fixed_forever() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let y = sys.evaluate(&[0.0, 0.0], 1_000_000).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_steps_is_identity() {
        let sys = make_system("morse_gradient_t1", &serde_json::json!({})).unwrap();
        let y = sys.evaluate(&[0.33, 0.77], 0).unwrap();
        close(&y, &[0.33, 0.77], 0.0);
    }

    #[test]
    fn linear_torus_matches_cat_map() {
        let cat = make_system("cat_map", &serde_json::json!({})).unwrap();
        let lin = make_system(
            "linear_torus",
            &serde_json::json!({"matrix": [[2, 1], [1, 1]]}),
        )
        .unwrap();
        let mut s = 0.123_f64;
        for _ in 0..1000 {
            s = (s * 997.0).fract();
            let p = [s, (s * 31.0).fract()];
            assert_eq!(cat.step(&p).unwrap(), lin.step(&p).unwrap());
        }
    }

    #[test]
    fn linear_torus_rejects_non_unimodular() {
        let err = make_system(
            "linear_torus",
            &serde_json::json!({"matrix": [[2, 0], [0, 1]]}),
        );
        assert!(matches!(err, Err(SystemError::InvalidParams { .. })));
    }

    #[test]
    fn unknown_name_and_unknown_params_rejected() {
        assert!(matches!(
            make_system("horseshoe", &serde_json::json!({})),
            Err(SystemError::UnknownName(_))
        ));
        assert!(matches!(
            make_system("cat_map", &serde_json::json!({"d": 2})),
            Err(SystemError::InvalidParams { .. })
        ));
    }

    #[test]
    fn identity_and_rotation() {
        let id = make_system("identity", &serde_json::json!({"d": 2})).unwrap();
        close(&id.step(&[0.4, 0.9]).unwrap(), &[0.4, 0.9], 0.0);
        let rot = make_system("rotation", &serde_json::json!({"angles": [0.25, 0.5]})).unwrap();
        close(&rot.step(&[0.9, 0.75]).unwrap(), &[0.15, 0.25], 1e-15);
        let back = rot.inverse_step(&rot.step(&[0.9, 0.75]).unwrap()).unwrap();
        close(&back, &[0.9, 0.75], 1e-15);
    }

    #[test]
    fn cat_jacobian_exact_and_unimodular() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let t = sys.jacobian(&[0.37, 0.91]).unwrap();
        assert!(!t.approximate);
        assert_eq!(t.matrix[(0, 0)], 2.0);
        assert_eq!(t.matrix[(0, 1)], 1.0);
        assert_eq!(t.matrix[(1, 0)], 1.0);
        assert_eq!(t.matrix[(1, 1)], 1.0);
        assert_abs_diff_eq!(t.matrix.determinant(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn morse_jacobian_at_minimum_matches_linearized_flow() {
        let sys = make_system("morse_gradient_t1", &serde_json::json!({})).unwrap();
        let t = sys.jacobian(&[0.5, 0.5]).unwrap();
        let expected = (-4.0 * std::f64::consts::PI * std::f64::consts::PI).exp();
        assert_abs_diff_eq!(t.matrix[(0, 0)], expected, epsilon = 1e-6);
        assert_abs_diff_eq!(t.matrix[(1, 1)], expected, epsilon = 1e-6);
        assert_abs_diff_eq!(t.matrix[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.matrix[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn morse_inverse_round_trip() {
        // One time unit of the descent flow moves generic points to within
        // exp(-4π²) ≈ 7e-18 of an equilibrium, below f64 spacing, so no
        // numerical inverse can round-trip generic points. Within a window
        // around the equilibria (offsets near 1e-7) both endpoints of the
        // round trip stay resolvable and the inverse must reproduce them.
        let sys = make_system("morse_gradient_t1", &serde_json::json!({})).unwrap();
        for off in [1e-8, 3e-8] {
            // forward then backward, seeded near the maximum (0, 0)
            let p = [off, 1.0 - 2.0 * off];
            let fwd = sys.step(&p).unwrap();
            let back = sys.inverse_step(&fwd).unwrap();
            let dist = sys.ambient().distance(&back, &p);
            assert!(dist < 1e-10, "f⁻¹∘f error {dist:.2e} at offset {off:.0e}");
            // backward then forward, seeded near the minimum (1/2, 1/2)
            let q = [0.5 + off, 0.5 - 2.0 * off];
            let pre = sys.inverse_step(&q).unwrap();
            let fwd = sys.step(&pre).unwrap();
            let dist = sys.ambient().distance(&fwd, &q);
            assert!(dist < 1e-10, "f∘f⁻¹ error {dist:.2e} at offset {off:.0e}");
        }
    }

    #[test]
    fn morse_variational_jacobian_agrees_with_finite_differences() {
        let sys = make_system("morse_gradient_t1", &serde_json::json!({})).unwrap();
        let p = [0.31, 0.64];
        let j = sys.jacobian(&p).unwrap().matrix;
        let h = 1e-6;
        for col in 0..2 {
            let mut xp = p;
            let mut xm = p;
            xp[col] += h;
            xm[col] -= h;
            let fp = sys.step_lift(&xp).unwrap();
            let fm = sys.step_lift(&xm).unwrap();
            for row in 0..2 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert_abs_diff_eq!(j[(row, col)], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn anosov_matches_linear_model_outside_the_ball() {
        let sys = make_system("derived_anosov_3d", &serde_json::json!({})).unwrap();
        let lin = make_system(
            "linear_torus",
            &serde_json::json!({"matrix": [[0, 1, 0], [0, 0, 1], [1, -5, 6]]}),
        )
        .unwrap();
        let r = sys.deformation_radius().unwrap();
        assert!(r < 0.1);
        let mut s = 0.17_f64;
        let mut outside = 0;
        for _ in 0..300 {
            s = (s * 839.0).fract();
            let p = [s, (s * 57.0).fract(), (s * 301.0).fract()];
            let w: Vec<f64> = p.iter().map(|&v| wrap_pm_half(v)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= r {
                continue;
            }
            outside += 1;
            assert_eq!(sys.step(&p).unwrap(), lin.step(&p).unwrap());
        }
        assert!(outside > 250);
    }

    #[test]
    fn anosov_inverse_round_trip_through_the_deformation() {
        let sys = make_system("derived_anosov_3d", &serde_json::json!({})).unwrap();
        let r = sys.deformation_radius().unwrap();
        let mut s = 0.41_f64;
        for k in 0..40 {
            s = (s * 613.0).fract();
            // half the samples land inside the deformation ball
            let scale = if k % 2 == 0 { 0.3 * r } else { 0.45 };
            let p = [
                (scale * (s - 0.5)).rem_euclid(1.0),
                (scale * (0.5 - s) * 0.7).rem_euclid(1.0),
                (scale * (s - 0.3) * 0.4).rem_euclid(1.0),
            ];
            let fwd = sys.step(&p).unwrap();
            let back = sys.inverse_step(&fwd).unwrap();
            let dist = sys.ambient().distance(&back, &p);
            assert!(dist < 1e-10, "round trip error {dist:.2e} at {p:?}");
            let fwd2 = sys.inverse_step(&p).unwrap();
            let back2 = sys.step(&fwd2).unwrap();
            let dist2 = sys.ambient().distance(&back2, &p);
            assert!(
                dist2 < 1e-10,
                "reverse round trip error {dist2:.2e} at {p:?}"
            );
        }
    }

    #[test]
    fn anosov_jacobian_agrees_with_finite_differences_inside_the_ball() {
        let sys = make_system("derived_anosov_3d", &serde_json::json!({})).unwrap();
        // pick the sample point in eigencoordinates so it lands inside the
        // bump support
        let Kind::DerivedAnosov(da) = &sys.kind else {
            unreachable!()
        };
        let ab = da.a * da.b;
        let w = da.p * Vector3::new(0.4 / da.a, 0.4 / ab, 0.3 / ab);
        let p = [
            w[0].rem_euclid(1.0),
            w[1].rem_euclid(1.0),
            w[2].rem_euclid(1.0),
        ];
        let j = sys.jacobian(&p).unwrap().matrix;
        let h = 1e-7;
        let mut nontrivial = false;
        for col in 0..3 {
            let mut xp = p;
            let mut xm = p;
            xp[col] += h;
            xm[col] -= h;
            let fp = sys.step_lift(&xp).unwrap();
            let fm = sys.step_lift(&xm).unwrap();
            for row in 0..3 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert_abs_diff_eq!(j[(row, col)], fd, epsilon = 1e-5);
                let linear = ANOSOV_MAT[row][col] as f64;
                if (j[(row, col)] - linear).abs() > 1e-4 {
                    nontrivial = true;
                }
            }
        }
        assert!(nontrivial, "sample point missed the deformation support");
    }

    #[test]
    fn anosov_parameter_validity() {
        assert!(matches!(
            make_system("derived_anosov_3d", &serde_json::json!({"a": 0.5})),
            Err(SystemError::InvalidParams { .. })
        ));
        assert!(matches!(
            make_system("derived_anosov_3d", &serde_json::json!({"kappa": 2.0})),
            Err(SystemError::InvalidParams { .. })
        ));
        assert!(matches!(
            make_system(
                "derived_anosov_3d",
                &serde_json::json!({"profile": "gauss"})
            ),
            Err(SystemError::InvalidParams { .. })
        ));
        assert!(make_system(
            "derived_anosov_3d",
            &serde_json::json!({"a": 48.0, "b": 3.0})
        )
        .is_ok());
    }

    #[test]
    fn expression_map_reproduces_cat_map() {
        let sys = make_system(
            "user_defined",
            &serde_json::json!({
                "space": {"kind": "torus", "dim": 2},
                "exprs": ["2*x + y", "x + y"],
            }),
        )
        .unwrap();
        assert!(!sys.spec().invertible);
        let cat = make_system("cat_map", &serde_json::json!({})).unwrap();
        let p = [0.37, 0.61];
        close(&sys.step(&p).unwrap(), &cat.step(&p).unwrap(), 1e-12);
        let t = sys.jacobian(&p).unwrap();
        assert!(t.approximate);
        assert_abs_diff_eq!(t.matrix[(0, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.matrix[(1, 0)], 1.0, epsilon = 1e-6);
        assert!(matches!(
            sys.evaluate(&p, -1),
            Err(SystemError::NotInvertible(_))
        ));
    }

    #[test]
    fn expression_map_with_inverse_round_trips() {
        let sys = make_system(
            "user_defined",
            &serde_json::json!({
                "space": {"kind": "torus", "dim": 1},
                "exprs": ["x + 0.25"],
                "inverse_exprs": ["x - 0.25"],
            }),
        )
        .unwrap();
        assert!(sys.spec().invertible);
        let y = sys.evaluate(&[0.9], -1).unwrap();
        close(&y, &[0.65], 1e-15);
    }

    #[test]
    fn expression_map_rejects_bad_input() {
        assert!(matches!(
            make_system(
                "user_defined",
                &serde_json::json!({"space": {"kind": "torus", "dim": 2}})
            ),
            Err(SystemError::InvalidParams { .. })
        ));
        assert!(make_system(
            "user_defined",
            &serde_json::json!({
                "space": {"kind": "torus", "dim": 2},
                "exprs": ["q + 1", "y"],
            }),
        )
        .is_err());
        assert!(make_system(
            "user_defined",
            &serde_json::json!({
                "space": {"kind": "torus", "dim": 1},
                "exprs": ["x + 0.25"],
                "inverse_exprs": ["x - 0.5"],
            }),
        )
        .is_err());
    }

    #[test]
    fn chain_rule_on_sampled_points() {
        for name in ["cat_map", "morse_gradient_t1", "derived_anosov_3d"] {
            let sys = make_system(name, &serde_json::json!({})).unwrap();
            let p: Vec<f64> = (0..sys.dim()).map(|i| 0.21 + 0.17 * i as f64).collect();
            let fp = sys.step(&p).unwrap();
            let j1 = sys.jacobian(&p).unwrap().matrix;
            let j2 = sys.jacobian(&fp).unwrap().matrix;
            let two = &j2 * &j1;
            // compare against finite differences of the two-step map
            let h = 1e-6;
            for col in 0..sys.dim() {
                let mut xp = p.clone();
                let mut xm = p.clone();
                xp[col] += h;
                xm[col] -= h;
                let a = sys.step_lift(&sys.step_lift(&xp).unwrap()).unwrap();
                let b = sys.step_lift(&sys.step_lift(&xm).unwrap()).unwrap();
                for row in 0..sys.dim() {
                    let fd = (a[row] - b[row]) / (2.0 * h);
                    assert_abs_diff_eq!(two[(row, col)], fd, epsilon = 2e-4);
                }
            }
        }
    }

    #[test]
    fn systems_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>(_: &T) {}
        let sys = make_system(
            "user_defined",
            &serde_json::json!({
                "space": {"kind": "torus", "dim": 1},
                "exprs": ["x + 0.1"],
            }),
        )
        .unwrap();
        assert_send_sync(&sys);
    }
}

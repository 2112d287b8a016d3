//! Tangent dynamics along periodic orbits: linear cocycles, exponents,
//! uniform contraction and domination at a power, Pliss indices, QR spectra,
//! and the hyperbolicity verdict for a chain class.
//!
//! The reference constant for contraction and domination is e: an N-block is
//! contracting when its norm products beat e^{-k}, and E is dominated by F
//! when N-step images from E are at most 1/e of those from F. Any base > 1
//! works; e keeps the inequalities aligned with how exponents are measured.

use crate::classes::ChainClass;
use crate::closing::PeriodicOrbit;
use crate::grid::BoxGrid;
use crate::systems::{System, SystemError};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CocycleError {
    #[error("a cocycle needs at least one matrix")]
    Empty,
    #[error("matrix {index} is {rows}x{cols}, expected {dim}x{dim}")]
    Shape {
        index: usize,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("matrix {index} is singular or too close to singular")]
    Singular { index: usize },
    #[error("matrix {index} has a non-finite entry")]
    NonFinite { index: usize },
    #[error("N = {n} out of range 1..={tau}")]
    NOutOfRange { n: usize, tau: usize },
    #[error("splitting dimensions {dim_e}+{dim_f} do not fill dimension {dim}")]
    BadSplitDimensions {
        dim_e: usize,
        dim_f: usize,
        dim: usize,
    },
    #[error("splitting is not invariant: residual {residual:.3e} above 1e-8")]
    NonInvariantSplitting { residual: f64 },
    #[error("splitting must supply one basis per orbit point")]
    SplitLength,
    #[error("spectrum failed its determinant sum check by {gap:.3e}")]
    SpectrumInconsistent { gap: f64 },
    #[error("n = {n} must be at least 10 times burn_in = {burn_in}")]
    BurnInTooLong { n: usize, burn_in: usize },
    #[error("orbit {orbit} leaves the class boxes at point {point}")]
    OrbitOutsideClass { orbit: usize, point: usize },
    #[error(transparent)]
    System(#[from] SystemError),
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values[0]
}

fn min_singular(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv[sv.len() - 1]
}

/// A τ-periodic sequence of invertible matrices, indices cyclic.
#[derive(Debug, Clone)]
pub struct PeriodicCocycle {
    matrices: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
    dim: usize,
    /// max over i of max(‖A_i‖, ‖A_i⁻¹‖), operator norm
    bound: f64,
}

impl PeriodicCocycle {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self, CocycleError> {
        if matrices.is_empty() {
            return Err(CocycleError::Empty);
        }
        let dim = matrices[0].nrows();
        let mut inverses = Vec::with_capacity(matrices.len());
        let mut bound: f64 = 0.0;
        for (index, m) in matrices.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(CocycleError::Shape {
                    index,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    dim,
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(CocycleError::NonFinite { index });
            }
            let inv = m
                .clone()
                .try_inverse()
                .filter(|i| i.iter().all(|v| v.is_finite()))
                .ok_or(CocycleError::Singular { index })?;
            bound = bound.max(op_norm(m)).max(op_norm(&inv));
            inverses.push(inv);
        }
        Ok(PeriodicCocycle {
            matrices,
            inverses,
            dim,
            bound,
        })
    }

    pub fn from_rows(matrices: &[Vec<Vec<f64>>]) -> Result<Self, CocycleError> {
        let ms = matrices
            .iter()
            .map(|rows| {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                DMatrix::from_fn(r, c, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
            })
            .collect();
        Self::new(ms)
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i % self.matrices.len()]
    }

    pub fn inverse_matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.inverses[i % self.inverses.len()]
    }

    /// Ordered product A_{i+len-1}…A_i with cyclic indices.
    pub fn block(&self, start: usize, len: usize) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.dim, self.dim);
        for k in 0..len {
            p = self.matrix(start + k) * p;
        }
        p
    }

    /// The inverse cocycle: B_i = A_{τ-1-i}⁻¹, so that its period product is
    /// the inverse of the original one.
    pub fn inverse_cocycle(&self) -> PeriodicCocycle {
        let tau = self.period();
        let ms: Vec<DMatrix<f64>> = (0..tau)
            .map(|i| self.inverses[tau - 1 - i].clone())
            .collect();
        PeriodicCocycle::new(ms).expect("inverses of invertible matrices are invertible")
    }

    /// Cyclic rotation: start the period at offset `k`.
    pub fn rotated(&self, k: usize) -> PeriodicCocycle {
        let tau = self.period();
        let ms: Vec<DMatrix<f64>> = (0..tau).map(|i| self.matrix(i + k).clone()).collect();
        PeriodicCocycle::new(ms).expect("rotation preserves invertibility")
    }
}

impl Serialize for PeriodicCocycle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let rows: Vec<Vec<Vec<f64>>> = self
            .matrices
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect()
            })
            .collect();
        let mut st = s.serialize_struct("PeriodicCocycle", 4)?;
        st.serialize_field("period", &self.period())?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("matrices", &rows)?;
        st.serialize_field("bound", &self.bound)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for PeriodicCocycle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            matrices: Vec<Vec<Vec<f64>>>,
        }
        let raw = Raw::deserialize(d)?;
        PeriodicCocycle::from_rows(&raw.matrices).map_err(serde::de::Error::custom)
    }
}

/// How a spectrum was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSource {
    ExactPeriodic,
    QrEstimate { iterations: usize, drift: f64 },
}

/// Lyapunov exponents sorted ascending, with multiplicity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    pub source: SpectrumSource,
}

/// Read the cocycle of a periodic orbit off the map's Jacobians.
pub fn cocycle_from_orbit(
    sys: &System,
    orbit: &PeriodicOrbit,
) -> Result<PeriodicCocycle, CocycleError> {
    let mut ms = Vec::with_capacity(orbit.points.len());
    for p in &orbit.points {
        let tm = sys.jacobian(p)?;
        ms.push(tm.matrix);
    }
    PeriodicCocycle::new(ms)
}

/// Exponents of a periodic cocycle: (1/τ)·log of the eigenvalue moduli of
/// the ordered period product, computed through its Schur form with running
/// rescaling so long periods cannot overflow. The determinant sum rule is
/// verified to 1e-10 before returning.
pub fn exponents_periodic(c: &PeriodicCocycle) -> Result<LyapunovSpectrum, CocycleError> {
    let tau = c.period();
    let d = c.dim();
    let mut p = DMatrix::<f64>::identity(d, d);
    let mut shift = 0.0f64;
    for i in 0..tau {
        p = c.matrix(i) * p;
        let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 1e130 {
            p /= m;
            shift += m.ln();
        }
    }
    let eigen = p.complex_eigenvalues();
    let mut exponents: Vec<f64> = eigen
        .iter()
        .map(|z| (z.norm().ln() + shift) / tau as f64)
        .collect();
    exponents.sort_by(|a, b| a.total_cmp(b));

    // Liouville check: sum of exponents against the log-determinant,
    // accumulated matrix by matrix to dodge overflow
    let logdet: f64 = (0..tau).map(|i| c.matrix(i).determinant().abs().ln()).sum();
    let gap = (exponents.iter().sum::<f64>() - logdet / tau as f64).abs();
    if !gap.is_finite() || gap > 1e-10 {
        return Err(CocycleError::SpectrumInconsistent { gap });
    }
    Ok(LyapunovSpectrum {
        exponents,
        source: SpectrumSource::ExactPeriodic,
    })
}

/// Verdict plus worst log-margin of a block inequality; `holds` iff the
/// margin is nonnegative.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarginCheck {
    pub holds: bool,
    pub margin: f64,
}

/// Uniform contraction at the period: for every cyclic offset, the product
/// of the ⌊τ/N⌋ block norms must not exceed base^{-⌊τ/N⌋}. Trailing partial
/// blocks are dropped by the floor count.
pub fn check_contraction_at_period(
    c: &PeriodicCocycle,
    n: usize,
) -> Result<MarginCheck, CocycleError> {
    check_contraction_with_base(c, n, std::f64::consts::E)
}

/// Same check against an arbitrary base > 1.
pub fn check_contraction_with_base(
    c: &PeriodicCocycle,
    n: usize,
    base: f64,
) -> Result<MarginCheck, CocycleError> {
    let tau = c.period();
    if n < 1 || n > tau {
        return Err(CocycleError::NOutOfRange { n, tau });
    }
    let blocks = tau / n;
    let ln_base = base.ln();
    let mut margin = f64::INFINITY;
    for offset in 0..tau {
        let mut sum = 0.0;
        for j in 0..blocks {
            sum += op_norm(&c.block(offset + j * n, n)).ln();
        }
        margin = margin.min(-(blocks as f64) * ln_base - sum);
    }
    Ok(MarginCheck {
        holds: margin >= 0.0,
        margin,
    })
}

/// Complementary subbundles along the orbit, one orthonormal basis pair per
/// point.
#[derive(Debug, Clone)]
pub struct SplittingSpec {
    pub dim_e: usize,
    pub dim_f: usize,
    /// d×dim_e orthonormal basis of E at each orbit point
    pub e: Vec<DMatrix<f64>>,
    /// d×dim_f orthonormal basis of F at each orbit point
    pub f: Vec<DMatrix<f64>>,
}

impl SplittingSpec {
    pub fn new(
        dim: usize,
        e: Vec<DMatrix<f64>>,
        f: Vec<DMatrix<f64>>,
    ) -> Result<Self, CocycleError> {
        if e.is_empty() || e.len() != f.len() {
            return Err(CocycleError::SplitLength);
        }
        let dim_e = e[0].ncols();
        let dim_f = f[0].ncols();
        if dim_e + dim_f != dim || dim_e == 0 || dim_f == 0 {
            return Err(CocycleError::BadSplitDimensions { dim_e, dim_f, dim });
        }
        Ok(SplittingSpec { dim_e, dim_f, e, f })
    }
}

/// Largest relative residual of the bundle under one cocycle step.
fn invariance_residual(c: &PeriodicCocycle, bases: &[DMatrix<f64>]) -> f64 {
    let tau = c.period();
    let mut worst: f64 = 0.0;
    for i in 0..tau {
        let q_next = &bases[(i + 1) % tau];
        let image = c.matrix(i) * &bases[i];
        let proj = q_next * (q_next.transpose() * &image);
        let residual = op_norm(&(&image - proj)) / op_norm(&image).max(1e-300);
        worst = worst.max(residual);
    }
    worst
}

/// Restrict the cocycle to an invariant bundle: B_i = Q_{i+1}ᵀ A_i Q_i.
pub fn restrict_cocycle(
    c: &PeriodicCocycle,
    bases: &[DMatrix<f64>],
) -> Result<PeriodicCocycle, CocycleError> {
    if bases.len() != c.period() {
        return Err(CocycleError::SplitLength);
    }
    let residual = invariance_residual(c, bases);
    if residual > 1e-8 {
        return Err(CocycleError::NonInvariantSplitting { residual });
    }
    let tau = c.period();
    let ms: Vec<DMatrix<f64>> = (0..tau)
        .map(|i| bases[(i + 1) % tau].transpose() * c.matrix(i) * &bases[i])
        .collect();
    PeriodicCocycle::new(ms)
}

/// N-step domination of E by F: at every base point the widest N-block image
/// out of E stays below 1/e of the narrowest out of F.
pub fn check_domination(
    c: &PeriodicCocycle,
    split: &SplittingSpec,
    n: usize,
) -> Result<MarginCheck, CocycleError> {
    check_domination_with_base(c, split, n, std::f64::consts::E)
}

/// Same check against an arbitrary base > 1.
pub fn check_domination_with_base(
    c: &PeriodicCocycle,
    split: &SplittingSpec,
    n: usize,
    base: f64,
) -> Result<MarginCheck, CocycleError> {
    let tau = c.period();
    if n < 1 {
        return Err(CocycleError::NOutOfRange { n, tau });
    }
    if split.e.len() != tau {
        return Err(CocycleError::SplitLength);
    }
    let re = invariance_residual(c, &split.e).max(invariance_residual(c, &split.f));
    if re > 1e-8 {
        return Err(CocycleError::NonInvariantSplitting { residual: re });
    }
    let ln_base = base.ln();
    let mut margin = f64::INFINITY;
    for i in 0..tau {
        let block = c.block(i, n);
        let e_img = &block * &split.e[i];
        let f_img = &block * &split.f[i];
        let top = op_norm(&e_img);
        let bot = min_singular(&f_img);
        margin = margin.min(bot.ln() - ln_base - top.ln());
    }
    Ok(MarginCheck {
        holds: margin >= 0.0,
        margin,
    })
}

/// Pliss indices of a cocycle (already restricted to the bundle of
/// interest): start offsets whose forward N-block norm products stay below
/// e^{-k} for every k up to a full padded period. When N does not divide τ
/// the period is padded to lcm(τ, N) by cyclic repetition, and the
/// proportion refers to the padded length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlissReport {
    pub bundle: String,
    pub n: usize,
    /// padded period the indices range over
    pub period: usize,
    pub indices: Vec<usize>,
    pub proportion: f64,
}

pub fn pliss_points(
    c: &PeriodicCocycle,
    n: usize,
    bundle: &str,
) -> Result<PlissReport, CocycleError> {
    let tau = c.period();
    if n < 1 || n > tau {
        return Err(CocycleError::NOutOfRange { n, tau });
    }
    let padded = lcm(tau, n);
    let blocks = padded / n;
    // block log-norms by start residue
    let ln_norm: Vec<f64> = (0..tau).map(|s| op_norm(&c.block(s, n)).ln()).collect();
    let is_pliss = |i: usize, upto: usize| -> bool {
        let mut sum = 0.0;
        for k in 1..=upto {
            sum += ln_norm[(i + (k - 1) * n) % tau];
            if sum > -(k as f64) {
                return false;
            }
        }
        true
    };
    let indices: Vec<usize> = (0..padded).filter(|&i| is_pliss(i, blocks)).collect();
    // the one-period scan is complete by periodicity; the doubled scan
    // re-verifies that no listed index fails deeper in
    for &i in &indices {
        debug_assert!(is_pliss(i, 2 * blocks));
    }
    let proportion = indices.len() as f64 / padded as f64;
    Ok(PlissReport {
        bundle: bundle.to_string(),
        n,
        period: padded,
        indices,
        proportion,
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// QR-accumulated Lyapunov exponents along a forward orbit. The first
/// `burn_in` steps align the frame without being counted; the drift field
/// compares the estimate at half the counted span against the final one.
pub fn lyapunov_qr(
    sys: &System,
    start: &[f64],
    n: usize,
    burn_in: usize,
) -> Result<LyapunovSpectrum, CocycleError> {
    if n < 10 * burn_in.max(1) {
        return Err(CocycleError::BurnInTooLong { n, burn_in });
    }
    let d = sys.dim();
    let mut x = start.to_vec();
    sys.ambient()
        .canonicalize(&mut x)
        .map_err(SystemError::from)?;
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut acc = DVector::<f64>::zeros(d);
    let mut half_estimate: Option<Vec<f64>> = None;
    let counted = n - burn_in;
    let mut seen = 0usize;
    for step in 0..n {
        let tm = sys.jacobian(&x)?;
        if tm.matrix.iter().any(|v| !v.is_finite()) {
            return Err(CocycleError::NonFinite { index: step });
        }
        let m = tm.matrix * &q;
        let qr = m.qr();
        let r = qr.r();
        q = qr.q();
        // fix signs so the diagonal of R is positive
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                for i in 0..d {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        if step >= burn_in {
            for j in 0..d {
                acc[j] += r[(j, j)].abs().max(1e-300).ln();
            }
            seen += 1;
            if seen == counted / 2 {
                let mut est: Vec<f64> = (0..d).map(|j| acc[j] / seen as f64).collect();
                est.sort_by(|a, b| a.total_cmp(b));
                half_estimate = Some(est);
            }
        }
        x = sys.step(&x)?;
    }
    let mut exponents: Vec<f64> = (0..d).map(|j| acc[j] / seen as f64).collect();
    exponents.sort_by(|a, b| a.total_cmp(b));
    let drift = match &half_estimate {
        Some(h) => exponents
            .iter()
            .zip(h)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max),
        None => f64::NAN,
    };
    Ok(LyapunovSpectrum {
        exponents,
        source: SpectrumSource::QrEstimate {
            iterations: seen,
            drift,
        },
    })
}

/// Exponent data attached to one closed orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitHyperbolicity {
    pub exponents: Vec<f64>,
    /// stable dimension: the count of negative exponents
    pub index: usize,
}

/// Hyperbolicity verdict for a chain class from its sampled periodic orbits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub verdict: String,
    pub orbits: Vec<OrbitHyperbolicity>,
    /// power at which the stable/unstable splitting was seen dominated
    pub dominated_at: Option<usize>,
    pub zero_tolerance: f64,
}

/// Orthonormalize the columns of a matrix.
/// Orthonormalize columns by modified Gram-Schmidt (with one
/// re-orthogonalization pass). Householder QR injects absolute eps-size
/// components into near-axis columns, and strong hyperbolicity amplifies
/// those into O(1) invariance error; Gram-Schmidt keeps negligible
/// components negligible, so an exactly invariant axis stays exact.
fn orth(m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let n = m.ncols();
    let mut cols: Vec<DVector<f64>> = (0..n).map(|j| m.column(j).into_owned()).collect();
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let r = cols[k].dot(&cols[j]);
                let correction = &cols[k] * r;
                cols[j] -= correction;
            }
        }
        let norm = cols[j].norm();
        if norm > 1e-300 {
            cols[j] /= norm;
        } else {
            // Degenerate column: substitute the first axis vector independent
            // of the columns already fixed.
            for axis in 0..d {
                let mut v = DVector::<f64>::zeros(d);
                v[axis] = 1.0;
                for k in 0..j {
                    let r = cols[k].dot(&v);
                    let correction = &cols[k] * r;
                    v -= correction;
                }
                if v.norm() > 0.5 {
                    cols[j] = v.normalize();
                    break;
                }
            }
        }
    }
    DMatrix::from_columns(&cols)
}

/// Dominant invariant subspace of the cocycle at base point 0 by subspace
/// iteration with per-step re-orthonormalization; `forward` selects the
/// expanding (period product) or contracting (inverse product) side.
fn dominant_bundle(c: &PeriodicCocycle, dim: usize, forward: bool) -> DMatrix<f64> {
    let d = c.dim();
    let tau = c.period();
    // A generic (dense, fixed-seed) start frame: axis-aligned starts can sit
    // exactly on a complementary invariant subspace of a diagonal cocycle and
    // never rotate toward the dominant one.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e55ed);
    let mut q = orth(DMatrix::<f64>::from_fn(d, dim, |_, _| {
        rng.random_range(-1.0..1.0)
    }));
    let mut prev = q.clone();
    for sweep in 0..200 {
        if forward {
            for i in 0..tau {
                q = orth(c.matrix(i) * q);
            }
        } else {
            for i in (0..tau).rev() {
                q = orth(c.inverse_matrix(i) * q);
            }
        }
        let drift = op_norm(&(&q * q.transpose() - &prev * prev.transpose()));
        if sweep > 2 && drift < 1e-14 {
            break;
        }
        prev = q.clone();
    }
    q
}

/// Stable/unstable splitting along the orbit from the periodic products:
/// the unstable bundle is propagated forward, the stable one backward, each
/// direction being the numerically attracting one.
pub fn orbit_splitting(
    c: &PeriodicCocycle,
    stable_dim: usize,
) -> Result<SplittingSpec, CocycleError> {
    let d = c.dim();
    let tau = c.period();
    let unstable_dim = d - stable_dim;
    let s0 = dominant_bundle(c, stable_dim, false);
    let u0 = dominant_bundle(c, unstable_dim, true);
    let mut e = vec![s0; tau];
    let mut f = vec![u0; tau];
    for i in 0..tau.saturating_sub(1) {
        f[i + 1] = orth(c.matrix(i) * &f[i]);
    }
    for i in (1..tau).rev() {
        e[i] = orth(c.inverse_matrix(i) * &e[(i + 1) % tau]);
    }
    SplittingSpec::new(d, e, f)
}

/// Classify a chain class from periodic orbits sampled inside it. Every
/// orbit contributes its exponent signature; the verdicts are sink, source,
/// saddle with its index (requiring a dominated stable/unstable splitting at
/// some power up to `n_max`), mixed-index when orbits disagree, nonuniform
/// when exponents hug zero or domination fails, and an explicit
/// "unclassified" marker when no orbit data exists.
pub fn classify_class(
    sys: &System,
    class: &ChainClass,
    orbits: &[PeriodicOrbit],
    n_max: usize,
) -> Result<ClassificationRecord, CocycleError> {
    classify_class_with_tolerance(sys, class, orbits, n_max, 1e-3)
}

pub fn classify_class_with_tolerance(
    sys: &System,
    class: &ChainClass,
    orbits: &[PeriodicOrbit],
    n_max: usize,
    zero_tolerance: f64,
) -> Result<ClassificationRecord, CocycleError> {
    if orbits.is_empty() {
        return Ok(ClassificationRecord {
            verdict: "unclassified: no periodic data".to_string(),
            orbits: Vec::new(),
            dominated_at: None,
            zero_tolerance,
        });
    }
    // the orbits must live in the class's boxes
    let grid = BoxGrid::new(sys.ambient().clone(), class.boxes.depth())
        .map_err(|_| CocycleError::OrbitOutsideClass { orbit: 0, point: 0 })?;
    for (oi, orbit) in orbits.iter().enumerate() {
        for (pi, p) in orbit.points.iter().enumerate() {
            let b = grid
                .box_of(p)
                .map_err(|_| CocycleError::OrbitOutsideClass {
                    orbit: oi,
                    point: pi,
                })?;
            if !class.boxes.contains(grid.linear_id(&b.multi)) {
                return Err(CocycleError::OrbitOutsideClass {
                    orbit: oi,
                    point: pi,
                });
            }
        }
    }

    let mut records = Vec::with_capacity(orbits.len());
    let mut cocycles = Vec::with_capacity(orbits.len());
    let mut near_zero = false;
    for orbit in orbits {
        let c = cocycle_from_orbit(sys, orbit)?;
        let spec = exponents_periodic(&c)?;
        near_zero |= spec.exponents.iter().any(|l| l.abs() <= zero_tolerance);
        let index = spec.exponents.iter().filter(|&&l| l < 0.0).count();
        records.push(OrbitHyperbolicity {
            exponents: spec.exponents,
            index,
        });
        cocycles.push(c);
    }

    let d = sys.dim();
    let verdict;
    let mut dominated_at = None;
    if near_zero {
        verdict = "nonuniform".to_string();
    } else {
        let indices: std::collections::BTreeSet<usize> = records.iter().map(|r| r.index).collect();
        if indices.len() > 1 {
            verdict = "mixed-index".to_string();
        } else {
            let index = *indices.iter().next().unwrap();
            if index == d {
                verdict = "sink".to_string();
            } else if index == 0 {
                verdict = "source".to_string();
            } else {
                // saddle candidate: need domination of the splitting at a
                // common power
                let mut found = None;
                'power: for n in 1..=n_max.max(1) {
                    for c in &cocycles {
                        let split = orbit_splitting(c, index)?;
                        let ok = check_domination(c, &split, n)
                            .map(|m| m.holds)
                            .unwrap_or(false);
                        if !ok {
                            continue 'power;
                        }
                    }
                    found = Some(n);
                    break;
                }
                match found {
                    Some(n) => {
                        dominated_at = Some(n);
                        verdict = format!("saddle, index {index}");
                    }
                    None => verdict = "nonuniform".to_string(),
                }
            }
        }
    }
    Ok(ClassificationRecord {
        verdict,
        orbits: records,
        dominated_at,
        zero_tolerance,
    })
}

/// Whether cocycle `b` is a step-wise ε-perturbation of `a`, by the largest
/// operator-norm distance between corresponding matrices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub same_period: bool,
    pub max_distance: f64,
    pub within: bool,
}

pub fn check_perturbation(a: &PeriodicCocycle, b: &PeriodicCocycle, eps: f64) -> PerturbationCheck {
    if a.period() != b.period() || a.dim() != b.dim() {
        return PerturbationCheck {
            same_period: false,
            max_distance: f64::INFINITY,
            within: false,
        };
    }
    let max_distance = (0..a.period())
        .map(|i| op_norm(&(a.matrix(i) - b.matrix(i))))
        .fold(0.0f64, f64::max);
    PerturbationCheck {
        same_period: true,
        max_distance,
        within: max_distance <= eps,
    }
}

/// Spectral facts about the period product that the perturbation
/// dichotomies talk about: a positive exponent, all-real eigenvalues, and
/// eigenvalues of one common modulus.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub has_positive_exponent: bool,
    pub all_real: bool,
    pub equal_moduli: bool,
}

pub fn spectral_summary(c: &PeriodicCocycle, tol: f64) -> Result<SpectralSummary, CocycleError> {
    let tau = c.period();
    let mut p = DMatrix::<f64>::identity(c.dim(), c.dim());
    for i in 0..tau {
        p = c.matrix(i) * p;
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(CocycleError::NonFinite { index: 0 });
    }
    let eigen = p.complex_eigenvalues();
    let spec = exponents_periodic(c)?;
    let has_positive_exponent = spec.exponents.iter().any(|&l| l > tol);
    let all_real = eigen.iter().all(|z| z.im.abs() <= tol * z.norm().max(1.0));
    let moduli: Vec<f64> = eigen.iter().map(|z| z.norm()).collect();
    let equal_moduli = moduli
        .iter()
        .all(|m| (m - moduli[0]).abs() <= tol * moduli[0].max(1.0));
    Ok(SpectralSummary {
        has_positive_exponent,
        all_real,
        equal_moduli,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closing::{close_to_periodic, PseudoOrbit};
    use crate::grid::BoxSet;
    use crate::systems::make_system;
    use approx::assert_abs_diff_eq;

    const CAT_EXPONENT: f64 = 0.962_423_650_119_206_9;

    fn cat() -> System {
        make_system("cat_map", &serde_json::json!({})).unwrap()
    }

    fn fixed_point_orbit(sys: &System, p: Vec<f64>) -> PeriodicOrbit {
        let po = PseudoOrbit::from_points(sys, vec![p.clone(), p.clone()]).unwrap();
        match close_to_periodic(sys, &po, 1e-10) {
            Ok(res) => res.orbit,
            // non-hyperbolic fixed points cannot be closed by Newton; the
            // orbit is handed over literally
            Err(_) => PeriodicOrbit {
                representative: p.clone(),
                period: 1,
                points: vec![p],
                residual: 0.0,
                hyperbolicity: None,
            },
        }
    }

    fn diag_cocycle(entries: &[Vec<f64>]) -> PeriodicCocycle {
        let ms: Vec<DMatrix<f64>> = entries
            .iter()
            .map(|e| DMatrix::from_diagonal(&DVector::from_vec(e.clone())))
            .collect();
        PeriodicCocycle::new(ms).unwrap()
    }

    #[test]
    fn cat_fixed_point_cocycle_bound_is_the_expansion_rate() {
        let sys = cat();
        let orbit = fixed_point_orbit(&sys, vec![0.0, 0.0]);
        let c = cocycle_from_orbit(&sys, &orbit).unwrap();
        assert_eq!(c.period(), 1);
        assert_eq!(c.matrix(0)[(0, 0)], 2.0);
        assert_abs_diff_eq!(c.bound(), (3.0 + 5.0f64.sqrt()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cat_period_two_product_by_hand() {
        let sys = cat();
        let po =
            PseudoOrbit::from_points(&sys, vec![vec![0.2, 0.4], vec![0.8, 0.6], vec![0.2, 0.4]])
                .unwrap();
        let orbit = close_to_periodic(&sys, &po, 1e-10).unwrap().orbit;
        let c = cocycle_from_orbit(&sys, &orbit).unwrap();
        let p = c.block(0, 2);
        assert_eq!(
            (p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]),
            (5.0, 3.0, 3.0, 2.0)
        );
    }

    #[test]
    fn identity_cocycle_has_unit_bound() {
        let sys = make_system("identity", &serde_json::json!({"d": 3})).unwrap();
        let orbit = fixed_point_orbit(&sys, vec![0.2, 0.3, 0.4]);
        let c = cocycle_from_orbit(&sys, &orbit).unwrap();
        assert_eq!(c.bound(), 1.0);
    }

    #[test]
    fn cat_exponents_match_the_closed_form() {
        let sys = cat();
        let orbit = fixed_point_orbit(&sys, vec![0.0, 0.0]);
        let c = cocycle_from_orbit(&sys, &orbit).unwrap();
        let spec = exponents_periodic(&c).unwrap();
        assert_abs_diff_eq!(spec.exponents[0], -CAT_EXPONENT, epsilon = 1e-9);
        assert_abs_diff_eq!(spec.exponents[1], CAT_EXPONENT, epsilon = 1e-9);
        assert_eq!(spec.source, SpectrumSource::ExactPeriodic);
    }

    #[test]
    fn period_two_diagonal_swap_has_zero_exponents() {
        let c = diag_cocycle(&[vec![2.0, 0.5], vec![0.5, 2.0]]);
        let spec = exponents_periodic(&c).unwrap();
        assert_abs_diff_eq!(spec.exponents[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.exponents[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cat_period_two_spectrum_equals_fixed_point_spectrum() {
        let sys = cat();
        let po =
            PseudoOrbit::from_points(&sys, vec![vec![0.2, 0.4], vec![0.8, 0.6], vec![0.2, 0.4]])
                .unwrap();
        let orbit = close_to_periodic(&sys, &po, 1e-10).unwrap().orbit;
        let c = cocycle_from_orbit(&sys, &orbit).unwrap();
        let spec = exponents_periodic(&c).unwrap();
        assert_abs_diff_eq!(spec.exponents[1], CAT_EXPONENT, epsilon = 1e-9);
    }

    #[test]
    fn contraction_truth_table() {
        let quarter = diag_cocycle(&vec![vec![0.25, 0.25]; 8]);
        let check = check_contraction_at_period(&quarter, 1).unwrap();
        assert!(check.holds);
        assert!(check.margin > 0.0);

        let half = diag_cocycle(&vec![vec![0.5, 0.5]; 8]);
        assert!(!check_contraction_at_period(&half, 1).unwrap().holds);
        assert!(check_contraction_at_period(&half, 2).unwrap().holds);

        let id = diag_cocycle(&vec![vec![1.0, 1.0]; 4]);
        for n in 1..=4 {
            assert!(!check_contraction_at_period(&id, n).unwrap().holds);
        }
        assert!(matches!(
            check_contraction_at_period(&id, 9),
            Err(CocycleError::NOutOfRange { .. })
        ));
    }

    #[test]
    fn cat_is_one_dominated_with_the_known_margin() {
        let sys = cat();
        let orbit = fixed_point_orbit(&sys, vec![0.0, 0.0]);
        let c = cocycle_from_orbit(&sys, &orbit).unwrap();
        let split = orbit_splitting(&c, 1).unwrap();
        let check = check_domination(&c, &split, 1).unwrap();
        assert!(check.holds);
        // ratio of the eigenvalues against 1/e
        let ls = (3.0 - 5.0f64.sqrt()) / 2.0;
        let lu = (3.0 + 5.0f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(check.margin, lu.ln() - 1.0 - ls.ln(), epsilon = 1e-9);
    }

    #[test]
    fn domination_direction_and_power() {
        let c = diag_cocycle(&[vec![1.0, 0.5]]);
        let e = vec![DMatrix::from_column_slice(2, 1, &[0.0, 1.0])];
        let f = vec![DMatrix::from_column_slice(2, 1, &[1.0, 0.0])];
        let split = SplittingSpec::new(2, e.clone(), f.clone()).unwrap();
        assert!(!check_domination(&c, &split, 1).unwrap().holds);
        assert!(check_domination(&c, &split, 2).unwrap().holds);
        // swapping E and F must fail
        let swapped = SplittingSpec::new(2, f, e).unwrap();
        assert!(!check_domination(&c, &swapped, 2).unwrap().holds);
    }

    #[test]
    fn domination_rejects_non_invariant_splitting() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let c = PeriodicCocycle::new(vec![m]).unwrap();
        let e = vec![DMatrix::from_column_slice(2, 1, &[1.0, 0.0])];
        let f = vec![DMatrix::from_column_slice(2, 1, &[0.0, 1.0])];
        let split = SplittingSpec::new(2, e, f).unwrap();
        assert!(matches!(
            check_domination(&c, &split, 1),
            Err(CocycleError::NonInvariantSplitting { .. })
        ));
    }

    #[test]
    fn pliss_points_on_the_uneven_cocycle() {
        let c = diag_cocycle(&[
            vec![0.125, 0.125],
            vec![0.125, 0.125],
            vec![0.125, 0.125],
            vec![2.0, 2.0],
        ]);
        let report = pliss_points(&c, 1, "E").unwrap();
        assert_eq!(report.indices, vec![0, 1]);
        assert_abs_diff_eq!(report.proportion, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pliss_edge_cases() {
        let constant = diag_cocycle(&vec![vec![0.25, 0.25]; 4]);
        let report = pliss_points(&constant, 1, "E").unwrap();
        assert_eq!(report.indices.len(), 4);
        assert_eq!(report.proportion, 1.0);

        let id = diag_cocycle(&vec![vec![1.0, 1.0]; 4]);
        let report = pliss_points(&id, 1, "E").unwrap();
        assert!(report.indices.is_empty());
        assert_eq!(report.proportion, 0.0);

        // padding: period 3 with N = 2 scans lcm = 6 indices
        let c3 = diag_cocycle(&vec![vec![0.1, 0.1]; 3]);
        let padded = pliss_points(&c3, 2, "E").unwrap();
        assert_eq!(padded.period, 6);
        assert_eq!(padded.indices.len(), 6);
    }

    #[test]
    fn qr_exponents_identity_and_cat() {
        let id = make_system("identity", &serde_json::json!({"d": 2})).unwrap();
        let spec = lyapunov_qr(&id, &[0.3, 0.8], 200, 10).unwrap();
        assert_eq!(spec.exponents, vec![0.0, 0.0]);

        let sys = cat();
        let spec = lyapunov_qr(&sys, &[0.123, 0.456], 10_000, 100).unwrap();
        assert_abs_diff_eq!(spec.exponents[0], -CAT_EXPONENT, epsilon = 1e-3);
        assert_abs_diff_eq!(spec.exponents[1], CAT_EXPONENT, epsilon = 1e-3);
        let SpectrumSource::QrEstimate { drift, .. } = spec.source else {
            panic!("expected a QR estimate tag");
        };
        assert!(drift < 1e-6);
    }

    #[test]
    fn qr_burn_in_precondition() {
        let sys = cat();
        assert!(matches!(
            lyapunov_qr(&sys, &[0.1, 0.2], 50, 10),
            Err(CocycleError::BurnInTooLong { .. })
        ));
    }

    #[test]
    fn classify_cat_fixed_point_as_saddle() {
        let sys = cat();
        let orbit = fixed_point_orbit(&sys, vec![0.0, 0.0]);
        let grid = BoxGrid::new(sys.ambient().clone(), 5).unwrap();
        let class = ChainClass {
            id: 0,
            boxes: BoxSet::new(5, vec![grid.linear_id(&[0, 0])]),
            recurrent: true,
        };
        let rec = classify_class(&sys, &class, &[orbit], 4).unwrap();
        assert_eq!(rec.verdict, "saddle, index 1");
        assert_eq!(rec.dominated_at, Some(1));
        assert_eq!(rec.orbits[0].index, 1);
    }

    #[test]
    fn classify_identity_as_nonuniform_and_empty_as_unclassified() {
        let sys = make_system("identity", &serde_json::json!({"d": 2})).unwrap();
        let orbit = fixed_point_orbit(&sys, vec![0.25, 0.25]);
        let grid = BoxGrid::new(sys.ambient().clone(), 2).unwrap();
        let class = ChainClass {
            id: 0,
            boxes: BoxSet::new(2, vec![grid.linear_id(&[1, 1])]),
            recurrent: true,
        };
        let rec = classify_class(&sys, &class, &[orbit], 2).unwrap();
        assert_eq!(rec.verdict, "nonuniform");
        let rec = classify_class(&sys, &class, &[], 2).unwrap();
        assert_eq!(rec.verdict, "unclassified: no periodic data");
    }

    #[test]
    fn perturbation_and_spectral_checkers() {
        let a = diag_cocycle(&[vec![2.0, 0.5]]);
        let b = diag_cocycle(&[vec![2.05, 0.5]]);
        let chk = check_perturbation(&a, &b, 0.1);
        assert!(chk.within);
        assert_abs_diff_eq!(chk.max_distance, 0.05, epsilon = 1e-12);
        let sum = spectral_summary(&a, 1e-9).unwrap();
        assert!(sum.has_positive_exponent);
        assert!(sum.all_real);
        assert!(!sum.equal_moduli);

        let rot = PeriodicCocycle::new(vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])])
            .unwrap();
        let sum = spectral_summary(&rot, 1e-9).unwrap();
        assert!(!sum.has_positive_exponent);
        assert!(!sum.all_real);
        assert!(sum.equal_moduli);
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let c = diag_cocycle(&[vec![2.0, 0.5], vec![0.5, 2.0]]);
        let json = serde_json::to_string(&c).unwrap();
        let back: PeriodicCocycle = serde_json::from_str(&json).unwrap();
        assert_eq!(back.period(), 2);
        assert_eq!(back.matrix(0)[(0, 0)], 2.0);
        let singular = serde_json::json!({"matrices": [[[1.0, 0.0], [2.0, 0.0]]]});
        assert!(serde_json::from_value::<PeriodicCocycle>(singular).is_err());
    }
}

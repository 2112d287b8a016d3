//! Pseudo-orbits, return-pair selection, and closing to periodic orbits.
//!
//! A pseudo-orbit tolerates a jump of at most ε after each application of
//! the map. The nested-cube selection picks, out of a finite set of returns
//! to a chart cube, a pair (y, x = f^t(y)) whose intermediate iterates all
//! stay clear of the slightly inflated cube; halving cubes make the search
//! combinatorial, not metric. Closing then solves f^τ(x) = x by a damped
//! Newton iteration on the universal cover, and weak shadowing looks for a
//! true orbit segment Hausdorff-close to a given pseudo-orbit.

use crate::grid::BoxGrid;
use crate::space::{hausdorff_distance, Ambient, SpaceError};
use crate::systems::{System, SystemError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClosingError {
    #[error("a pseudo-orbit needs at least two points, got {0}")]
    TooShort(usize),
    #[error("pseudo-orbit is not periodic: first and last point differ")]
    NotPeriodic,
    #[error("step {step} jumps {jump:.4} along axis {axis}, too ambiguous to lift")]
    AmbiguousLift { step: usize, axis: usize, jump: f64 },
    #[error("Newton did not converge after {iterations} iterations, last residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Df^τ has eigenvalue 1: the closing problem is degenerate")]
    EigenvalueOneDegeneracy,
    #[error("return list must have strictly increasing iterate indices")]
    UnorderedReturns,
    #[error("need at least two returns, got {0}")]
    TooFewReturns(usize),
    #[error("initial pair lies outside the starting cube")]
    PairOutsideCube,
    #[error("cube expansion factor {0} violates (1+ε)^(3^d) ≤ 3/2")]
    ExpansionTooLarge(f64),
    #[error("chart point dimension mismatch")]
    ChartDimension,
    #[error("selected triple failed its own validity scan")]
    SelectionInvalid,
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// A finite ε-pseudo-orbit: consecutive points within ε of the true image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoOrbit {
    pub points: Vec<Vec<f64>>,
    /// max over steps of d(f(z_i), z_{i+1}), recomputed on construction
    pub jump_bound: f64,
    /// last point coincides with the first
    pub periodic: bool,
}

impl PseudoOrbit {
    /// Wrap a raw point list, canonicalizing and measuring every jump.
    pub fn from_points(sys: &System, mut points: Vec<Vec<f64>>) -> Result<Self, ClosingError> {
        if points.len() < 2 {
            return Err(ClosingError::TooShort(points.len()));
        }
        let ambient = sys.ambient();
        for p in points.iter_mut() {
            ambient.check_dim(p.len())?;
            ambient.canonicalize(p)?;
        }
        let mut jump_bound: f64 = 0.0;
        for i in 0..points.len() - 1 {
            let img = sys.step(&points[i])?;
            jump_bound = jump_bound.max(ambient.distance(&img, &points[i + 1]));
        }
        let periodic = points.first() == points.last();
        Ok(PseudoOrbit {
            points,
            jump_bound,
            periodic,
        })
    }

    /// Number of steps (one less than the number of points).
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }
}

/// Generate a seeded pseudo-orbit: each step applies the map and adds a
/// uniform perturbation of norm at most ε, so the jump bound is ≤ ε by
/// construction and the sequence is reproducible from the seed.
pub fn generate_pseudo_orbit(
    sys: &System,
    start: &[f64],
    n: usize,
    epsilon: f64,
    seed: u64,
) -> Result<PseudoOrbit, ClosingError> {
    let ambient = sys.ambient();
    ambient.check_dim(start.len())?;
    let n = n.max(1);
    let d = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n + 1);
    let mut z = start.to_vec();
    ambient.canonicalize(&mut z)?;
    points.push(z.clone());
    for _ in 0..n {
        let mut next = sys.step(&z)?;
        if epsilon > 0.0 {
            // uniform in the euclidean ε-ball, by rejection from the cube
            let kick: Vec<f64> = loop {
                let v: Vec<f64> = (0..d)
                    .map(|_| rng.random_range(-epsilon..=epsilon))
                    .collect();
                if v.iter().map(|x| x * x).sum::<f64>() <= epsilon * epsilon {
                    break v;
                }
            };
            for (c, k) in next.iter_mut().zip(&kick) {
                *c += k;
            }
            ambient.canonicalize(&mut next)?;
        }
        points.push(next.clone());
        z = next;
    }
    PseudoOrbit::from_points(sys, points)
}

/// A point of a return set in chart coordinates, tagged with its iterate
/// index along the underlying orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub coords: Vec<f64>,
    pub iterate: usize,
}

/// Axis-aligned cube in chart coordinates, sup-norm radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Cube {
    pub fn contains(&self, p: &[f64], inflation: f64) -> bool {
        let r = self.radius * inflation;
        self.center.iter().zip(p).all(|(c, x)| (x - c).abs() <= r)
    }
}

/// Output of the nested-cube selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosingTriple {
    /// later return, x = f^t(y) with t ≥ 1
    pub x: ChartPoint,
    /// earlier return
    pub y: ChartPoint,
    pub cube: Cube,
    pub eps_cube: f64,
}

/// Exhaustive validity scan for a closing triple against the full return
/// list: (1) x is a strictly later iterate than y, (2) both lie in the cube,
/// (3) no intermediate return lies in the (1+ε)-inflated cube.
pub fn verify_closing_triple(returns: &[ChartPoint], triple: &ClosingTriple) -> bool {
    if triple.x.iterate <= triple.y.iterate {
        return false;
    }
    if !triple.cube.contains(&triple.x.coords, 1.0) || !triple.cube.contains(&triple.y.coords, 1.0)
    {
        return false;
    }
    !returns.iter().any(|z| {
        z.iterate > triple.y.iterate
            && z.iterate < triple.x.iterate
            && triple.cube.contains(&z.coords, 1.0 + triple.eps_cube)
    })
}

/// Pick a closing pair from a finite return set by the nested-cube
/// recursion: while some intermediate return invades the inflated cube,
/// shrink to the tighter sub-pair; when two collected invaders land in one of
/// the 3^d half-radius subcubes of the (3/2)-cube, descend into that subcube.
/// Radii halve at each descent, so the final triple isolates its pair.
pub fn select_closing_pair(
    returns: &[ChartPoint],
    c0: &Cube,
    eps_cube: f64,
) -> Result<ClosingTriple, ClosingError> {
    if returns.len() < 2 {
        return Err(ClosingError::TooFewReturns(returns.len()));
    }
    let d = c0.center.len();
    if returns.iter().any(|p| p.coords.len() != d) {
        return Err(ClosingError::ChartDimension);
    }
    if returns.windows(2).any(|w| w[0].iterate >= w[1].iterate) {
        return Err(ClosingError::UnorderedReturns);
    }
    let l = 3usize.pow(d as u32);
    if (1.0 + eps_cube).powi(l as i32) > 1.5 + 1e-12 || eps_cube < 0.0 {
        return Err(ClosingError::ExpansionTooLarge(eps_cube));
    }
    let mut y = returns.first().unwrap().clone();
    let mut x = returns.last().unwrap().clone();
    if !c0.contains(&y.coords, 1.0) || !c0.contains(&x.coords, 1.0) {
        return Err(ClosingError::PairOutsideCube);
    }
    let mut cube = c0.clone();

    'outer: loop {
        // invaders collected at this cube level all lie in (1+ε)·cube,
        // hence in (3/2)·cube; two of them sharing a half-radius subcube
        // trigger a descent
        let mut collected: Vec<ChartPoint> = Vec::new();
        loop {
            let invader = returns
                .iter()
                .find(|z| {
                    z.iterate > y.iterate
                        && z.iterate < x.iterate
                        && cube.contains(&z.coords, 1.0 + eps_cube)
                })
                .cloned();
            let Some(z) = invader else {
                // condition 3 holds for the current pair
                break 'outer;
            };
            for w in &collected {
                if let Some(sub) = shared_subcube(&cube, &w.coords, &z.coords) {
                    let (a, b) = if w.iterate < z.iterate {
                        (w.clone(), z.clone())
                    } else {
                        (z.clone(), w.clone())
                    };
                    y = a;
                    x = b;
                    cube = sub;
                    continue 'outer;
                }
            }
            collected.push(z.clone());
            // replace the pair by the tighter sub-pair around the invader
            if z.iterate - y.iterate <= x.iterate - z.iterate {
                x = z;
            } else {
                y = z;
            }
        }
    }

    let triple = ClosingTriple {
        x,
        y,
        cube,
        eps_cube,
    };
    if !verify_closing_triple(returns, &triple) {
        return Err(ClosingError::SelectionInvalid);
    }
    Ok(triple)
}

/// The 3^d half-radius subcubes of (3/2)·cube tile it with centers offset by
/// {-r, 0, +r} per axis; two points share one exactly when they round to the
/// same offsets and fit inside it.
fn shared_subcube(cube: &Cube, p: &[f64], q: &[f64]) -> Option<Cube> {
    let r = cube.radius;
    let mut center = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let kp = ((p[i] - cube.center[i]) / r).round().clamp(-1.0, 1.0);
        let kq = ((q[i] - cube.center[i]) / r).round().clamp(-1.0, 1.0);
        if kp != kq {
            return None;
        }
        center.push(cube.center[i] + kp * r);
    }
    let sub = Cube {
        center,
        radius: r / 2.0,
    };
    (sub.contains(p, 1.0) && sub.contains(q, 1.0)).then_some(sub)
}

/// A closed orbit found by the Newton solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub representative: Vec<f64>,
    pub period: usize,
    pub points: Vec<Vec<f64>>,
    /// d(f^τ(x), x) at the accepted solution
    pub residual: f64,
    /// filled in by the tangent-dynamics layer
    pub hyperbolicity: Option<crate::cocycle::OrbitHyperbolicity>,
}

/// Closing outcome: the orbit plus how far it sits from the pseudo-orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosingResult {
    pub orbit: PeriodicOrbit,
    pub hausdorff_to_pseudo: f64,
    pub iterations: usize,
    pub winding: Vec<i64>,
}

/// Lift a pseudo-orbit to the cover: follow the map's lift and absorb each
/// jump by its nearest representative. Jumps beyond 1/4 along an axis are
/// ambiguous and rejected.
/// Integer winding of each pseudo-orbit step: the lattice shift between the
/// lifted image of z_i (taken from its canonical representative, so nothing
/// ever grows) and z_{i+1}. A fractional part beyond 1/4 leaves the nearest
/// representative ambiguous and is refused.
fn per_step_windings(sys: &System, po: &PseudoOrbit) -> Result<Vec<Vec<i64>>, ClosingError> {
    let d = sys.dim();
    let torus = sys.ambient().is_torus();
    let mut windings = Vec::with_capacity(po.points.len() - 1);
    for i in 0..po.points.len() - 1 {
        let img = sys.step_lift(&po.points[i])?;
        let mut k = Vec::with_capacity(d);
        for a in 0..d {
            let raw = img[a] - po.points[i + 1][a];
            let shift = if torus { raw.round() } else { 0.0 };
            if (raw - shift).abs() > 0.25 {
                return Err(ClosingError::AmbiguousLift {
                    step: i,
                    axis: a,
                    jump: (raw - shift).abs(),
                });
            }
            k.push(shift as i64);
        }
        windings.push(k);
    }
    Ok(windings)
}

/// Evaluate the lifted τ-fold map and its Jacobian at a cover point.
/// Iterate the lift while unwinding the fixed per-step lattice shifts, so
/// the trajectory stays next to the pseudo-orbit instead of running off to
/// the cover. Returns F^tau(x) - sum(windings) and the Jacobian product.
fn iterate_unwound(
    sys: &System,
    x: &[f64],
    windings: &[Vec<i64>],
) -> Result<(Vec<f64>, DMatrix<f64>), ClosingError> {
    let d = sys.dim();
    let mut p = x.to_vec();
    let mut jac = DMatrix::identity(d, d);
    for k in windings {
        let tm = sys.jacobian(&wrap_for(sys, &p))?;
        jac = tm.matrix * jac;
        let img = sys.step_lift(&p)?;
        p = (0..d).map(|a| img[a] - k[a] as f64).collect();
    }
    Ok((p, jac))
}

fn wrap_for(sys: &System, p: &[f64]) -> Vec<f64> {
    let mut q = p.to_vec();
    let _ = sys.ambient().canonicalize(&mut q);
    q
}

/// Close a periodic pseudo-orbit to a true periodic orbit of the map by a
/// damped Newton iteration on the cover, seeded at the first point. The
/// winding vector is read off the lifted pseudo-orbit. The returned period
/// is minimal among the divisors of τ.
pub fn close_to_periodic(
    sys: &System,
    po: &PseudoOrbit,
    tol: f64,
) -> Result<ClosingResult, ClosingError> {
    if !po.periodic {
        return Err(ClosingError::NotPeriodic);
    }
    let tau = po.steps();
    let d = sys.dim();
    let ambient = sys.ambient();
    let windings = per_step_windings(sys, po)?;
    let winding: Vec<i64> = (0..d)
        .map(|a| windings.iter().map(|k| k[a]).sum())
        .collect();

    let mut x = po.points[0].clone();
    let mut iterations = 0usize;
    let residual_of = |x: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>, DVector<f64>), ClosingError> {
        let (img, jac) = iterate_unwound(sys, x, &windings)?;
        let h = DVector::from_iterator(d, (0..d).map(|a| img[a] - x[a]));
        Ok((img, jac, h))
    };

    let (_, mut jac, mut h) = residual_of(&x)?;
    let mut res = h.norm();
    loop {
        // a closing with eigenvalue 1 has no Newton direction at all, so the
        // factorization is checked even when the residual already converged
        let newton_matrix = &jac - DMatrix::<f64>::identity(d, d);
        let lu = newton_matrix.full_piv_lu();
        let delta = lu
            .solve(&(-&h))
            .filter(|delta| delta.iter().all(|v| v.is_finite()))
            .ok_or(ClosingError::EigenvalueOneDegeneracy)?;
        if res < tol {
            break;
        }
        if iterations >= 100 {
            return Err(ClosingError::NoConvergence {
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        // damping: halve the step while the residual refuses to drop; a
        // candidate that leaves the domain counts as refused
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..=20 {
            let cand: Vec<f64> = (0..d).map(|a| x[a] + t * delta[a]).collect();
            if let Ok((_, njac, nh)) = residual_of(&cand) {
                if nh.norm() < res {
                    x = cand;
                    jac = njac;
                    h = nh;
                    res = h.norm();
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(ClosingError::NoConvergence {
                iterations,
                residual: res,
            });
        }
    }

    // project to the phase space and rebuild the orbit by iteration
    let mut rep = wrap_for(sys, &x);
    ambient.canonicalize(&mut rep)?;

    // minimality: the smallest divisor of τ that already closes wins
    let mut period = tau;
    let mut divisors: Vec<usize> = (1..=tau / 2).filter(|q| tau % q == 0).collect();
    divisors.sort_unstable();
    for q in divisors {
        let img = sys.evaluate(&rep, q as i64)?;
        if ambient.distance(&img, &rep) < tol.max(1e-12) {
            period = q;
            break;
        }
    }

    let mut points = Vec::with_capacity(period);
    let mut p = rep.clone();
    for _ in 0..period {
        points.push(p.clone());
        p = sys.step(&p)?;
    }
    let closed = sys.evaluate(&rep, period as i64)?;
    let residual = ambient.distance(&closed, &rep);
    if residual >= tol {
        return Err(ClosingError::NoConvergence {
            iterations,
            residual,
        });
    }

    let hausdorff_to_pseudo = hausdorff_distance(ambient, &po.points, &points)?;

    Ok(ClosingResult {
        orbit: PeriodicOrbit {
            representative: rep,
            period,
            points,
            residual,
            hyperbolicity: None,
        },
        hausdorff_to_pseudo,
        iterations,
        winding,
    })
}

/// One candidate orbit segment offered as a shadowing witness. The segment
/// is stored explicitly: its step residual is at machine scale, standing in
/// for the true orbit that exact arithmetic would provide.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowWitness {
    pub start: Vec<f64>,
    pub len: usize,
    pub points: Vec<Vec<f64>>,
    pub hausdorff: f64,
    pub max_step_residual: f64,
}

/// Result of a weak-shadowing search. A failure only means the budget ran
/// out, never that no orbit segment exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowReport {
    pub found: bool,
    pub delta: f64,
    pub witness: Option<ShadowWitness>,
    /// best candidate seen, also set on success
    pub best: Option<ShadowWitness>,
    pub candidates_tried: usize,
    pub budget_exhausted: bool,
}

fn witness_from_segment(
    ambient: &Ambient,
    po: &PseudoOrbit,
    sys: &System,
    segment: Vec<Vec<f64>>,
) -> Result<ShadowWitness, ClosingError> {
    let mut max_step_residual: f64 = 0.0;
    for i in 0..segment.len() - 1 {
        let img = sys.step(&segment[i])?;
        max_step_residual = max_step_residual.max(ambient.distance(&img, &segment[i + 1]));
    }
    let hausdorff = hausdorff_distance(ambient, &segment, &po.points)?;
    Ok(ShadowWitness {
        start: segment[0].clone(),
        len: segment.len() - 1,
        points: segment,
        hausdorff,
        max_step_residual,
    })
}

/// Forward segment of the true map from a start point, same length as the
/// pseudo-orbit.
fn direct_segment(sys: &System, start: &[f64], n: usize) -> Result<Vec<Vec<f64>>, ClosingError> {
    let mut points = Vec::with_capacity(n + 1);
    let mut p = start.to_vec();
    sys.ambient().canonicalize(&mut p)?;
    points.push(p.clone());
    for _ in 0..n {
        p = sys.step(&p)?;
        points.push(p.clone());
    }
    Ok(points)
}

/// Relax a lifted pseudo-orbit toward a true orbit segment by Gauss-Newton
/// on the step residuals: the least-norm correction of the underdetermined
/// system x_{i+1} = F(x_i). Returns the canonicalized segment.
fn relax_to_orbit_segment(
    sys: &System,
    po: &PseudoOrbit,
    sweeps: usize,
) -> Result<Vec<Vec<f64>>, ClosingError> {
    let d = sys.dim();
    let n = po.steps();
    let ambient = sys.ambient();
    let mut xs = po.points.clone();
    for _ in 0..sweeps {
        // residuals g_i = F(x_i) - x_{i+1} in the local chart around x_{i+1},
        // and jacobians a_i = DF(x_i)
        let mut g = DVector::zeros(n * d);
        let mut jacs = Vec::with_capacity(n);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let img = sys.step(&xs[i])?;
            let tm = sys.jacobian(&xs[i])?;
            let r = ambient.displacement(&img, &xs[i + 1]);
            for a in 0..d {
                g[i * d + a] = r[a];
                worst = worst.max(r[a].abs());
            }
            jacs.push(tm.matrix);
        }
        if worst < 1e-13 {
            break;
        }
        // solve (J Jᵀ) λ = -g for the block-bidiagonal J = [A_i | -I],
        // then apply the least-norm step Δ = Jᵀ λ
        let mut normal = DMatrix::<f64>::zeros(n * d, n * d);
        for i in 0..n {
            let aat = &jacs[i] * jacs[i].transpose();
            for r in 0..d {
                for c in 0..d {
                    normal[(i * d + r, i * d + c)] += aat[(r, c)];
                    if r == c {
                        normal[(i * d + r, i * d + c)] += 1.0;
                    }
                }
            }
            if i + 1 < n {
                for r in 0..d {
                    for c in 0..d {
                        // (row i)·(row i+1)ᵀ = -A_{i+1}ᵀ
                        normal[(i * d + r, (i + 1) * d + c)] -= jacs[i + 1][(c, r)];
                        normal[((i + 1) * d + c, i * d + r)] -= jacs[i + 1][(c, r)];
                    }
                }
            }
        }
        let lu = normal.lu();
        let Some(lambda) = lu.solve(&(-&g)) else {
            break;
        };
        if !lambda.iter().all(|v| v.is_finite()) {
            break;
        }
        // Δ_0 = A_0ᵀ λ_0; Δ_{i} = A_iᵀ λ_i - λ_{i-1}; Δ_n = -λ_{n-1}
        for i in 0..=n {
            for a in 0..d {
                let mut delta = 0.0;
                if i < n {
                    for r in 0..d {
                        delta += jacs[i][(r, a)] * lambda[i * d + r];
                    }
                }
                if i > 0 {
                    delta -= lambda[(i - 1) * d + a];
                }
                xs[i][a] += delta;
            }
            let wrapped = wrap_for(sys, &xs[i]);
            xs[i] = wrapped;
        }
    }
    Ok(xs)
}

/// Search for a true orbit segment within Hausdorff distance δ of the
/// pseudo-orbit. Candidates: forward segments from each pseudo-orbit point,
/// a Gauss-Newton relaxation of the whole pseudo-orbit, a Newton closure of
/// its best return pair, then coarse grid starts until the budget runs out.
pub fn weak_shadow_check(
    sys: &System,
    po: &PseudoOrbit,
    delta: f64,
    search_budget: usize,
) -> Result<ShadowReport, ClosingError> {
    assert!(delta > 0.0, "delta must be positive");
    let ambient = sys.ambient();
    let n = po.steps();
    let mut tried = 0usize;
    let mut best: Option<ShadowWitness> = None;
    let mut budget_exhausted = false;

    let consider = |w: ShadowWitness, best: &mut Option<ShadowWitness>| -> bool {
        let better = best.as_ref().is_none_or(|b| w.hausdorff < b.hausdorff);
        if better {
            *best = Some(w);
        }
        best.as_ref().is_some_and(|b| b.hausdorff < delta)
    };

    // direct starts at pseudo-orbit points
    let mut done = false;
    for z in &po.points {
        if tried >= search_budget {
            budget_exhausted = true;
            break;
        }
        tried += 1;
        let seg = direct_segment(sys, z, n)?;
        let w = witness_from_segment(ambient, po, sys, seg)?;
        if consider(w, &mut best) {
            done = true;
            break;
        }
    }

    // whole-orbit relaxation
    if !done && !budget_exhausted && sys.spec().jacobian_available {
        if tried >= search_budget {
            budget_exhausted = true;
        } else {
            tried += 1;
            if let Ok(seg) = relax_to_orbit_segment(sys, po, 25) {
                let w = witness_from_segment(ambient, po, sys, seg)?;
                done = consider(w, &mut best);
            }
        }
    }

    // closure of the best return pair into a periodic orbit
    if !done && !budget_exhausted && sys.spec().invertible && sys.spec().jacobian_available {
        if tried >= search_budget {
            budget_exhausted = true;
        } else if let Some((i, j)) = best_return_pair(ambient, &po.points) {
            tried += 1;
            let mut loop_pts: Vec<Vec<f64>> = po.points[i..j].to_vec();
            loop_pts.push(po.points[i].clone());
            if let Ok(cycle) = PseudoOrbit::from_points(sys, loop_pts) {
                if let Ok(res) = close_to_periodic(sys, &cycle, 1e-10) {
                    let mut seg = res.orbit.points.clone();
                    // repeat the cycle to the pseudo-orbit's length
                    while seg.len() < n + 1 {
                        seg.push(seg[seg.len() - res.orbit.period].clone());
                    }
                    let w = witness_from_segment(ambient, po, sys, seg)?;
                    done = consider(w, &mut best);
                }
            }
        }
    }

    // coarse grid starts with the remaining budget
    if !done && !budget_exhausted {
        let remaining = search_budget.saturating_sub(tried);
        let per_axis = (remaining as f64)
            .powf(1.0 / sys.dim() as f64)
            .floor()
            .min(8.0) as u32;
        if per_axis >= 2 {
            let depth = 31 - per_axis.next_power_of_two().leading_zeros();
            if let Ok(grid) = BoxGrid::new(ambient.clone(), depth.max(1)) {
                for id in 0..grid.box_count() {
                    if tried >= search_budget {
                        budget_exhausted = true;
                        break;
                    }
                    tried += 1;
                    let seg = direct_segment(sys, &grid.center_of_id(id), n)?;
                    let w = witness_from_segment(ambient, po, sys, seg)?;
                    if consider(w, &mut best) {
                        done = true;
                        break;
                    }
                }
            }
        }
    }

    let found = done;
    Ok(ShadowReport {
        found,
        delta,
        witness: found.then(|| best.clone().unwrap()),
        best,
        candidates_tried: tried,
        budget_exhausted,
    })
}

/// Indices (i, j) of the closest pair z_j ≈ z_i with j > i, preferring the
/// longest gap on ties.
fn best_return_pair(ambient: &Ambient, points: &[Vec<f64>]) -> Option<(usize, usize)> {
    let n = points.len();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let d = ambient.distance(&points[i], &points[j]);
            let better = match &best {
                None => true,
                Some((bd, bi, bj)) => d < *bd || (d == *bd && j - i > bj - bi),
            };
            if better {
                best = Some((d, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
}

//! Ambient spaces, points, and metric computations.
//!
//! Two ambient kinds are supported: the flat d-torus with unit fundamental
//! domain per axis, and an axis-aligned box with explicit bounds. Torus
//! coordinates are kept canonical in `[0, 1)`; all distances on the torus use
//! the flat quotient metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate {value} on axis {axis} lies outside the ambient box")]
    OutOfBounds { axis: usize, value: f64 },
    #[error("box ambient needs lo < hi on every axis")]
    DegenerateBounds,
    #[error("coordinate on axis {axis} is not finite")]
    NotFinite { axis: usize },
    #[error("hausdorff distance of two empty sets is undefined")]
    BothEmpty,
}

/// The space a system acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ambient {
    /// Flat torus `R^d / Z^d`.
    Torus { dim: usize },
    /// Axis-aligned box with closed bounds.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// Light tag carried by a [`Point`] so mixed-space inputs are caught early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceTag {
    Torus { dim: usize },
    Box { dim: usize },
}

impl Ambient {
    pub fn torus(dim: usize) -> Self {
        Ambient::Torus { dim }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SpaceError> {
        if lo.len() != hi.len() {
            return Err(SpaceError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(SpaceError::DegenerateBounds);
        }
        Ok(Ambient::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Ambient::Torus { dim } => *dim,
            Ambient::Box { lo, .. } => lo.len(),
        }
    }

    pub fn tag(&self) -> SpaceTag {
        match self {
            Ambient::Torus { dim } => SpaceTag::Torus { dim: *dim },
            Ambient::Box { lo, .. } => SpaceTag::Box { dim: lo.len() },
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Ambient::Torus { .. })
    }

    pub fn check_dim(&self, got: usize) -> Result<(), SpaceError> {
        if got != self.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Maps coordinates to their canonical representative.
    ///
    /// Torus coordinates land in `[0, 1)` per axis. Box coordinates are kept
    /// as given; out-of-bounds or non-finite values are rejected.
    pub fn canonicalize(&self, coords: &mut [f64]) -> Result<(), SpaceError> {
        self.check_dim(coords.len())?;
        for (axis, c) in coords.iter_mut().enumerate() {
            if !c.is_finite() {
                return Err(SpaceError::NotFinite { axis });
            }
        }
        match self {
            Ambient::Torus { .. } => {
                for c in coords.iter_mut() {
                    *c = c.rem_euclid(1.0);
                    // rem_euclid can return 1.0 for tiny negative inputs.
                    if *c >= 1.0 {
                        *c = 0.0;
                    }
                }
                Ok(())
            }
            Ambient::Box { lo, hi } => {
                for (axis, c) in coords.iter().enumerate() {
                    if *c < lo[axis] || *c > hi[axis] {
                        return Err(SpaceError::OutOfBounds { axis, value: *c });
                    }
                }
                Ok(())
            }
        }
    }

    /// Ambient metric: flat quotient metric on the torus, Euclidean on a box.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.dim());
        debug_assert_eq!(b.len(), self.dim());
        let mut sum = 0.0;
        match self {
            Ambient::Torus { .. } => {
                for (x, y) in a.iter().zip(b) {
                    let d = (x - y).rem_euclid(1.0);
                    let d = d.min(1.0 - d);
                    sum += d * d;
                }
            }
            Ambient::Box { .. } => {
                for (x, y) in a.iter().zip(b) {
                    sum += (x - y) * (x - y);
                }
            }
        }
        sum.sqrt()
    }

    /// Signed per-axis displacement from `b` to `a`, wrapped to `[-1/2, 1/2)`
    /// on the torus.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        match self {
            Ambient::Torus { .. } => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let mut d = (x - y).rem_euclid(1.0);
                    if d >= 0.5 {
                        d -= 1.0;
                    }
                    d
                })
                .collect(),
            Ambient::Box { .. } => a.iter().zip(b).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Ambient::Torus { dim } => 0.5 * (*dim as f64).sqrt(),
            Ambient::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// A point tagged with the kind of space it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vec<f64>,
    pub space: SpaceTag,
}

impl Point {
    /// Canonical torus point; coordinates are wrapped into `[0, 1)`.
    pub fn torus(coords: Vec<f64>) -> Self {
        let dim = coords.len();
        let ambient = Ambient::torus(dim);
        let mut coords = coords;
        ambient
            .canonicalize(&mut coords)
            .expect("torus wrap is total");
        Point {
            coords,
            space: SpaceTag::Torus { dim },
        }
    }

    pub fn boxed(coords: Vec<f64>) -> Self {
        let dim = coords.len();
        Point {
            coords,
            space: SpaceTag::Box { dim },
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Hausdorff distance between finite point sets.
///
/// Uses the standard two-sided form
/// `max(sup_a inf_b d(a,b), sup_b inf_a d(a,b))`.
/// When exactly one set is empty the ambient diameter is returned; two empty
/// sets are rejected.
pub fn hausdorff_distance(
    ambient: &Ambient,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
) -> Result<f64, SpaceError> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Err(SpaceError::BothEmpty),
        (true, false) | (false, true) => return Ok(ambient.diameter()),
        _ => {}
    }
    for p in a.iter().chain(b) {
        ambient.check_dim(p.len())?;
    }
    Ok(directed_sup_inf(ambient, a, b).max(directed_sup_inf(ambient, b, a)))
}

fn directed_sup_inf(ambient: &Ambient, from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let mut sup = 0.0_f64;
    for p in from {
        let mut inf = f64::INFINITY;
        for q in to {
            let d = ambient.distance(p, q);
            if d < inf {
                inf = d;
            }
        }
        sup = sup.max(inf);
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_canonicalize_wraps() {
        let t = Ambient::torus(2);
        let mut c = vec![1.25, -0.25];
        t.canonicalize(&mut c).unwrap();
        assert_eq!(c, vec![0.25, 0.75]);
        let mut c = vec![1.0, -1e-20];
        t.canonicalize(&mut c).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn torus_metric_wraps_shortest_way() {
        let t = Ambient::torus(2);
        assert!((t.distance(&[0.0, 0.0], &[0.5, 0.0]) - 0.5).abs() < 1e-15);
        assert!((t.distance(&[0.1, 0.0], &[0.9, 0.0]) - 0.2).abs() < 1e-15);
        assert!((t.diameter() - (0.5_f64 * 2.0_f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn box_bounds_checked() {
        let b = Ambient::boxed(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        let mut c = vec![2.1, 0.5];
        assert!(matches!(
            b.canonicalize(&mut c),
            Err(SpaceError::OutOfBounds { axis: 0, .. })
        ));
        assert!((b.diameter() - 5.0_f64.sqrt()).abs() < 1e-15);
        assert!(Ambient::boxed(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn hausdorff_matches_hand_values() {
        let t = Ambient::torus(2);
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![0.5, 0.0]];
        assert!((hausdorff_distance(&t, &a, &b).unwrap() - 0.5).abs() < 1e-15);

        // one-sided emptiness falls back to the ambient diameter
        let empty: Vec<Vec<f64>> = Vec::new();
        let d = hausdorff_distance(&t, &a, &empty).unwrap();
        assert!((d - 0.5 * 2.0_f64.sqrt()).abs() < 1e-15);
        assert!(hausdorff_distance(&t, &empty, &empty).is_err());
    }

    #[test]
    fn hausdorff_is_two_sided() {
        // an asymmetric pair: every point of a is near b, but not conversely
        let t = Ambient::torus(1);
        let a = vec![vec![0.0]];
        let b = vec![vec![0.0], vec![0.4]];
        let d = hausdorff_distance(&t, &a, &b).unwrap();
        assert!((d - 0.4).abs() < 1e-15);
    }
}

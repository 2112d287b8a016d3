//! Dyadic box grids over an ambient space.
//!
//! A grid at depth `k` cuts every axis of the ambient into `2^k` equal cells,
//! so parent/child arithmetic between depths is exact integer arithmetic and
//! refinement never drifts. Boxes follow the half-open convention
//! `[i/2^k, (i+1)/2^k)` per axis: a point on a shared face belongs to the box
//! whose closed extent starts there, which keeps `box_of` total and
//! deterministic.

use crate::space::{hausdorff_distance, Ambient, SpaceError};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Subdivision stops here; deeper grids exceed the exact integer budget.
pub const MAX_DEPTH: u32 = 30;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("depth {depth} exceeds the subdivision ceiling {max}")]
    DepthCeiling { depth: u32, max: u32 },
    #[error("grid of dimension {dim} at depth {depth} exceeds the 63-bit id budget")]
    IdBudget { dim: usize, depth: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("box sets live on different depths ({a} vs {b})")]
    DepthMismatch { a: u32, b: u32 },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// One dyadic box, identified by its depth and per-axis multi-index.
///
/// Serializes as the integer tuple `(depth, multi_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridBox {
    pub depth: u32,
    pub multi: Vec<u32>,
}

impl Serialize for GridBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&self.depth)?;
        t.serialize_element(&self.multi)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for GridBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (depth, multi) = <(u32, Vec<u32>)>::deserialize(d)?;
        Ok(GridBox { depth, multi })
    }
}

impl GridBox {
    /// The `2^d` children one level deeper. Child indices double the parent
    /// index, so the children tile the parent exactly.
    pub fn children(&self) -> Result<Vec<GridBox>, GridError> {
        if self.depth >= MAX_DEPTH {
            return Err(GridError::DepthCeiling {
                depth: self.depth + 1,
                max: MAX_DEPTH,
            });
        }
        let d = self.multi.len();
        let mut out = Vec::with_capacity(1 << d);
        for mask in 0..(1_u32 << d) {
            let multi = self
                .multi
                .iter()
                .enumerate()
                .map(|(axis, &i)| 2 * i + ((mask >> axis) & 1))
                .collect();
            out.push(GridBox {
                depth: self.depth + 1,
                multi,
            });
        }
        Ok(out)
    }

    pub fn parent(&self) -> Option<GridBox> {
        if self.depth == 0 {
            return None;
        }
        Some(GridBox {
            depth: self.depth - 1,
            multi: self.multi.iter().map(|&i| i / 2).collect(),
        })
    }
}

/// The full dyadic grid of a fixed depth over an ambient space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    ambient: Ambient,
    depth: u32,
}

impl BoxGrid {
    pub fn new(ambient: Ambient, depth: u32) -> Result<Self, GridError> {
        if depth > MAX_DEPTH {
            return Err(GridError::DepthCeiling {
                depth,
                max: MAX_DEPTH,
            });
        }
        let dim = ambient.dim();
        if (dim as u64) * (depth as u64) > 63 {
            return Err(GridError::IdBudget { dim, depth });
        }
        Ok(BoxGrid { ambient, depth })
    }

    pub fn ambient(&self) -> &Ambient {
        &self.ambient
    }

    pub fn dim(&self) -> usize {
        self.ambient.dim()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn boxes_per_axis(&self) -> u64 {
        1_u64 << self.depth
    }

    /// Total box count `2^(d * depth)`.
    pub fn box_count(&self) -> u64 {
        1_u64 << (self.dim() as u32 * self.depth)
    }

    /// Row-major linear id of a multi-index.
    pub fn linear_id(&self, multi: &[u32]) -> u64 {
        debug_assert_eq!(multi.len(), self.dim());
        let n = self.boxes_per_axis();
        multi.iter().fold(0_u64, |acc, &i| acc * n + i as u64)
    }

    pub fn box_from_id(&self, id: u64) -> GridBox {
        debug_assert!(id < self.box_count());
        let n = self.boxes_per_axis();
        let d = self.dim();
        let mut multi = vec![0_u32; d];
        let mut rest = id;
        for axis in (0..d).rev() {
            multi[axis] = (rest % n) as u32;
            rest /= n;
        }
        GridBox {
            depth: self.depth,
            multi,
        }
    }

    /// The box whose half-open extent contains the point.
    ///
    /// Torus coordinates are wrapped first. On a box ambient the closed upper
    /// face belongs to the last cell, so every ambient point has a box whose
    /// closed extent contains it.
    pub fn box_of(&self, coords: &[f64]) -> Result<GridBox, GridError> {
        if coords.len() != self.dim() {
            return Err(GridError::DimensionMismatch {
                expected: self.dim(),
                got: coords.len(),
            });
        }
        let mut canonical = coords.to_vec();
        self.ambient.canonicalize(&mut canonical)?;
        let n = self.boxes_per_axis();
        let multi = match &self.ambient {
            Ambient::Torus { .. } => canonical
                .iter()
                .map(|&c| (((c * n as f64).floor() as u64).min(n - 1)) as u32)
                .collect(),
            Ambient::Box { lo, hi } => canonical
                .iter()
                .enumerate()
                .map(|(axis, &c)| {
                    let t = (c - lo[axis]) / (hi[axis] - lo[axis]);
                    (((t * n as f64).floor() as u64).min(n - 1)) as u32
                })
                .collect(),
        };
        Ok(GridBox {
            depth: self.depth,
            multi,
        })
    }

    pub fn center(&self, b: &GridBox) -> Vec<f64> {
        debug_assert_eq!(b.depth, self.depth);
        let n = self.boxes_per_axis() as f64;
        match &self.ambient {
            Ambient::Torus { .. } => b.multi.iter().map(|&i| (i as f64 + 0.5) / n).collect(),
            Ambient::Box { lo, hi } => b
                .multi
                .iter()
                .enumerate()
                .map(|(axis, &i)| lo[axis] + (hi[axis] - lo[axis]) * (i as f64 + 0.5) / n)
                .collect(),
        }
    }

    /// Per-axis half side length.
    pub fn radius(&self) -> Vec<f64> {
        let scale = 0.5 / self.boxes_per_axis() as f64;
        match &self.ambient {
            Ambient::Torus { dim } => vec![scale; *dim],
            Ambient::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| (b - a) * scale).collect(),
        }
    }

    /// Euclidean diameter of a single box.
    pub fn box_diameter(&self) -> f64 {
        self.radius()
            .iter()
            .map(|r| 4.0 * r * r)
            .sum::<f64>()
            .sqrt()
    }

    pub fn center_of_id(&self, id: u64) -> Vec<f64> {
        self.center(&self.box_from_id(id))
    }
}

/// A set of boxes of one grid depth, stored as sorted unique linear ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoxSet {
    depth: u32,
    ids: Vec<u64>,
}

impl<'de> Deserialize<'de> for BoxSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            depth: u32,
            ids: Vec<u64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Ok(BoxSet::new(raw.depth, raw.ids))
    }
}

impl BoxSet {
    pub fn new(depth: u32, mut ids: Vec<u64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        BoxSet { depth, ids }
    }

    pub fn empty(depth: u32) -> Self {
        BoxSet {
            depth,
            ids: Vec::new(),
        }
    }

    pub fn full(grid: &BoxGrid) -> Self {
        BoxSet {
            depth: grid.depth(),
            ids: (0..grid.box_count()).collect(),
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    fn check(&self, other: &BoxSet) -> Result<(), GridError> {
        if self.depth != other.depth {
            return Err(GridError::DepthMismatch {
                a: self.depth,
                b: other.depth,
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &BoxSet) -> Result<BoxSet, GridError> {
        self.check(other)?;
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Ok(BoxSet::new(self.depth, ids))
    }

    pub fn intersection(&self, other: &BoxSet) -> Result<BoxSet, GridError> {
        self.check(other)?;
        let ids = self
            .ids
            .iter()
            .copied()
            .filter(|id| other.contains(*id))
            .collect();
        Ok(BoxSet {
            depth: self.depth,
            ids,
        })
    }

    pub fn difference(&self, other: &BoxSet) -> Result<BoxSet, GridError> {
        self.check(other)?;
        let ids = self
            .ids
            .iter()
            .copied()
            .filter(|id| !other.contains(*id))
            .collect();
        Ok(BoxSet {
            depth: self.depth,
            ids,
        })
    }

    pub fn complement(&self, grid: &BoxGrid) -> BoxSet {
        debug_assert_eq!(grid.depth(), self.depth);
        let ids = (0..grid.box_count())
            .filter(|id| !self.contains(*id))
            .collect();
        BoxSet {
            depth: self.depth,
            ids,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.ids.iter().copied()
    }
}

/// Hausdorff distance between two box sets, computed on box centers.
pub fn hausdorff_between_box_sets(
    grid: &BoxGrid,
    a: &BoxSet,
    b: &BoxSet,
) -> Result<f64, GridError> {
    let pa: Vec<Vec<f64>> = a.iter().map(|id| grid.center_of_id(id)).collect();
    let pb: Vec<Vec<f64>> = b.iter().map(|id| grid.center_of_id(id)).collect();
    Ok(hausdorff_distance(grid.ambient(), &pa, &pb)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_follows_the_formula() {
        let g = BoxGrid::new(Ambient::torus(2), 0).unwrap();
        assert_eq!(g.box_count(), 1);
        let g = BoxGrid::new(Ambient::torus(2), 1).unwrap();
        assert_eq!(g.box_count(), 4);
        let g = BoxGrid::new(Ambient::torus(3), 5).unwrap();
        assert_eq!(g.box_count(), 1 << 15);
    }

    #[test]
    fn id_budget_enforced() {
        assert!(BoxGrid::new(Ambient::torus(3), 21).is_ok());
        assert!(matches!(
            BoxGrid::new(Ambient::torus(3), 22),
            Err(GridError::IdBudget { .. })
        ));
        assert!(matches!(
            BoxGrid::new(Ambient::torus(1), 31),
            Err(GridError::DepthCeiling { .. })
        ));
    }

    #[test]
    fn subdivision_doubles_indices() {
        let b = GridBox {
            depth: 3,
            multi: vec![5, 2],
        };
        let kids = b.children().unwrap();
        let idx: Vec<Vec<u32>> = kids.iter().map(|k| k.multi.clone()).collect();
        assert!(idx.contains(&vec![10, 4]));
        assert!(idx.contains(&vec![11, 4]));
        assert!(idx.contains(&vec![10, 5]));
        assert!(idx.contains(&vec![11, 5]));
        assert!(kids.iter().all(|k| k.depth == 4));
        for k in &kids {
            assert_eq!(k.parent().unwrap(), b);
        }
    }

    #[test]
    fn subdivision_ceiling() {
        let b = GridBox {
            depth: MAX_DEPTH,
            multi: vec![0],
        };
        assert!(matches!(b.children(), Err(GridError::DepthCeiling { .. })));
    }

    #[test]
    fn box_of_uses_floor_and_face_rule() {
        let g = BoxGrid::new(Ambient::torus(2), 2).unwrap();
        assert_eq!(g.box_of(&[0.3, 0.7]).unwrap().multi, vec![1, 2]);
        assert_eq!(g.box_of(&[0.0, 0.0]).unwrap().multi, vec![0, 0]);
        // exact shared face: the box starting at the face wins
        assert_eq!(g.box_of(&[0.25, 0.25]).unwrap().multi, vec![1, 1]);
        // the closed extent of the returned box contains the point
        let b = g.box_of(&[0.25, 0.25]).unwrap();
        let c = g.center(&b);
        let r = g.radius();
        for axis in 0..2 {
            assert!((0.25 - c[axis]).abs() <= r[axis] + 1e-15);
        }
    }

    #[test]
    fn box_of_on_box_ambient_clamps_top_face() {
        let amb = Ambient::boxed(vec![0.0], vec![2.0]).unwrap();
        let g = BoxGrid::new(amb, 2).unwrap();
        assert_eq!(g.box_of(&[2.0]).unwrap().multi, vec![3]);
        assert_eq!(g.box_of(&[0.5]).unwrap().multi, vec![1]);
        assert!(g.box_of(&[2.5]).is_err());
    }

    #[test]
    fn linear_ids_round_trip() {
        let g = BoxGrid::new(Ambient::torus(3), 4).unwrap();
        for id in [0, 1, 4095, 1234] {
            let b = g.box_from_id(id);
            assert_eq!(g.linear_id(&b.multi), id);
        }
    }

    #[test]
    fn box_set_ops() {
        let a = BoxSet::new(3, vec![5, 1, 3, 3]);
        let b = BoxSet::new(3, vec![3, 4]);
        assert_eq!(a.ids(), &[1, 3, 5]);
        assert_eq!(a.union(&b).unwrap().ids(), &[1, 3, 4, 5]);
        assert_eq!(a.intersection(&b).unwrap().ids(), &[3]);
        assert_eq!(a.difference(&b).unwrap().ids(), &[1, 5]);
        assert!(a.union(&BoxSet::empty(2)).is_err());
    }

    #[test]
    fn grid_box_serializes_as_tuple() {
        let b = GridBox {
            depth: 2,
            multi: vec![1, 3],
        };
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[2,[1,3]]");
        let back: GridBox = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}

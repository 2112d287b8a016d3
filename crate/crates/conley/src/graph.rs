//! Sampled outer-approximation transition graphs over box grids.
//!
//! For every box the map is evaluated on a corner-plus-interior lattice; each
//! image is inflated by ε plus a per-axis spread estimate and the box is
//! connected to every box the inflated images meet. The spread along output
//! axis `i` is half the sum over input axes of the largest image-coordinate
//! jump between lattice-adjacent samples, which reproduces the exact image
//! enclosure for affine maps and adapts to anisotropic stretching. The
//! enclosure is honest sampling, not a proof; a user Lipschitz bound replaces
//! the spread with `L · box_radius` and sets the rigor flag.

use crate::classes::ChainDecomposition;
use crate::grid::{BoxGrid, BoxSet, GridError};
use crate::space::Ambient;
use crate::systems::{System, SystemError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("epsilon must be a finite nonnegative length, got {0}")]
    InvalidEpsilon(f64),
    #[error("samples_per_axis must be at least 2, got {0}")]
    InvalidSamples(usize),
    #[error("grid has {0} boxes, beyond the graph node budget")]
    TooLarge(u64),
    #[error("map evaluation failed on box {box_id}: {source}")]
    Evaluation { box_id: u64, source: SystemError },
    #[error("system dimension {system} does not match grid dimension {grid}")]
    DimensionMismatch { system: usize, grid: usize },
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Knobs for graph construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphOptions {
    pub samples_per_axis: usize,
    /// Global Lipschitz bound for the map; switches the inflation to
    /// `L · box_radius + ε` and marks the graph rigorous.
    pub lipschitz: Option<f64>,
    pub parallel: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            samples_per_axis: 3,
            lipschitz: None,
            parallel: true,
        }
    }
}

/// Directed graph over all boxes of a grid.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    grid: BoxGrid,
    epsilon: f64,
    samples_per_axis: usize,
    rigorous: bool,
    out: Vec<Vec<u32>>,
}

impl TransitionGraph {
    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn samples_per_axis(&self) -> usize {
        self.samples_per_axis
    }

    pub fn rigorous(&self) -> bool {
        self.rigorous
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn edges_from(&self, u: u64) -> &[u32] {
        &self.out[u as usize]
    }

    pub fn has_edge(&self, u: u64, v: u64) -> bool {
        self.out[u as usize].binary_search(&(v as u32)).is_ok()
    }

    pub fn iter_edges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u as u64, v as u64)))
    }

    /// Incoming adjacency, for reverse reachability.
    pub fn reverse(&self) -> Vec<Vec<u32>> {
        let mut rev = vec![Vec::new(); self.out.len()];
        for (u, vs) in self.out.iter().enumerate() {
            for &v in vs {
                rev[v as usize].push(u as u32);
            }
        }
        rev
    }

    /// Synthetic graph from an explicit edge list, for tests and toy models.
    pub fn from_edges(grid: BoxGrid, epsilon: f64, edges: &[(u64, u64)]) -> Self {
        let n = grid.box_count() as usize;
        let mut out = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            out[u as usize].insert(v as u32);
        }
        TransitionGraph {
            grid,
            epsilon,
            samples_per_axis: 0,
            rigorous: false,
            out: out.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }
}

/// Offsets of the sample lattice within a box: corners plus an even interior
/// grid, `s` values per axis.
fn lattice_offsets(s: usize) -> Vec<f64> {
    (0..s).map(|k| k as f64 / (s - 1) as f64).collect()
}

struct BoxTargets<'a> {
    sys: &'a System,
    grid: &'a BoxGrid,
    epsilon: f64,
    s: usize,
    offsets: Vec<f64>,
    lipschitz: Option<f64>,
}

impl BoxTargets<'_> {
    fn run(&self, id: u64) -> Result<Vec<u32>, GraphError> {
        let grid = self.grid;
        let d = grid.dim();
        let s = self.s;
        let b = grid.box_from_id(id);
        let center = grid.center(&b);
        let radius = grid.radius();
        let n_samples = s.pow(d as u32);

        let mut images = Vec::with_capacity(n_samples);
        let mut digits = vec![0usize; d];
        for _ in 0..n_samples {
            let point: Vec<f64> = (0..d)
                .map(|a| center[a] - radius[a] + 2.0 * radius[a] * self.offsets[digits[a]])
                .collect();
            // box ambients keep the raw image: a point that leaves the
            // domain contributes no targets (the range clamp drops it), so
            // its box drains instead of failing the whole build
            let img = if grid.ambient().is_torus() {
                self.sys.step(&point)
            } else {
                self.sys.step_lift(&point)
            }
            .map_err(|source| GraphError::Evaluation { box_id: id, source })?;
            images.push(img);
            for digit in digits.iter_mut() {
                *digit += 1;
                if *digit < s {
                    break;
                }
                *digit = 0;
            }
        }

        // per-axis inflation radii
        let inflate: Vec<f64> = if let Some(lip) = self.lipschitz {
            let r = lip * grid.box_diameter() / 2.0 + self.epsilon;
            vec![r; d]
        } else {
            // half the summed per-input-axis image-coordinate jumps; exact
            // enclosure for affine maps
            let ambient = grid.ambient();
            let mut spread = vec![0.0_f64; d];
            for a in 0..d {
                let stride = s.pow(a as u32);
                let mut jump = vec![0.0_f64; d];
                for (q, img) in images.iter().enumerate() {
                    if (q / stride) % s + 1 == s {
                        continue;
                    }
                    let neighbor = &images[q + stride];
                    for i in 0..d {
                        let delta = coord_distance(ambient, i, img[i], neighbor[i]);
                        jump[i] = jump[i].max(delta);
                    }
                }
                for i in 0..d {
                    spread[i] += 0.5 * jump[i];
                }
            }
            spread.iter().map(|r| r + self.epsilon).collect()
        };

        let mut targets = BTreeSet::new();
        for img in &images {
            collect_box_range(grid, img, &inflate, &mut targets);
        }
        Ok(targets.into_iter().collect())
    }
}

/// Distance between two values of coordinate `i`, respecting torus wrap.
fn coord_distance(ambient: &Ambient, _i: usize, a: f64, b: f64) -> f64 {
    match ambient {
        Ambient::Torus { .. } => {
            let m = (a - b).rem_euclid(1.0);
            m.min(1.0 - m)
        }
        Ambient::Box { .. } => (a - b).abs(),
    }
}

/// Insert every box met by the axis-aligned block `img ± inflate`.
fn collect_box_range(grid: &BoxGrid, img: &[f64], inflate: &[f64], targets: &mut BTreeSet<u32>) {
    let d = grid.dim();
    let n = grid.boxes_per_axis() as i64;
    let mut ranges: Vec<Vec<i64>> = Vec::with_capacity(d);
    for i in 0..d {
        let (lo_t, hi_t) = match grid.ambient() {
            Ambient::Torus { .. } => (img[i] - inflate[i], img[i] + inflate[i]),
            Ambient::Box { lo, hi } => {
                let side = hi[i] - lo[i];
                (
                    (img[i] - inflate[i] - lo[i]) / side,
                    (img[i] + inflate[i] - lo[i]) / side,
                )
            }
        };
        let lo_i = (lo_t * n as f64).floor() as i64;
        let hi_i = (hi_t * n as f64).floor() as i64;
        let axis: Vec<i64> = match grid.ambient() {
            Ambient::Torus { .. } => {
                if hi_i - lo_i + 1 >= n {
                    (0..n).collect()
                } else {
                    (lo_i..=hi_i).map(|k| k.rem_euclid(n)).collect()
                }
            }
            Ambient::Box { .. } => {
                let lo_c = lo_i.max(0);
                let hi_c = hi_i.min(n - 1);
                if lo_c > hi_c {
                    return;
                }
                (lo_c..=hi_c).collect()
            }
        };
        ranges.push(axis);
    }
    let mut multi = vec![0u32; d];
    push_products(grid, &ranges, 0, &mut multi, targets);
}

fn push_products(
    grid: &BoxGrid,
    ranges: &[Vec<i64>],
    axis: usize,
    multi: &mut Vec<u32>,
    targets: &mut BTreeSet<u32>,
) {
    if axis == ranges.len() {
        targets.insert(grid.linear_id(multi) as u32);
        return;
    }
    for &k in &ranges[axis] {
        multi[axis] = k as u32;
        push_products(grid, ranges, axis + 1, multi, targets);
    }
}

/// Build the ε-inflated transition graph of a system over a grid.
pub fn build_transition_graph(
    sys: &System,
    grid: &BoxGrid,
    epsilon: f64,
    opts: &GraphOptions,
) -> Result<TransitionGraph, GraphError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(GraphError::InvalidEpsilon(epsilon));
    }
    if opts.samples_per_axis < 2 {
        return Err(GraphError::InvalidSamples(opts.samples_per_axis));
    }
    if sys.dim() != grid.dim() {
        return Err(GraphError::DimensionMismatch {
            system: sys.dim(),
            grid: grid.dim(),
        });
    }
    let count = grid.box_count();
    if count > u32::MAX as u64 {
        return Err(GraphError::TooLarge(count));
    }
    let ctx = BoxTargets {
        sys,
        grid,
        epsilon,
        s: opts.samples_per_axis,
        offsets: lattice_offsets(opts.samples_per_axis),
        lipschitz: opts.lipschitz,
    };
    let out: Vec<Vec<u32>> = if opts.parallel {
        (0..count)
            .into_par_iter()
            .map(|id| ctx.run(id))
            .collect::<Result<_, _>>()?
    } else {
        (0..count).map(|id| ctx.run(id)).collect::<Result<_, _>>()?
    };
    Ok(TransitionGraph {
        grid: grid.clone(),
        epsilon,
        samples_per_axis: opts.samples_per_axis,
        rigorous: opts.lipschitz.is_some(),
        out,
    })
}

/// Chain stable set of a class: every box with a directed path into the
/// class, the class included.
pub fn chain_stable_set(
    g: &TransitionGraph,
    dec: &ChainDecomposition,
    class_id: usize,
) -> Result<BoxSet, GraphError> {
    let class = dec
        .classes
        .get(class_id)
        .ok_or(GraphError::UnknownClass(class_id))?;
    let rev = g.reverse();
    let mut seen = vec![false; g.node_count()];
    let mut stack: Vec<u32> = class.boxes.iter().map(|id| id as u32).collect();
    for &b in &stack {
        seen[b as usize] = true;
    }
    while let Some(u) = stack.pop() {
        for &p in &rev[u as usize] {
            if !seen[p as usize] {
                seen[p as usize] = true;
                stack.push(p);
            }
        }
    }
    let ids = seen
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i as u64))
        .collect();
    Ok(BoxSet::new(g.grid().depth(), ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::make_system;

    #[test]
    fn identity_with_large_epsilon_is_complete() {
        let sys = make_system("identity", &serde_json::json!({"d": 2})).unwrap();
        let grid = BoxGrid::new(Ambient::torus(2), 1).unwrap();
        let g = build_transition_graph(&sys, &grid, 0.3, &GraphOptions::default()).unwrap();
        assert_eq!(g.node_count(), 4);
        for u in 0..4 {
            assert_eq!(g.edges_from(u), &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn cat_map_fixed_point_box_has_self_edge() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        for depth in [3, 5, 7] {
            let grid = BoxGrid::new(Ambient::torus(2), depth).unwrap();
            let g = build_transition_graph(&sys, &grid, 0.0, &GraphOptions::default()).unwrap();
            let origin = grid.linear_id(&grid.box_of(&[0.0, 0.0]).unwrap().multi);
            assert!(g.has_edge(origin, origin), "no self edge at depth {depth}");
        }
    }

    #[test]
    fn epsilon_monotonicity_of_edges() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let grid = BoxGrid::new(Ambient::torus(2), 4).unwrap();
        let small = build_transition_graph(&sys, &grid, 0.01, &GraphOptions::default()).unwrap();
        let large = build_transition_graph(&sys, &grid, 0.05, &GraphOptions::default()).unwrap();
        for (u, v) in small.iter_edges() {
            assert!(large.has_edge(u, v));
        }
        assert!(large.edge_count() > small.edge_count());
    }

    #[test]
    fn lipschitz_bound_sets_rigor_flag_and_covers_spread() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let grid = BoxGrid::new(Ambient::torus(2), 4).unwrap();
        let sampled = build_transition_graph(&sys, &grid, 0.0, &GraphOptions::default()).unwrap();
        assert!(!sampled.rigorous());
        // operator norm of the cat matrix is its largest eigenvalue
        let opts = GraphOptions {
            lipschitz: Some(2.618033988749895),
            ..GraphOptions::default()
        };
        let rigorous = build_transition_graph(&sys, &grid, 0.0, &opts).unwrap();
        assert!(rigorous.rigorous());
        for (u, v) in sampled.iter_edges() {
            assert!(rigorous.has_edge(u, v));
        }
    }

    #[test]
    fn box_ambient_images_clip_to_domain() {
        // a contraction toward the box center
        let sys = make_system(
            "user_defined",
            &serde_json::json!({
                "space": {"kind": "box", "lo": [0.0], "hi": [1.0]},
                "exprs": ["0.5 + 0.25*(x - 0.5)"],
            }),
        )
        .unwrap();
        let grid = BoxGrid::new(Ambient::boxed(vec![0.0], vec![1.0]).unwrap(), 2).unwrap();
        let g = build_transition_graph(&sys, &grid, 0.01, &GraphOptions::default()).unwrap();
        // no edge may leave the domain, and the middle boxes are reached
        for (u, v) in g.iter_edges() {
            assert!(u < 4 && v < 4);
        }
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(0, 3));
    }

    #[test]
    fn serial_and_parallel_builds_agree() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let grid = BoxGrid::new(Ambient::torus(2), 5).unwrap();
        let par = build_transition_graph(&sys, &grid, 0.02, &GraphOptions::default()).unwrap();
        let opts = GraphOptions {
            parallel: false,
            ..GraphOptions::default()
        };
        let ser = build_transition_graph(&sys, &grid, 0.02, &opts).unwrap();
        assert_eq!(par.out, ser.out);
    }

    #[test]
    fn parameter_validation() {
        let sys = make_system("cat_map", &serde_json::json!({})).unwrap();
        let grid = BoxGrid::new(Ambient::torus(2), 3).unwrap();
        assert!(matches!(
            build_transition_graph(&sys, &grid, -0.1, &GraphOptions::default()),
            Err(GraphError::InvalidEpsilon(_))
        ));
        let opts = GraphOptions {
            samples_per_axis: 1,
            ..GraphOptions::default()
        };
        assert!(matches!(
            build_transition_graph(&sys, &grid, 0.0, &opts),
            Err(GraphError::InvalidSamples(1))
        ));
        let sys3 = make_system("identity", &serde_json::json!({"d": 3})).unwrap();
        assert!(matches!(
            build_transition_graph(&sys3, &grid, 0.0, &GraphOptions::default()),
            Err(GraphError::DimensionMismatch { .. })
        ));
    }
}

//! Filtrations of attracting box sets and complete Lyapunov functions.
//!
//! A filtration peels the phase space one selected class at a time, most
//! upstream first: removing everything that can flow into the class leaves a
//! smaller set no edge escapes. The complete Lyapunov function assigns every
//! class an exact rational that strictly drops along every connecting edge,
//! so recurrence is exactly the level sets and all other motion is downhill.
//! Both constructions re-verify their defining inequalities before returning.

use crate::classes::{topo_order, ChainDecomposition, CondensationOrder};
use crate::graph::TransitionGraph;
use crate::grid::BoxSet;
use num_rational::Ratio;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("class {0} is not recurrent")]
    NotRecurrent(usize),
    #[error("class {0} selected twice")]
    DuplicateSelection(usize),
    #[error("no classes selected")]
    EmptySelection,
    #[error("{remaining} boxes reach none of the selected classes")]
    NotExhaustive { remaining: usize },
    #[error("stage {stage} gap contains {found} selected classes")]
    GapViolation { stage: usize, found: usize },
    #[error("stage {stage} set is not attracting: edge {from} -> {to} escapes")]
    NotAttracting { stage: usize, from: u64, to: u64 },
    #[error("value does not decrease along edge {from} -> {to}")]
    DecreaseViolation { from: u64, to: u64 },
}

/// Nested attracting box sets `U_0 ⊃ U_1 ⊃ … ⊃ U_k = ∅`, one selected class
/// isolated in each difference `U_i \ U_{i+1}`.
#[derive(Debug, Clone)]
pub struct Filtration {
    /// `k + 1` sets, the first full, the last empty
    pub sets: Vec<BoxSet>,
    /// class whose basin is removed at stage `i`
    pub selected: Vec<usize>,
}

impl Filtration {
    pub fn len(&self) -> usize {
        self.sets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Build a filtration that isolates the given recurrent classes, each gap
/// containing exactly one of them.
pub fn build_filtration(
    g: &TransitionGraph,
    dec: &ChainDecomposition,
    order: &CondensationOrder,
    selected: &[usize],
) -> Result<Filtration, LyapunovError> {
    if selected.is_empty() {
        return Err(LyapunovError::EmptySelection);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &s in selected {
        let class = dec.classes.get(s).ok_or(LyapunovError::UnknownClass(s))?;
        if !class.recurrent {
            return Err(LyapunovError::NotRecurrent(s));
        }
        if !seen.insert(s) {
            return Err(LyapunovError::DuplicateSelection(s));
        }
    }

    // linear extension of the order, upstream classes first, ties by id
    let staged = {
        let mut indeg: Vec<usize> = selected
            .iter()
            .map(|&b| {
                selected
                    .iter()
                    .filter(|&&a| a != b && order.relates(a as u32, b as u32))
                    .count()
            })
            .collect();
        let mut heap: BinaryHeap<Reverse<usize>> = selected
            .iter()
            .enumerate()
            .filter(|&(i, _)| indeg[i] == 0)
            .map(|(_, &s)| Reverse(s))
            .collect();
        let mut out = Vec::with_capacity(selected.len());
        while let Some(Reverse(s)) = heap.pop() {
            out.push(s);
            for (i, &b) in selected.iter().enumerate() {
                if b != s && order.relates(s as u32, b as u32) {
                    indeg[i] -= 1;
                    if indeg[i] == 0 {
                        heap.push(Reverse(b));
                    }
                }
            }
        }
        out
    };

    let n = g.node_count();
    let depth = g.grid().depth();
    let rev = g.reverse();
    let mut removed = vec![false; n];
    let mut sets = Vec::with_capacity(staged.len() + 1);
    sets.push(BoxSet::full(g.grid()));

    for (stage, &s) in staged.iter().enumerate() {
        // everything that can reach the class, inside what is left
        let mut hit = vec![false; n];
        let mut stack: Vec<u32> = dec.classes[s]
            .boxes
            .iter()
            .filter(|&b| !removed[b as usize])
            .map(|b| b as u32)
            .collect();
        for &b in &stack {
            hit[b as usize] = true;
        }
        while let Some(u) = stack.pop() {
            for &p in &rev[u as usize] {
                if !hit[p as usize] && !removed[p as usize] {
                    hit[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        // the gap must contain the selected class and no other selection
        let mut in_gap = 0usize;
        for &t in &staged {
            let touches = dec.classes[t].boxes.iter().any(|b| hit[b as usize]);
            if touches {
                in_gap += 1;
            }
        }
        if in_gap != 1 {
            return Err(LyapunovError::GapViolation {
                stage,
                found: in_gap,
            });
        }
        for (b, h) in hit.iter().enumerate() {
            if *h {
                removed[b] = true;
            }
        }
        let remaining: Vec<u64> = (0..n as u64).filter(|&b| !removed[b as usize]).collect();
        sets.push(BoxSet::new(depth, remaining));
    }

    let leftover = sets.last().unwrap().len();
    if leftover != 0 {
        return Err(LyapunovError::NotExhaustive {
            remaining: leftover,
        });
    }

    // verify every set is attracting: no edge leaves it
    for (stage, set) in sets.iter().enumerate() {
        for b in set.iter() {
            for &v in g.edges_from(b) {
                if !set.contains(v as u64) {
                    return Err(LyapunovError::NotAttracting {
                        stage,
                        from: b,
                        to: v as u64,
                    });
                }
            }
        }
    }

    Ok(Filtration {
        sets,
        selected: staged,
    })
}

/// Complete Lyapunov function with exact rational values per class.
#[derive(Debug, Clone)]
pub struct CompleteLyapunovFunction {
    /// value of each class, indexed by class id
    pub class_values: Vec<Ratio<u64>>,
    class_of: Vec<u32>,
}

impl CompleteLyapunovFunction {
    pub fn value_of_class(&self, class_id: usize) -> Ratio<u64> {
        self.class_values[class_id]
    }

    pub fn value_of_box(&self, box_id: u64) -> Ratio<u64> {
        self.class_values[self.class_of[box_id as usize] as usize]
    }
}

/// Assign every class the rational `r / (r + 1)` where `r` counts classes
/// processed before it, sinks first; the value then strictly decreases along
/// every edge between distinct classes, and distinct recurrent classes get
/// distinct values.
pub fn conley_function(
    g: &TransitionGraph,
    dec: &ChainDecomposition,
    order: &CondensationOrder,
) -> Result<CompleteLyapunovFunction, LyapunovError> {
    let k = dec.classes.len();
    // sinks-first: topological order of the reversed condensation DAG
    let mut rev_dag: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (c, succ) in order.class_dag.iter().enumerate() {
        for &v in succ {
            rev_dag[v as usize].push(c as u32);
        }
    }
    let sink_first = topo_order(&rev_dag);
    let mut class_values = vec![Ratio::new(0, 1); k];
    for (rank, &c) in sink_first.iter().enumerate() {
        class_values[c as usize] = Ratio::new(rank as u64, rank as u64 + 1);
    }

    let f = CompleteLyapunovFunction {
        class_values,
        class_of: dec.class_of.clone(),
    };

    // exact verification on every inter-class edge
    for (u, v) in g.iter_edges() {
        if dec.class_of[u as usize] != dec.class_of[v as usize]
            && f.value_of_box(u) <= f.value_of_box(v)
        {
            return Err(LyapunovError::DecreaseViolation { from: u, to: v });
        }
    }
    Ok(f)
}

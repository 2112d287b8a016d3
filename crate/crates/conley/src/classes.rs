//! Chain-recurrence classes and the order between them.
//!
//! The recurrent dynamics of the sampled graph is read off its strongly
//! connected components: a component is a chain class when it carries at
//! least one cycle. Classes are partially ordered by connecting orbits, and
//! the minimal classes of that order are exactly the ones whose basin is a
//! box neighborhood no path escapes, which is the quasi-attractor property
//! stated in two independently checkable ways.

use crate::graph::{GraphError, TransitionGraph};
use crate::grid::BoxSet;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// One strongly connected component of the transition graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainClass {
    pub id: usize,
    pub boxes: BoxSet,
    /// true when the component carries a cycle (size two or a self-loop)
    pub recurrent: bool,
}

/// Partition of all boxes into strongly connected components.
#[derive(Debug, Clone)]
pub struct ChainDecomposition {
    pub classes: Vec<ChainClass>,
    /// class index of every box
    pub class_of: Vec<u32>,
}

impl ChainDecomposition {
    pub fn recurrent_classes(&self) -> impl Iterator<Item = &ChainClass> {
        self.classes.iter().filter(|c| c.recurrent)
    }
}

/// Reachability order between recurrent classes, `K ⊣ K'` when some directed
/// path leads from K into K'.
#[derive(Debug, Clone)]
pub struct CondensationOrder {
    /// successors of every class in the condensation DAG (all classes)
    pub class_dag: Vec<Vec<u32>>,
    /// irreflexive reachability closure restricted to recurrent classes
    pub reaches: BTreeMap<u32, BTreeSet<u32>>,
    /// transitive reduction of `reaches`, for rendering
    pub covers: BTreeSet<(u32, u32)>,
    /// recurrent classes with no outgoing relation
    pub minimal: Vec<u32>,
}

impl CondensationOrder {
    pub fn relates(&self, a: u32, b: u32) -> bool {
        self.reaches.get(&a).is_some_and(|s| s.contains(&b))
    }
}

/// A minimal chain class together with the box neighborhood witnessing that
/// it attracts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiAttractor {
    pub class_id: usize,
    /// every box whose forward paths all stay inside this set and reach the
    /// class
    pub basin: BoxSet,
}

/// Strongly connected components by iterative Tarjan, renumbered so class ids
/// follow the smallest member box id.
fn strongly_connected_components(g: &TransitionGraph) -> (Vec<Vec<u32>>, Vec<u32>) {
    let n = g.node_count();
    let mut index = vec![u32::MAX; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut next_index = 0u32;
    let mut comps: Vec<Vec<u32>> = Vec::new();
    // explicit DFS frames: (node, edge cursor)
    let mut frames: Vec<(u32, usize)> = Vec::new();

    for root in 0..n as u32 {
        if index[root as usize] != u32::MAX {
            continue;
        }
        frames.push((root, 0));
        index[root as usize] = next_index;
        low[root as usize] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root as usize] = true;

        while let Some(&mut (v, ref mut cursor)) = frames.last_mut() {
            let edges = g.edges_from(v as u64);
            if *cursor < edges.len() {
                let w = edges[*cursor];
                *cursor += 1;
                if index[w as usize] == u32::MAX {
                    index[w as usize] = next_index;
                    low[w as usize] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w as usize] = true;
                    frames.push((w, 0));
                } else if on_stack[w as usize] {
                    low[v as usize] = low[v as usize].min(index[w as usize]);
                }
            } else {
                frames.pop();
                if let Some(&mut (parent, _)) = frames.last_mut() {
                    low[parent as usize] = low[parent as usize].min(low[v as usize]);
                }
                if low[v as usize] == index[v as usize] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w as usize] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
            }
        }
    }

    for comp in comps.iter_mut() {
        comp.sort_unstable();
    }
    comps.sort_by_key(|c| c[0]);
    let mut class_of = vec![0u32; n];
    for (ci, comp) in comps.iter().enumerate() {
        for &b in comp {
            class_of[b as usize] = ci as u32;
        }
    }
    (comps, class_of)
}

/// Decompose a transition graph into chain classes and compute the order
/// between the recurrent ones.
pub fn chain_recurrence_classes(
    g: &TransitionGraph,
) -> Result<(ChainDecomposition, CondensationOrder), GraphError> {
    let (comps, class_of) = strongly_connected_components(g);
    let depth = g.grid().depth();

    let classes: Vec<ChainClass> = comps
        .iter()
        .enumerate()
        .map(|(id, comp)| {
            let recurrent = comp.len() > 1 || g.has_edge(comp[0] as u64, comp[0] as u64);
            ChainClass {
                id,
                boxes: BoxSet::new(depth, comp.iter().map(|&b| b as u64).collect()),
                recurrent,
            }
        })
        .collect();

    // condensation DAG over all classes
    let k = classes.len();
    let mut dag: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); k];
    for (u, v) in g.iter_edges() {
        let cu = class_of[u as usize];
        let cv = class_of[v as usize];
        if cu != cv {
            dag[cu as usize].insert(cv);
        }
    }
    let class_dag: Vec<Vec<u32>> = dag.into_iter().map(|s| s.into_iter().collect()).collect();

    // reachability closure restricted to recurrent classes, by BFS per class
    let recurrent_ids: Vec<u32> = classes
        .iter()
        .filter(|c| c.recurrent)
        .map(|c| c.id as u32)
        .collect();
    let mut reaches: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &r in &recurrent_ids {
        let mut seen = vec![false; k];
        let mut stack = vec![r];
        seen[r as usize] = true;
        let mut reached = BTreeSet::new();
        while let Some(c) = stack.pop() {
            for &nx in &class_dag[c as usize] {
                if !seen[nx as usize] {
                    seen[nx as usize] = true;
                    if classes[nx as usize].recurrent {
                        reached.insert(nx);
                    }
                    stack.push(nx);
                }
            }
        }
        reached.remove(&r);
        reaches.insert(r, reached);
    }

    // transitive reduction: keep a ⊣ b unless some c strictly between
    let mut covers = BTreeSet::new();
    for (&a, succ) in &reaches {
        for &b in succ {
            let via_middle = succ.iter().any(|&c| c != b && reaches[&c].contains(&b));
            if !via_middle {
                covers.insert((a, b));
            }
        }
    }

    let minimal: Vec<u32> = recurrent_ids
        .iter()
        .copied()
        .filter(|r| reaches[r].is_empty())
        .collect();

    Ok((
        ChainDecomposition { classes, class_of },
        CondensationOrder {
            class_dag,
            reaches,
            covers,
            minimal,
        },
    ))
}

/// Quasi-attractors two ways: order-minimal recurrent classes, and classes
/// owning an attracting box neighborhood. Both characterizations are computed
/// and must agree; the returned basin is the witness neighborhood.
pub fn quasi_attractors(
    g: &TransitionGraph,
    dec: &ChainDecomposition,
    order: &CondensationOrder,
) -> Result<Vec<QuasiAttractor>, GraphError> {
    let n = g.node_count();
    let depth = g.grid().depth();

    // for every box, which recurrent classes are reachable and whether a
    // dead end (box with no outgoing edge) is reachable
    let k = dec.classes.len();
    let mut reach_sets: Vec<Option<BTreeSet<u32>>> = vec![None; k];
    let mut reach_dead: Vec<Option<bool>> = vec![None; k];
    // process classes in reverse topological order: successors first
    let topo = topo_order(&order.class_dag);
    for &c in topo.iter().rev() {
        let mut set = BTreeSet::new();
        // a dead end is a box with no outgoing edges; paths through it
        // never settle in a class
        let mut dead = dec.classes[c as usize]
            .boxes
            .iter()
            .any(|b| g.edges_from(b).is_empty());
        if dec.classes[c as usize].recurrent {
            set.insert(c);
        }
        for &nx in &order.class_dag[c as usize] {
            set.extend(reach_sets[nx as usize].as_ref().unwrap());
            dead = dead || reach_dead[nx as usize].unwrap();
        }
        reach_sets[c as usize] = Some(set);
        reach_dead[c as usize] = Some(dead);
    }

    let mut result = Vec::new();
    let minimal_set: BTreeSet<u32> = order.minimal.iter().copied().collect();
    for class in dec.recurrent_classes() {
        let cid = class.id as u32;
        // basin characterization: boxes from which the only reachable
        // recurrent class is this one and no path dies out
        let mut ids = Vec::new();
        for b in 0..n as u64 {
            let c = dec.class_of[b as usize] as usize;
            let set = reach_sets[c].as_ref().unwrap();
            let dead = reach_dead[c].unwrap();
            if !dead && set.len() == 1 && set.contains(&cid) {
                ids.push(b);
            }
        }
        let basin = BoxSet::new(depth, ids);
        let has_neighborhood = class.boxes.iter().all(|b| basin.contains(b));
        let is_minimal = minimal_set.contains(&cid);
        // the two characterizations must coincide
        assert_eq!(
            has_neighborhood, is_minimal,
            "order-minimality and attracting-neighborhood disagree on class {}",
            class.id
        );
        if is_minimal {
            result.push(QuasiAttractor {
                class_id: class.id,
                basin,
            });
        }
    }
    Ok(result)
}

/// Topological order of a DAG given as adjacency lists, smallest id first
/// among ready nodes.
pub(crate) fn topo_order(dag: &[Vec<u32>]) -> Vec<u32> {
    let k = dag.len();
    let mut indeg = vec![0usize; k];
    for succ in dag {
        for &v in succ {
            indeg[v as usize] += 1;
        }
    }
    let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<u32>> = (0..k as u32)
        .filter(|&c| indeg[c as usize] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(k);
    while let Some(std::cmp::Reverse(c)) = heap.pop() {
        order.push(c);
        for &v in &dag[c as usize] {
            indeg[v as usize] -= 1;
            if indeg[v as usize] == 0 {
                heap.push(std::cmp::Reverse(v));
            }
        }
    }
    debug_assert_eq!(order.len(), k);
    order
}

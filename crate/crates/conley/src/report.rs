//! Run configuration, pipeline orchestration, and artifact export: one JSON
//! report per analysis, plus DOT for the condensation graph and CSV for
//! exponent spectra.

use crate::classes::{
    chain_recurrence_classes, quasi_attractors, ChainDecomposition, CondensationOrder,
};
use crate::closing::{close_to_periodic, PeriodicOrbit, PseudoOrbit};
use crate::cocycle::{
    classify_class, cocycle_from_orbit, exponents_periodic, lyapunov_qr, CocycleError,
    LyapunovSpectrum, OrbitHyperbolicity,
};
use crate::graph::{build_transition_graph, GraphError, GraphOptions, TransitionGraph};
use crate::grid::BoxGrid;
use crate::lyapunov::{build_filtration, conley_function};
use crate::systems::{make_system, System};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}, {entity}: {message}")]
    Stage {
        stage: &'static str,
        entity: String,
        message: String,
    },
    #[error("stage {stage}, {entity}: budget of {budget} exhausted")]
    Budget {
        stage: &'static str,
        entity: String,
        budget: usize,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ReportError {
    /// Exit code contract: 2 config, 3 numerical, 4 budget.
    pub fn exit_code(&self) -> u8 {
        match self {
            ReportError::Config(_) => 2,
            ReportError::Stage { .. } | ReportError::Io { .. } => 3,
            ReportError::Budget { .. } => 4,
        }
    }
}

fn stage_err<E: std::fmt::Display>(
    stage: &'static str,
    entity: impl Into<String>,
) -> impl FnOnce(E) -> ReportError {
    move |e| ReportError::Stage {
        stage,
        entity: entity.into(),
        message: e.to_string(),
    }
}

/// ε given either directly or in units of the grid's box diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSpec {
    Absolute(f64),
    BoxDiameters(f64),
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::BoxDiameters(1.0)
    }
}

impl EpsilonSpec {
    pub fn resolve(&self, grid: &BoxGrid) -> f64 {
        match *self {
            EpsilonSpec::Absolute(e) => e,
            EpsilonSpec::BoxDiameters(k) => k * grid.box_diameter(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub classes: bool,
    pub filtration: bool,
    pub conley: bool,
    pub closing: bool,
    pub exponents: bool,
    pub classify: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            classes: true,
            filtration: false,
            conley: false,
            closing: false,
            exponents: false,
            classify: false,
        }
    }
}

impl Stages {
    pub fn all() -> Self {
        Stages {
            classes: true,
            filtration: true,
            conley: true,
            closing: true,
            exponents: true,
            classify: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub dot: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

fn default_samples() -> usize {
    3
}

fn default_n_max() -> usize {
    8
}

fn default_cycle_budget() -> usize {
    1_000_000
}

fn default_qr_steps() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub depth: u32,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
    #[serde(default = "default_samples")]
    pub samples_per_axis: usize,
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default)]
    pub stages: Stages,
    #[serde(default)]
    pub seed: u64,
    /// largest power tried when hunting a dominated splitting
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// cap on box visits while hunting a periodic cycle inside a class
    #[serde(default = "default_cycle_budget")]
    pub cycle_budget: usize,
    /// iterations of the QR exponent estimate
    #[serde(default = "default_qr_steps")]
    pub qr_steps: usize,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |m: String| Err(ReportError::Config(m));
        if self.depth < 1 {
            return bad("depth must be at least 1".into());
        }
        if self.samples_per_axis < 2 {
            return bad("samples_per_axis must be at least 2".into());
        }
        let eps = match self.epsilon {
            EpsilonSpec::Absolute(e) => e,
            EpsilonSpec::BoxDiameters(k) => k,
        };
        if !(eps >= 0.0) || !eps.is_finite() {
            return bad("epsilon must be finite and nonnegative".into());
        }
        let s = &self.stages;
        for (on, name, needs) in [
            (s.filtration, "filtration", "classes"),
            (s.conley, "conley", "classes"),
            (s.closing, "closing", "classes"),
        ] {
            if on && !s.classes {
                return bad(format!("stage {name} requires stage {needs}"));
            }
        }
        if s.exponents && !s.closing {
            return bad("stage exponents requires stage closing".into());
        }
        if s.classify && !(s.closing && s.exponents) {
            let missing = if !s.closing { "closing" } else { "exponents" };
            return bad(format!("stage classify requires stage {missing}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSummary {
    pub depth: u32,
    pub box_count: u64,
    pub box_diameter: f64,
    pub epsilon: f64,
    pub samples_per_axis: usize,
    pub rigorous: bool,
    pub edge_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassRow {
    pub id: usize,
    pub box_count: u64,
    pub recurrent: bool,
    pub quasi_attractor: bool,
    pub basin_boxes: Option<u64>,
    pub classification: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitRow {
    pub class: usize,
    pub period: usize,
    pub residual: f64,
    pub winding: Vec<i64>,
    pub representative: Vec<f64>,
    pub hyperbolicity: Option<OrbitHyperbolicity>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConleyValue {
    pub class: usize,
    pub numerator: u64,
    pub denominator: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovSummary {
    /// recurrent class ids in the order the filtration peels them off
    pub filtration_order: Vec<usize>,
    /// sizes |U_0| ≥ … ≥ |U_k| = 0 of the nested attracting sets
    pub filtration_sizes: Vec<u64>,
    pub conley_values: Vec<ConleyValue>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub stages_ms: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: String,
    pub config: RunConfig,
    pub system: crate::systems::SystemSpec,
    pub grid: GridSummary,
    pub classes: Vec<ClassRow>,
    /// covering edges of the condensation order between recurrent classes
    pub condensation_edges: Vec<(usize, usize)>,
    pub lyapunov: Option<LyapunovSummary>,
    pub orbits: Vec<OrbitRow>,
    /// per-class fallout of the closing stage, e.g. Newton degeneracies
    pub closing_notes: Vec<String>,
    pub qr_spectrum: Option<LyapunovSpectrum>,
    /// wall-clock section; excluded from determinism comparisons
    pub timing: Timing,
}

struct StageClock {
    t0: std::time::Instant,
    timing: Timing,
}

impl StageClock {
    fn new() -> Self {
        StageClock {
            t0: std::time::Instant::now(),
            timing: Timing::default(),
        }
    }

    fn lap<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = std::time::Instant::now();
        let out = f();
        self.timing
            .stages_ms
            .insert(name.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn finish(mut self) -> Timing {
        self.timing.total_ms = self.t0.elapsed().as_secs_f64() * 1e3;
        self.timing
    }
}

/// Shortest box cycle through the smallest box of a recurrent class, found
/// by breadth-first search inside the class. Returns the box-id loop with
/// first == last.
fn shortest_class_cycle(
    g: &TransitionGraph,
    dec: &ChainDecomposition,
    class_id: usize,
    budget: usize,
) -> Result<Vec<u64>, ReportError> {
    let class = &dec.classes[class_id];
    let start = class
        .boxes
        .iter()
        .next()
        .expect("recurrent class is nonempty");
    if g.has_edge(start, start as u32 as u64) {
        return Ok(vec![start, start]);
    }
    let in_class = |b: u64| dec.class_of[b as usize] as usize == class_id;
    // BFS forward from start, stop at the first edge returning to start
    let mut parent: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(start, start);
    queue.push_back(start);
    let mut visits = 0usize;
    while let Some(u) = queue.pop_front() {
        for &v in g.edges_from(u) {
            visits += 1;
            if visits > budget {
                return Err(ReportError::Budget {
                    stage: "closing",
                    entity: format!("class {class_id}"),
                    budget,
                });
            }
            let v = v as u64;
            if v == start {
                let mut cycle = vec![start, u];
                let mut w = u;
                while w != start {
                    w = parent[&w];
                    cycle.push(w);
                }
                cycle.reverse();
                return Ok(cycle);
            }
            if in_class(v) && !parent.contains_key(&v) {
                parent.insert(v, u);
                queue.push_back(v);
            }
        }
    }
    Err(ReportError::Stage {
        stage: "closing",
        entity: format!("class {class_id}"),
        message: "no cycle found inside a recurrent class".into(),
    })
}

fn orbit_stays_in_class(
    grid: &BoxGrid,
    boxes: &crate::grid::BoxSet,
    orbit: &PeriodicOrbit,
) -> bool {
    orbit.points.iter().all(|p| {
        grid.box_of(p)
            .map(|b| boxes.contains(grid.linear_id(&b.multi)))
            .unwrap_or(false)
    })
}

/// Close one periodic orbit inside a recurrent class. Candidate seeds, in
/// order: the box-center chain of the shortest cycle through the class, then
/// fixed-point seeds at the sample-lattice points of the class's boxes (a
/// corner seed is what catches equilibria sitting on box boundaries). A
/// candidate only wins if the closed orbit stays inside the class's boxes.
fn close_class_orbit(
    sys: &System,
    g: &TransitionGraph,
    dec: &ChainDecomposition,
    class_id: usize,
    budget: usize,
) -> Result<Result<crate::closing::ClosingResult, String>, ReportError> {
    let grid = g.grid();
    let class = &dec.classes[class_id];
    let cycle = shortest_class_cycle(g, dec, class_id, budget)?;

    let mut candidates: Vec<Vec<Vec<f64>>> = Vec::new();
    candidates.push(cycle.iter().map(|&b| grid.center_of_id(b)).collect());
    let s = g.samples_per_axis();
    let d = grid.dim();
    for b in class.boxes.iter().take(64) {
        let gb = grid.box_from_id(b);
        let center = grid.center(&gb);
        let radius = grid.radius();
        let mut digits = vec![0usize; d];
        for _ in 0..s.pow(d as u32) {
            let v: Vec<f64> = (0..d)
                .map(|a| {
                    let offset = digits[a] as f64 / (s - 1) as f64;
                    center[a] - radius[a] + 2.0 * radius[a] * offset
                })
                .collect();
            candidates.push(vec![v.clone(), v]);
            for digit in digits.iter_mut() {
                *digit += 1;
                if *digit < s {
                    break;
                }
                *digit = 0;
            }
        }
    }

    let mut first_err: Option<String> = None;
    for points in candidates {
        let Ok(po) = PseudoOrbit::from_points(sys, points) else {
            continue;
        };
        match close_to_periodic(sys, &po, 1e-10) {
            Ok(res) if orbit_stays_in_class(grid, &class.boxes, &res.orbit) => {
                return Ok(Ok(res));
            }
            Ok(_) => {
                first_err.get_or_insert_with(|| "closed orbit left the class's boxes".into());
            }
            Err(e) => {
                first_err.get_or_insert_with(|| e.to_string());
            }
        }
    }
    Ok(Err(first_err.unwrap_or_else(|| {
        "no closing candidate produced an orbit".into()
    })))
}

/// Execute the configured pipeline and assemble the report. File outputs
/// are written by [`write_artifacts`]; this function only computes.
pub fn run_analyze(cfg: &RunConfig) -> Result<AnalysisReport, ReportError> {
    cfg.validate()?;
    let sys = make_system(&cfg.system.name, &cfg.system.params)
        .map_err(|e| ReportError::Config(e.to_string()))?;
    let mut clock = StageClock::new();

    let grid = BoxGrid::new(sys.ambient().clone(), cfg.depth)
        .map_err(|e| ReportError::Config(e.to_string()))?;
    let epsilon = cfg.epsilon.resolve(&grid);
    let options = GraphOptions {
        samples_per_axis: cfg.samples_per_axis,
        lipschitz: cfg.lipschitz,
        parallel: cfg.parallel,
    };
    let g = clock
        .lap("graph", || {
            build_transition_graph(&sys, &grid, epsilon, &options)
        })
        .map_err(|e| match e {
            GraphError::InvalidEpsilon(_) | GraphError::InvalidSamples(_) => {
                ReportError::Config(e.to_string())
            }
            other => ReportError::Stage {
                stage: "graph",
                entity: "transition graph".into(),
                message: other.to_string(),
            },
        })?;

    let mut classes_rows: Vec<ClassRow> = Vec::new();
    let mut condensation_edges: Vec<(usize, usize)> = Vec::new();
    let mut lyapunov = None;
    let mut orbits: Vec<OrbitRow> = Vec::new();
    let mut closing_notes: Vec<String> = Vec::new();
    let mut qr_spectrum = None;

    let mut decomposition: Option<(ChainDecomposition, CondensationOrder)> = None;
    if cfg.stages.classes {
        let (dec, order) = clock
            .lap("classes", || chain_recurrence_classes(&g))
            .map_err(stage_err("classes", "decomposition"))?;
        let qas = clock
            .lap("quasi_attractors", || quasi_attractors(&g, &dec, &order))
            .map_err(stage_err("classes", "quasi-attractors"))?;
        for class in &dec.classes {
            if !class.recurrent {
                continue;
            }
            let qa = qas.iter().find(|q| q.class_id == class.id);
            classes_rows.push(ClassRow {
                id: class.id,
                box_count: class.boxes.len() as u64,
                recurrent: true,
                quasi_attractor: qa.is_some(),
                basin_boxes: qa.map(|q| q.basin.len() as u64),
                classification: None,
            });
        }
        condensation_edges = order
            .covers
            .iter()
            .map(|&(a, b)| (a as usize, b as usize))
            .collect();
        condensation_edges.sort_unstable();

        if cfg.stages.filtration || cfg.stages.conley {
            let mut summary = LyapunovSummary {
                filtration_order: Vec::new(),
                filtration_sizes: Vec::new(),
                conley_values: Vec::new(),
            };
            if cfg.stages.filtration {
                let selected: Vec<usize> = dec
                    .classes
                    .iter()
                    .filter(|c| c.recurrent)
                    .map(|c| c.id)
                    .collect();
                let filt = clock
                    .lap("filtration", || {
                        build_filtration(&g, &dec, &order, &selected)
                    })
                    .map_err(stage_err("filtration", "full filtration"))?;
                summary.filtration_order = filt.selected.clone();
                summary.filtration_sizes = filt.sets.iter().map(|s| s.len() as u64).collect();
            }
            if cfg.stages.conley {
                let f = clock
                    .lap("conley", || conley_function(&g, &dec, &order))
                    .map_err(stage_err("conley", "conley function"))?;
                for class in dec.classes.iter().filter(|c| c.recurrent) {
                    let v = f.value_of_class(class.id);
                    summary.conley_values.push(ConleyValue {
                        class: class.id,
                        numerator: *v.numer(),
                        denominator: *v.denom(),
                    });
                }
            }
            lyapunov = Some(summary);
        }
        decomposition = Some((dec, order));
    }

    if cfg.stages.closing {
        let (dec, _) = decomposition.as_ref().expect("closing requires classes");
        let mut per_class: Vec<(usize, Option<PeriodicOrbit>)> = Vec::new();
        for row in &classes_rows {
            let outcome = clock.lap(&format!("closing.class{}", row.id), || {
                close_class_orbit(&sys, &g, dec, row.id, cfg.cycle_budget)
            })?;
            match outcome {
                Ok(res) => {
                    orbits.push(OrbitRow {
                        class: row.id,
                        period: res.orbit.period,
                        residual: res.orbit.residual,
                        winding: res.winding.clone(),
                        representative: res.orbit.representative.clone(),
                        hyperbolicity: None,
                    });
                    per_class.push((row.id, Some(res.orbit)));
                }
                Err(e) => {
                    closing_notes.push(format!("class {}: {e}", row.id));
                    per_class.push((row.id, None));
                }
            }
        }

        if cfg.stages.exponents {
            for (row, (_, orbit)) in orbits.iter_mut().zip(&per_class) {
                let Some(orbit) = orbit else { continue };
                let spec = cocycle_from_orbit(&sys, orbit)
                    .and_then(|c| exponents_periodic(&c))
                    .map_err(stage_err("exponents", format!("class {}", row.class)))?;
                let index = spec.exponents.iter().filter(|&&l| l < 0.0).count();
                row.hyperbolicity = Some(OrbitHyperbolicity {
                    exponents: spec.exponents,
                    index,
                });
            }
            // one seeded QR estimate from a random start, for cross-checking
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let start: Vec<f64> = match sys.ambient() {
                crate::space::Ambient::Torus { dim } => {
                    (0..*dim).map(|_| rng.random_range(0.0..1.0)).collect()
                }
                crate::space::Ambient::Box { lo, hi } => lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| rng.random_range(*a..=*b))
                    .collect(),
            };
            let burn_in = (cfg.qr_steps / 100).max(1);
            qr_spectrum = clock
                .lap("qr", || lyapunov_qr(&sys, &start, cfg.qr_steps, burn_in))
                .map_err(stage_err("exponents", "qr estimate"))
                .map(Some)?;
        }

        if cfg.stages.classify {
            let (dec, _) = decomposition.as_ref().expect("classify requires classes");
            for row in classes_rows.iter_mut() {
                let class = &dec.classes[row.id];
                let class_orbits: Vec<PeriodicOrbit> = per_class
                    .iter()
                    .filter(|(id, o)| *id == row.id && o.is_some())
                    .map(|(_, o)| o.clone().unwrap())
                    .collect();
                let record = clock
                    .lap(&format!("classify.class{}", row.id), || {
                        classify_class(&sys, class, &class_orbits, cfg.n_max)
                    })
                    .map_err(|e| match e {
                        // a closed orbit drifting outside its class is a
                        // numerical finding, not a config problem
                        CocycleError::OrbitOutsideClass { .. } => ReportError::Stage {
                            stage: "classify",
                            entity: format!("class {}", row.id),
                            message: e.to_string(),
                        },
                        other => ReportError::Stage {
                            stage: "classify",
                            entity: format!("class {}", row.id),
                            message: other.to_string(),
                        },
                    })?;
                row.classification = Some(record.verdict);
            }
        }
    }

    let grid_summary = GridSummary {
        depth: cfg.depth,
        box_count: g.grid().box_count(),
        box_diameter: g.grid().box_diameter(),
        epsilon,
        samples_per_axis: g.samples_per_axis(),
        rigorous: g.rigorous(),
        edge_count: g.edge_count() as u64,
    };

    let report = AnalysisReport {
        schema_version: "1".to_string(),
        config: cfg.clone(),
        system: sys.spec().clone(),
        grid: grid_summary,
        classes: classes_rows,
        condensation_edges,
        lyapunov,
        orbits,
        closing_notes,
        qr_spectrum,
        timing: clock.finish(),
    };
    debug_assert!(report.check_consistency().is_ok());
    report.check_consistency().map_err(|m| ReportError::Stage {
        stage: "report",
        entity: "consistency".into(),
        message: m,
    })?;
    Ok(report)
}

impl AnalysisReport {
    /// The quasi-attractor flags must agree with minimality recomputed from
    /// the embedded condensation edges, and ids must be known.
    pub fn check_consistency(&self) -> Result<(), String> {
        let ids: std::collections::BTreeSet<usize> = self.classes.iter().map(|c| c.id).collect();
        if ids.len() != self.classes.len() {
            return Err("duplicate class ids".into());
        }
        for &(a, b) in &self.condensation_edges {
            if !ids.contains(&a) || !ids.contains(&b) {
                return Err(format!(
                    "condensation edge ({a}, {b}) names an unknown class"
                ));
            }
        }
        for orbit in &self.orbits {
            if !ids.contains(&orbit.class) {
                return Err(format!("orbit row names unknown class {}", orbit.class));
            }
        }
        let has_out: std::collections::BTreeSet<usize> =
            self.condensation_edges.iter().map(|&(a, _)| a).collect();
        for c in &self.classes {
            let minimal = !has_out.contains(&c.id);
            if c.quasi_attractor != minimal {
                return Err(format!(
                    "class {} quasi-attractor flag {} disagrees with condensation minimality {}",
                    c.id, c.quasi_attractor, minimal
                ));
            }
        }
        Ok(())
    }
}

/// Deterministic DOT rendering of the condensation graph: nodes sorted by
/// class id with "C<id> (<boxcount>)" labels, edges sorted lexicographically.
pub fn export_dot(classes: &[ClassRow], edges: &[(usize, usize)]) -> String {
    let mut out = String::from("digraph condensation {\n");
    let mut rows: Vec<&ClassRow> = classes.iter().collect();
    rows.sort_by_key(|c| c.id);
    for c in rows {
        out.push_str(&format!(
            "    C{} [label=\"C{} ({})\"];\n",
            c.id, c.id, c.box_count
        ));
    }
    let mut es: Vec<(usize, usize)> = edges.to_vec();
    es.sort_unstable();
    for (a, b) in es {
        out.push_str(&format!("    C{a} -> C{b};\n"));
    }
    out.push_str("}\n");
    out
}

/// CSV of every exponent spectrum in the report: the closed orbits first,
/// then the QR estimate when present.
pub fn export_spectra_csv(report: &AnalysisReport) -> String {
    let d = report.system.dim;
    let mut header = String::from("kind,class,period,residual,index");
    for a in 0..d {
        header.push_str(&format!(",lambda_{a}"));
    }
    let mut out = header;
    out.push('\n');
    for o in &report.orbits {
        let Some(h) = &o.hyperbolicity else { continue };
        out.push_str(&format!(
            "periodic,{},{},{:e},{}",
            o.class, o.period, o.residual, h.index
        ));
        for l in &h.exponents {
            out.push_str(&format!(",{l:e}"));
        }
        out.push('\n');
    }
    if let Some(qr) = &report.qr_spectrum {
        let n = match &qr.source {
            crate::cocycle::SpectrumSource::QrEstimate { iterations, .. } => *iterations,
            crate::cocycle::SpectrumSource::ExactPeriodic => 0,
        };
        out.push_str(&format!("qr,,{n},,"));
        for l in &qr.exponents {
            out.push_str(&format!(",{l:e}"));
        }
        out.push('\n');
    }
    out
}

/// Pretty JSON with stable key order and a trailing newline.
pub fn report_to_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_report(text: &str) -> Result<AnalysisReport, ReportError> {
    serde_json::from_str(text).map_err(|e| ReportError::Config(format!("report parse: {e}")))
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

/// Write the configured artifacts (JSON report, DOT graph, CSV spectra),
/// with explicit paths taking precedence over the config's.
pub fn write_artifacts(
    report: &AnalysisReport,
    json: Option<&Path>,
    dot: Option<&Path>,
    csv: Option<&Path>,
) -> Result<(), ReportError> {
    let cfg = &report.config.outputs;
    if let Some(p) = json.or(cfg.json.as_deref()) {
        write_file(p, &report_to_json(report))?;
    }
    if let Some(p) = dot.or(cfg.dot.as_deref()) {
        write_file(p, &export_dot(&report.classes, &report.condensation_edges))?;
    }
    if let Some(p) = csv.or(cfg.csv.as_deref()) {
        write_file(p, &export_spectra_csv(report))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(name: &str, depth: u32) -> RunConfig {
        RunConfig {
            system: SystemConfig {
                name: name.into(),
                params: serde_json::json!({}),
            },
            depth,
            epsilon: EpsilonSpec::default(),
            samples_per_axis: 3,
            lipschitz: None,
            parallel: true,
            stages: Stages::all(),
            seed: 7,
            n_max: 8,
            cycle_budget: 1_000_000,
            qr_steps: 2_000,
            outputs: OutputPaths::default(),
        }
    }

    #[test]
    fn dependency_validation_names_the_missing_stage() {
        let mut cfg = base_config("cat_map", 3);
        cfg.stages.closing = false;
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("closing"), "{err}");

        let mut cfg = base_config("cat_map", 3);
        cfg.stages.exponents = false;
        cfg.stages.classify = false;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn cat_map_small_analysis_end_to_end() {
        let cfg = base_config("cat_map", 5);
        let report = run_analyze(&cfg).unwrap();
        assert_eq!(report.schema_version, "1");
        assert_eq!(report.classes.len(), 1);
        let c = &report.classes[0];
        assert_eq!(c.box_count, 1024);
        assert!(c.quasi_attractor);
        assert_eq!(c.classification.as_deref(), Some("saddle, index 1"));
        assert!(report.condensation_edges.is_empty());
        assert_eq!(report.orbits.len(), 1);
        let o = &report.orbits[0];
        assert_eq!(o.period, 1);
        assert!(o.residual <= 1e-10);
        let h = o.hyperbolicity.as_ref().unwrap();
        assert_eq!(h.index, 1);
        assert!((h.exponents[1] - 0.9624236501).abs() < 1e-9);
        let qr = report.qr_spectrum.as_ref().unwrap();
        assert!((qr.exponents[1] - 0.9624236501).abs() < 2e-2);
    }

    #[test]
    fn morse_analysis_matches_the_known_structure() {
        let cfg = base_config("morse_gradient_t1", 6);
        let report = run_analyze(&cfg).unwrap();
        assert_eq!(report.classes.len(), 4);
        let qa: Vec<&ClassRow> = report
            .classes
            .iter()
            .filter(|c| c.quasi_attractor)
            .collect();
        assert_eq!(qa.len(), 1);
        assert_eq!(qa[0].classification.as_deref(), Some("sink"));
        let lyap = report.lyapunov.as_ref().unwrap();
        assert_eq!(lyap.filtration_order.len(), 4);
        assert_eq!(*lyap.filtration_sizes.last().unwrap(), 0);
        assert_eq!(lyap.conley_values.len(), 4);
        // min is the unique condensation sink
        let verdicts: Vec<&str> = report
            .classes
            .iter()
            .map(|c| c.classification.as_deref().unwrap())
            .collect();
        assert_eq!(verdicts.iter().filter(|v| **v == "source").count(), 1);
        assert_eq!(
            verdicts.iter().filter(|v| **v == "saddle, index 1").count(),
            2
        );
    }

    #[test]
    fn report_round_trips_and_validates() {
        let mut cfg = base_config("cat_map", 4);
        cfg.stages = Stages {
            classes: true,
            filtration: true,
            conley: true,
            closing: false,
            exponents: false,
            classify: false,
        };
        let report = run_analyze(&cfg).unwrap();
        let json = report_to_json(&report);
        let back = parse_report(&json).unwrap();
        assert!(back.check_consistency().is_ok());
        assert_eq!(report_to_json(&back), json);
    }

    #[test]
    fn drifting_box_system_yields_zero_classes() {
        let mut cfg = base_config("user_defined", 3);
        cfg.system.params = serde_json::json!({
            "space": {"kind": "box", "lo": [0.0], "hi": [1.0]},
            "exprs": ["x0 + 0.3"],
        });
        cfg.stages = Stages::default();
        let report = run_analyze(&cfg).unwrap();
        assert!(report.classes.is_empty());
        assert!(report.condensation_edges.is_empty());
        assert!(report.orbits.is_empty());
        let json = report_to_json(&report);
        assert!(parse_report(&json).is_ok());
    }

    #[test]
    fn dot_export_is_deterministic_and_sorted() {
        let classes = vec![
            ClassRow {
                id: 2,
                box_count: 7,
                recurrent: true,
                quasi_attractor: true,
                basin_boxes: Some(9),
                classification: None,
            },
            ClassRow {
                id: 0,
                box_count: 4,
                recurrent: true,
                quasi_attractor: false,
                basin_boxes: None,
                classification: None,
            },
        ];
        let dot = export_dot(&classes, &[(0, 2)]);
        let expected = "digraph condensation {\n    C0 [label=\"C0 (4)\"];\n    C2 [label=\"C2 (7)\"];\n    C0 -> C2;\n}\n";
        assert_eq!(dot, expected);
    }

    #[test]
    fn quasi_attractor_flags_are_cross_checked() {
        let cfg = base_config("cat_map", 3);
        let mut report = run_analyze(&cfg).unwrap();
        report.classes[0].quasi_attractor = false;
        assert!(report.check_consistency().is_err());
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let raw = serde_json::json!({
            "system": {"name": "cat_map"},
            "depth": 4,
            "surprise": true,
        });
        assert!(serde_json::from_value::<RunConfig>(raw).is_err());
    }

    #[test]
    fn determinism_outside_the_timing_section() {
        let mut cfg = base_config("cat_map", 4);
        cfg.qr_steps = 1_000;
        let a = run_analyze(&cfg).unwrap();
        let b = run_analyze(&cfg).unwrap();
        let strip = |r: &AnalysisReport| {
            let mut v = serde_json::to_value(r).unwrap();
            v.as_object_mut().unwrap().remove("timing");
            serde_json::to_string_pretty(&v).unwrap()
        };
        assert_eq!(strip(&a), strip(&b));
    }
}

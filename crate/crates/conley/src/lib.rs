//! Set-oriented analysis of discrete dynamical systems.
//!
//! The crate decomposes a map's dynamics into chain-recurrence classes over a
//! dyadic box grid, orders the classes into a condensation, certifies the
//! order with filtrations and an exact-rational complete Lyapunov function,
//! closes recurrent pseudo-orbits into genuine periodic orbits with a damped
//! Newton iteration, and classifies the resulting periodic linear cocycles
//! (Lyapunov spectra, contraction at the period, dominated splittings, Pliss
//! times).
//!
//! The layers build on each other:
//!
//! * [`space`] and [`grid`]: ambient spaces, metrics, dyadic box grids.
//! * [`systems`]: the catalog of built-in maps plus expression-defined ones.
//! * [`graph`] and [`classes`]: sampled outer-approximation transition
//!   graphs and their strongly connected structure.
//! * [`lyapunov`]: filtrations and complete Lyapunov functions.
//! * [`closing`]: pseudo-orbits, the nested-cube closing pair selection,
//!   Newton closing, weak shadowing.
//! * [`cocycle`]: periodic linear cocycles and hyperbolicity diagnostics.
//! * [`report`]: the end-to-end pipeline behind the `conley` binary.
//!
//! The `book/` directory holds a guided tour; its code blocks compile and run
//! against this crate as doctests (see `src/guide.rs`).

pub mod classes;
pub mod closing;
pub mod cocycle;
pub mod graph;
pub mod grid;
pub mod lyapunov;
pub mod report;
pub mod space;
pub mod systems;

#[cfg(doctest)]
mod guide;

pub use classes::{
    chain_recurrence_classes, quasi_attractors, ChainClass, ChainDecomposition, CondensationOrder,
    QuasiAttractor,
};
pub use closing::{
    close_to_periodic, generate_pseudo_orbit, select_closing_pair, verify_closing_triple,
    weak_shadow_check, ClosingResult, ClosingTriple, PeriodicOrbit, PseudoOrbit, ShadowReport,
    ShadowWitness,
};
pub use cocycle::{
    check_contraction_at_period, check_domination, classify_class, cocycle_from_orbit,
    exponents_periodic, lyapunov_qr, orbit_splitting, pliss_points, ClassificationRecord,
    LyapunovSpectrum, OrbitHyperbolicity, PeriodicCocycle, PlissReport, SplittingSpec,
};
pub use graph::{build_transition_graph, chain_stable_set, GraphOptions, TransitionGraph};
pub use grid::{BoxGrid, BoxSet, GridBox};
pub use lyapunov::{build_filtration, conley_function, CompleteLyapunovFunction, Filtration};
pub use report::{
    export_dot, export_spectra_csv, parse_report, report_to_json, run_analyze, write_artifacts,
    AnalysisReport, EpsilonSpec, ReportError, RunConfig, Stages,
};
pub use space::{hausdorff_distance, Ambient, Point};
pub use systems::{make_system, System, SystemSpec, TangentMap};

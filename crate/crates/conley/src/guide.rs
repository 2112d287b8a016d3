//! Binds the chapters in `book/src` as doctests, so every code block in the
//! guide compiles and runs against the current public API.

#[doc = include_str!("../../../book/src/overview.md")]
pub struct Overview;

#[doc = include_str!("../../../book/src/spaces-and-grids.md")]
pub struct SpacesAndGrids;

#[doc = include_str!("../../../book/src/systems.md")]
pub struct Systems;

#[doc = include_str!("../../../book/src/transition-graphs.md")]
pub struct TransitionGraphs;

#[doc = include_str!("../../../book/src/chain-classes.md")]
pub struct ChainClasses;

#[doc = include_str!("../../../book/src/lyapunov-functions.md")]
pub struct LyapunovFunctions;

#[doc = include_str!("../../../book/src/closing-orbits.md")]
pub struct ClosingOrbits;

#[doc = include_str!("../../../book/src/shadowing.md")]
pub struct Shadowing;

#[doc = include_str!("../../../book/src/cocycles.md")]
pub struct Cocycles;

#[doc = include_str!("../../../book/src/pipeline.md")]
pub struct Pipeline;

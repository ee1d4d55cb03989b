//! Numerical laboratory for linear cocycles over hyperbolic toral automorphisms.
//!
//! The library is organized around a pipeline: base dynamics on the torus
//! ([`torus`]), matrix cocycles over them ([`cocycle`]), the geometry of
//! conformal structures ([`conformal`]), stable/unstable holonomies
//! ([`holonomy`]), Lyapunov and quasiconformal diagnostics ([`lyapunov`],
//! [`subadditive`]), and invariant-structure detection and normalization
//! ([`reduction`]). The [`runner`] module wires everything to a config-driven
//! CLI that emits JSON summaries and CSV data files.

pub mod cocycle;
pub mod config;
pub mod conformal;
pub mod expr;
pub mod holonomy;
pub mod lyapunov;
pub mod reduction;
pub mod report;
pub mod runner;
pub mod subadditive;
pub mod torus;

pub use cocycle::{CocycleKind, CocycleSpec, IterateResult};
pub use conformal::ConformalStructure;
pub use holonomy::{HolonomyEngine, HolonomyMap};
pub use lyapunov::SpectrumEstimate;
pub use reduction::{FlagStructure, LinePairField};

pub use torus::{Lattice, ToralAutomorphism, TorusPoint};

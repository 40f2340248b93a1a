//! Discrete infinitesimal generators for outflow dynamical systems.
//!
//! Mass transported by an autonomous flow on a compact set `X` is discarded
//! as soon as its trajectory leaves the interior of `X`. This crate
//!
//! * covers `X` by congruent boxes and projects densities onto
//!   piecewise-constant functions ([`covering`]),
//! * integrates trajectories with exit detection and evaluates the outflow
//!   transfer operator exactly along them ([`flow`]),
//! * assembles the sparse upwind face-flux generator on the covering
//!   ([`generator`]) and estimates Ulam transfer matrices ([`ulam`]),
//! * evolves densities with the generated semigroup and solves resolvent
//!   equations ([`semigroup`]),
//! * runs convergence studies and invariant checks ([`experiments`]).
//!
//! Matrices use the column-source convention: entry `(i, j)` is the rate
//! (or fraction) at which mass moves from box `j` into box `i`, and
//! densities evolve as `u' = G u`.

pub mod covering;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod generator;
pub mod par;
pub mod quadrature;
pub mod semigroup;
pub mod sparse;
pub mod ulam;

pub use covering::{BoxCovering, DensityVector, ProjectionRule, SpaceSpec, StateSpace};
pub use error::{Error, Result};
pub use experiments::{ConvergenceReport, InvariantReport, StudySpec};
pub use flow::{FieldSpec, FunctionSpec, IntegratorOptions, TestFunction, VectorField};
pub use generator::{assemble, FaceQuadratureSpec, GeneratorMatrix};
pub use semigroup::{evolve, resolvent, EvolutionMethod, EvolutionSpec};
pub use sparse::SparseMatrix;
pub use ulam::{SamplingSpec, UlamMatrix, UlamMode};

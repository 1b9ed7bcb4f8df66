//! Singular diffusion on weighted metric graphs, built from Dirichlet forms.
//!
//! A finite directed graph carries an interval `[a_e, b_e]` and a finite
//! measure `mu_e` on every edge (piecewise-constant density plus interior
//! atoms) and a nonnegative weight `mu_v` on every vertex. The quadratic form
//!
//! ```text
//! tau(f, g) = sum_e  int (iota f_e)'(x) (iota g_e)'(x) dx  +  <L trace(iota f), trace(iota g)>
//! ```
//!
//! over functions whose boundary trace lies in a prescribed subspace `X` of
//! the trace space defines a self-adjoint operator `H` that drives the heat
//! flow `u' = -Hu`. This crate realizes the whole construction at desk scale
//! on measure-aware meshes:
//!
//! * [`graph`] — the metric graph, its measures, and hypothesis validation;
//! * [`mesh`] — per-edge meshes, the interpolation `iota` (affine across
//!   measure gaps), and the discrete `d/dmu` derivative;
//! * [`trace`] — the weighted trace space, boundary subspaces `X`, coupling
//!   operators `L`, and local (per-vertex) condition builders;
//! * [`operator`] — assembly of `tau`, the constrained operator `H`, and
//!   mechanical verification of its boundary/vertex description;
//! * [`semigroup`] — the evolution `e^{-tH}` with exact positivity and
//!   submarkov criteria;
//! * [`lattice`] — sublattice / Stonean-sublattice detection for `X` and the
//!   matching generator conditions on `L`.
//!
//! The crate is `no_std` (with `alloc`); all IO lives in the companion
//! command-line crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod lattice;
pub mod linalg;
pub mod mesh;
pub mod operator;
pub mod semigroup;
pub mod trace;

pub use error::Error;
pub use graph::{classify, edge_support, validate, Edge, EdgeEnd, EdgeMeasure, MetricGraph, Partition, Vertex};
pub use mesh::{build_mesh, discrete_dmu, iota, EdgeMesh, GlobalDofMap, PiecewiseLinear};
pub use operator::{assemble, build_operator, lower_bound, verify_operator_description, ConstrainedOperator, DiscreteSystem};
pub use semigroup::{check_positive, check_submarkov, evolve, EvolutionResult, SemigroupVerdict};
pub use trace::{assemble_global, assemble_local, density_condition, incidence_sets, x0_and_q0, CouplingOperator, LocalBc, Subspace, TraceSpace, VertexKind};
pub use lattice::{classify_lattice, check_l_positive, check_l_submarkov, theorem_check, LatticeClassification, TheoremCheck};

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

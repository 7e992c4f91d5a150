//! Adaptive Crouzeix-Raviart finite elements for 2D elliptic interface
//! problems with piecewise constant diffusion.
//!
//! The pieces, bottom to top:
//!
//! - [`mesh`]: triangulations with edge topology, newest-vertex bisection
//!   with conforming closure, uniform half refinement, text serialization.
//! - [`quad`]: Gaussian rules on edges and triangles, graded composite
//!   quadrature for integrands with point singularities.
//! - [`problems`]: problem descriptions (diffusion per subdomain, source,
//!   boundary data, optional exact solution), the checkerboard and L-shape
//!   benchmarks, TOML loading.
//! - [`fem`]: CR assembly, direct and preconditioned CG solvers, broken
//!   energy norms, the error-representation identity.
//! - [`estimator`]: residual error indicators (standard, tangential flavor,
//!   and the modification that stays efficient on non-quasi-monotone
//!   coefficient patches), vertex patch classification, half-mesh
//!   interpolation.
//! - [`adapt`]: solve-estimate-mark-refine driver with bulk marking.
//! - [`cli`]: the `crafem` binary (`run`, `describe`).
//!
//! Worked examples, runnable with `cargo run --release --example <name>`:
//!
//! - `solve_kellogg`: checkerboard benchmark, modified estimator.
//! - `solve_lshape`: corner singularity, standard vs tangential indicators.
//! - `indicator_breakdown`: per-component indicator table on one mesh.
//! - `patch_classification`: quasi-monotonicity around a vertex, C_{K,z}.
//! - `mesh_refinement`: bisection, closure, and half-refinement mechanics.
//! - `residual_identity`: the error-representation identity, term by term.
//! - `custom_problem`: define and solve a problem from a TOML string.

pub mod adapt;
pub mod cli;
pub mod estimator;
pub mod fem;
pub mod mesh;
pub mod problems;
pub mod quad;

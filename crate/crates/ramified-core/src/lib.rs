//! Vector analysis on finite graph approximations of finitely ramified
//! fractals.
//!
//! The crate builds level-`n` graphs of self-similar sets such as the
//! Sierpinski gasket, equips them with Dirichlet energy forms and reference
//! measures, and implements the first-order calculus those forms induce:
//!
//! - energy `E(f,g)`, mutual energy measures `Γ(g,h)` and the generator `A`
//!   ([`energy`]);
//! - the Hilbert space of 1-forms with derivation `∂`, divergence `∂*`,
//!   Hodge decomposition and fiberwise norms ([`forms`]);
//! - weak solvers for the quasilinear equation `∂*a(∂u) = f` and the drift
//!   equation `−Au + b(∂u) + ϱu = 0`, plus first-order perturbations of the
//!   generator ([`pde`]);
//! - the hydrodynamic analog: convection, weak stationarity checks, Neumann
//!   problems and pressure recovery ([`hydro`]);
//! - magnetic Schrödinger forms and Hamiltonians and the block Dirac
//!   operator ([`quantum`]).
//!
//! All values are immutable after construction and safe to share across
//! threads. Graph-indexed data (fields, measures, forms) remembers its graph
//! and refuses to mix graphs.

// Precondition guards are written `!(x > 0.0)` on purpose: the negation
// rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod fields;
pub mod forms;
pub mod fractal;
pub mod hydro;
pub mod io;
pub mod linalg;
pub mod pde;
pub mod quantum;

pub use energy::EnergyReport;
pub use error::{Error, Result};
pub use fields::{MeasureWeights, ScalarField};
pub use forms::{FiberView, HodgeParts, OneForm};
pub use fractal::{
    build_level, cycle_rank, same_graph, self_similar_measure, Edge, Embedding, FractalSpec,
    LevelGraph,
};
pub use hydro::{NSReport, NeumannData};
pub use pde::{
    DriftCoefficient, EdgeNonlinearity, GrowthConstants, PositivityReport, SolveDiagnostics,
};
pub use quantum::{
    ComplexOneForm, ComplexScalarField, DiracOperator, MagneticConfig, MagneticConvention,
    MagneticHamiltonian,
};

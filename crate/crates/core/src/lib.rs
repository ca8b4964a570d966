//! Coupled CP tensor decomposition with block proximal-gradient solvers.
//!
//! Two tensors `Y ≈ ⟦A_1, …, A_N⟧` and `Y' ≈ ⟦B_1, …, B_M⟧` are fitted jointly
//! under a coupling term that is nonsmooth but prox-friendly in each factor.
//! The default solver sweeps every factor in turn with a linearized fit and an
//! exact prox on the coupling; two-block and extrapolated variants are
//! provided for comparison.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod prox;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{BlockId, Coupling, CoupledProblem, Side};
pub use solver::{run, run_with_observer, Algorithm, RunOutcome, RunTrace, SolverConfig, SolverState, StopReason};
pub use tensor::{kruskal_reconstruct, DenseTensor, KruskalFactors, Matrix};

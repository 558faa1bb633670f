//! Small semidefinite programming toolkit.
//!
//! Problems mix real symmetric and complex Hermitian PSD blocks with
//! nonnegative or free scalars under linear equality and inequality
//! constraints. [`solve`] runs a primal-dual interior-point method.

mod error;
mod ipm;
mod linalg;
mod problem;

pub use error::ConicError;
pub use ipm::{solve, solve_with, Certificate, ConicSolution, SolveStatus, SolverOptions};
pub use linalg::{max_eigpair, rank1_extract, RankOne};
pub use problem::{
    embed_hermitian, extract_hermitian, BlockId, BlockKind, BlockTerm, ConicProblem, Constraint,
    LinExpr, Relation, ScalarId, ScalarKind, Sense,
};

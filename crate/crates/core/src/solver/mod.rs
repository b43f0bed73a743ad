//! Backward regression solver, nested Monte Carlo oracle, exponential
//! transform reference and truncation ladder.

pub mod backward;
pub mod basis;
pub mod field;
pub mod ladder;
pub mod oracle;
pub mod reference;

pub use backward::{contraction_ok, solve_backward, solve_problem, Cap, SolverConfig};
pub use basis::{BasisSpec, Regressor};
pub use field::{SolutionField, SolveMeta};
pub use ladder::{gate_indices, monotonicity, solve_ladder, LadderMode, MonotonicityReport, TruncationLadder};
pub use oracle::{nested_mc_oracle, OracleConfig, DEFAULT_ORACLE_CAP, MAX_ORACLE_STEPS};
pub use reference::exponential_transform_reference;

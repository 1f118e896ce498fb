//! Group-lasso training of the convex gated network: ISTA and restarted FISTA
//! with backtracking, regularization paths, and small-instance oracles.

pub mod cone;
pub mod engine;
pub mod gram;
pub mod path;
pub mod probe;
pub mod problem;

pub use cone::{cone_feasibility, BlockKind, ConeProgram, ConeReport, CONE_TOLERANCE};
pub use engine::{
    proximal_gradient, LinearSmooth, Penalty, ProxOptions, ProxResult, SolverTrace, StopReason,
    TraceRecord,
};
pub use gram::{GramLoss, MAX_GRAM_ENTRIES};
pub use path::{lambda_max, lambda_max_for, lambda_path, solve_path};
pub use probe::{global_optimality_probe, ProbeConfig, ProbeReport};
pub use problem::{
    objective, prox_blocks, prox_group_l2, smooth_gradient, solve_ista, solve_one_vs_all,
    solve_rfista, GatedDesign, GatedLoss, GatedSolver, GroupLasso, Loss, Method, SolveOutcome,
    SolverConfig,
};

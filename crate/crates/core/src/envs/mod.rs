//! Ground-truth environments: tabular and low-rank MDPs, exact solvers, and
//! the serialized document format.
//!
//! Everything here is immutable after construction; randomness enters only
//! through explicit seed parameters.

mod dp;
mod generate;
mod mdp;
mod serial;

pub use dp::{evaluate_policy, solve_optimal, state_action_occupancy, state_occupancy, Start};
pub use generate::{
    build_linear_mdp, build_lower_bound_pair, build_uneven_coverage_mdp, linearity_residual,
    uneven_coverage_behavior,
};
pub use mdp::{LinearMdp, Policy, RewardRealization, TabularMdp, ValueTables, PROB_TOL};
pub use serial::{fmt_real, fnv1a64, linear_to_json, mdp_from_json, tabular_to_json};

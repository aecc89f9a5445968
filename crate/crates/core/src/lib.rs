//! Stackelberg pricing and offloading game for multi-provider edge-cloud
//! computing.
//!
//! Devices (followers) choose per-provider offloading probabilities to
//! minimize a weighted delay, energy and payment disutility; providers
//! (leaders) set per-cycle prices. [`games::ipoa`] finds the follower Nash
//! equilibrium at fixed prices and [`pricing::ispa`] adjusts prices on top
//! of it.

pub mod baselines;
pub mod error;
pub mod games;
pub mod harness;
pub mod model;
pub mod pricing;
pub mod solver;

pub use error::{ConstraintTag, Error, Result};
pub use model::{
    check_feasible, cost_breakdown, disutility, mean_disutility, osp_utility, uplink_rate,
    CostBreakdown, DeviceParams, FeasibilityReport, Margins, NetworkParams, OspKind, OspParams,
    PriceVector, StrategyProfile, SystemScenario, Weights,
};
pub use solver::{solve_proximal, SolverParams};

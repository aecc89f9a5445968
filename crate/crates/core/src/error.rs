use std::fmt;

use serde::{Deserialize, Serialize};

/// Constraint labels of the per-device offloading problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintTag {
    /// Row sum of offloading probabilities in [0, 1].
    C1,
    /// Each probability in [0, 1].
    C2,
    /// Local M/M/1 CPU queue stable.
    C3,
    /// Wireless M/G/1 uplink queue stable.
    C4,
    /// Edge server M/M/1 queue stable.
    C5,
    /// Expected delay within the device's cap.
    C6,
    /// Expected energy within the device's cap.
    C7,
    /// Payment rate within the device's cap.
    C8,
}

impl ConstraintTag {
    /// True for the queue-stability constraints, outside of which the cost model is undefined.
    pub fn is_stability(self) -> bool {
        matches!(
            self,
            ConstraintTag::C3 | ConstraintTag::C4 | ConstraintTag::C5
        )
    }

    /// True for the QoE caps C6-C8.
    pub fn is_cap(self) -> bool {
        matches!(
            self,
            ConstraintTag::C6 | ConstraintTag::C7 | ConstraintTag::C8
        )
    }
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("queue unstable for device {device}: {constraint} (utilization {utilization:.6})")]
    StabilityViolation {
        constraint: ConstraintTag,
        device: usize,
        osp: Option<usize>,
        utilization: f64,
    },

    #[error("no feasible offloading strategy for device {device}: {reason}")]
    InfeasibleSubproblem { device: usize, reason: String },

    #[error("initial profile infeasible: {0}")]
    InfeasibleInitial(String),

    #[error("solver did not converge after {iterations} Newton iterations")]
    NoConvergence { iterations: usize },

    #[error("follower game did not converge (pricing iteration {iteration})")]
    FollowerDiverged { iteration: usize },

    #[error("invalid override `{name}`: {reason}")]
    InvalidOverride { name: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Self-check of the analytic derivatives on a scenario: gradient and
//! Hessian against central differences, and convexity of the own-row
//! Hessian, at random interior profiles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample_rng;
use crate::error::Result;
use crate::games::check_leader_condition;
use crate::model::{disutility, PriceVector, StrategyProfile, SystemScenario, DELTA_STAB};
use crate::solver::{grad_disutility, hessian_disutility};

pub const GRAD_TOL: f64 = 1e-5;
pub const HESS_TOL: f64 = 1e-4;
pub const EIG_TOL: f64 = -1e-9;
const FD_STEP: f64 = 1e-6;

/// A profile with every row strictly inside the simplex and every queue
/// below `1 - DELTA_STAB` utilization, or `None` after 100 rejected draws.
pub fn random_interior_profile(
    scenario: &SystemScenario,
    rng: &mut ChaCha8Rng,
) -> Option<StrategyProfile> {
    let (m, n) = (scenario.m(), scenario.n());
    let cap = 1.0 - DELTA_STAB;
    for _ in 0..100 {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let w: Vec<f64> = (0..=n).map(|_| 0.05 + rng.random::<f64>()).collect();
                let total: f64 = w.iter().sum();
                w[..n].iter().map(|v| v / total).collect()
            })
            .collect();
        let profile = StrategyProfile::from_rows(rows).ok()?;
        let stable = (0..m).all(|i| {
            let d = scenario.device(i);
            let s: f64 = profile.row(i).iter().sum();
            (1.0 - s) * d.load() < cap * d.cpu_rate
                && d.lambda * d.input_bits * s < cap * scenario.rate(i)
        }) && scenario.osps().iter().enumerate().all(|(j, o)| {
            !o.is_edge() || scenario.column_load(&profile, j, None) < cap * o.service_rate
        });
        if stable {
            return Some(profile);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub points: usize,
    /// Largest `|fd - analytic|_inf / |analytic|_inf` over the gradients.
    pub max_grad_rel_err: f64,
    /// Same measure over the Hessians.
    pub max_hess_rel_err: f64,
    pub min_eigenvalue: f64,
}

impl DerivativeCheck {
    pub fn passed(&self) -> bool {
        self.points > 0
            && self.max_grad_rel_err <= GRAD_TOL
            && self.max_hess_rel_err <= HESS_TOL
            && self.min_eigenvalue >= EIG_TOL
    }
}

fn shifted(profile: &StrategyProfile, i: usize, j: usize, h: f64) -> StrategyProfile {
    let mut p = profile.clone();
    p.set(i, j, p.get(i, j) + h);
    p
}

fn inf_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, b| a.max(b.abs()))
}

/// Derivative checks at `points` random (device, profile) pairs.
pub fn check_derivatives(
    scenario: &SystemScenario,
    prices: &PriceVector,
    points: usize,
    seed: u64,
) -> Result<DerivativeCheck> {
    let n = scenario.n();
    let mut out = DerivativeCheck {
        points: 0,
        max_grad_rel_err: 0.0,
        max_hess_rel_err: 0.0,
        min_eigenvalue: f64::INFINITY,
    };
    for k in 0..points {
        let mut rng = sample_rng(seed, k);
        let Some(profile) = random_interior_profile(scenario, &mut rng) else {
            continue;
        };
        let i = rng.random_range(0..scenario.m());
        let g = grad_disutility(scenario, i, &profile, prices)?.g;
        let hess = hessian_disutility(scenario, i, &profile)?;
        let mut fd_grad = vec![0.0; n];
        let mut hess_err: f64 = 0.0;
        for j in 0..n {
            let (up, dn) = (
                shifted(&profile, i, j, FD_STEP),
                shifted(&profile, i, j, -FD_STEP),
            );
            fd_grad[j] = (disutility(scenario, i, &up, prices)?
                - disutility(scenario, i, &dn, prices)?)
                / (2.0 * FD_STEP);
            let gu = grad_disutility(scenario, i, &up, prices)?.g;
            let gd = grad_disutility(scenario, i, &dn, prices)?.g;
            for a in 0..n {
                hess_err = hess_err.max(((gu[a] - gd[a]) / (2.0 * FD_STEP) - hess.h[(a, j)]).abs());
            }
        }
        let grad_err =
            inf_norm(fd_grad.iter().zip(&g).map(|(a, b)| a - b)) / inf_norm(g.iter().copied());
        out.max_grad_rel_err = out.max_grad_rel_err.max(grad_err);
        out.max_hess_rel_err = out
            .max_hess_rel_err
            .max(hess_err / inf_norm(hess.h.iter().copied()));
        out.min_eigenvalue = out.min_eigenvalue.min(hess.min_eigenvalue());
        out.points += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub derivatives: DerivativeCheck,
    pub leader_condition_holds: bool,
    pub passed: bool,
}

/// Derivative and convexity checks at cost prices plus the leader
/// condition. `passed` covers the derivative checks only; the leader
/// condition is informational.
pub fn validate_scenario(
    scenario: &SystemScenario,
    points: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let derivatives = check_derivatives(scenario, &scenario.min_prices(), points, seed)?;
    let passed = derivatives.passed();
    Ok(ValidationReport {
        derivatives,
        leader_condition_holds: check_leader_condition(scenario).all_hold,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_scenario, ScenarioSpec};

    #[test]
    fn default_scenario_validates() {
        let sc = generate_scenario(&ScenarioSpec::new(8, 1, 3, 2)).unwrap();
        let rep = validate_scenario(&sc, 10, 2).unwrap();
        assert_eq!(rep.derivatives.points, 10);
        assert!(rep.passed, "{rep:?}");
    }
}

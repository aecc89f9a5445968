//! Follower game at fixed prices: the iterative proximal offloading
//! algorithm (IPOA), Nash-equilibrium verification and the leader-game
//! existence condition.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_feasible, disutility, DeviceView, Margins, PriceVector, StrategyProfile, SystemScenario,
};
use crate::solver::{self, barrier::BarrierProblem, SolverParams};

/// When the proximal centroids move to the latest profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CentroidMode {
    #[default]
    EveryRound,
    /// Only after a round whose delta is at most `10 * sigma_conv`.
    OnInnerConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpoaParams {
    pub tau: f64,
    pub sigma_conv: f64,
    pub max_outer_iters: usize,
    pub centroid_mode: CentroidMode,
    pub solver: SolverParams,
    /// History length of Anderson mixing of successive rounds; 0 applies
    /// the proposed rows directly.
    pub anderson_memory: usize,
    /// Keep every round's profile in the trace.
    pub record_profiles: bool,
}

impl Default for IpoaParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            sigma_conv: 1e-3,
            max_outer_iters: 100,
            centroid_mode: CentroidMode::EveryRound,
            solver: SolverParams::default(),
            anderson_memory: 5,
            record_profiles: false,
        }
    }
}

impl IpoaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_conv > 0.0) {
            return Err(Error::InvalidParameter("sigma_conv must be > 0".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_outer_iters must be >= 1".into(),
            ));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidParameter("tau must be >= 0".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Frobenius distance to the previous round; absent for round 0.
    pub frobenius_delta: Option<f64>,
    /// Frobenius distance between the previous profile and the rows the
    /// devices proposed against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub per_device_disutility: Vec<f64>,
    /// Fraction of the proposed move that was applied (1 unless shared edge
    /// queues would have saturated).
    pub step: f64,
    /// Devices whose subproblem failed and kept their previous row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_devices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<StrategyProfile>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub rounds: Vec<RoundRecord>,
}

impl RunTrace {
    /// One JSON object per round.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn last_delta(&self) -> Option<f64> {
        self.rounds.last().and_then(|r| r.frobenius_delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpoaResult {
    pub profile: StrategyProfile,
    /// Completed rounds, excluding the initial profile.
    pub iterations: usize,
    pub trace: RunTrace,
    pub converged: bool,
}

fn device_disutilities(
    scenario: &SystemScenario,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> Vec<f64> {
    (0..scenario.m())
        .map(|i| disutility(scenario, i, profile, prices).unwrap_or(f64::NAN))
        .collect()
}

/// Largest fraction of the move `from -> to` that keeps every edge queue
/// within its stability margin.
fn edge_step(
    scenario: &SystemScenario,
    from: &StrategyProfile,
    to: &StrategyProfile,
    delta_stab: f64,
) -> f64 {
    let cap = 1.0 - delta_stab;
    let mut gamma = 1.0f64;
    let mut limited = false;
    for (j, o) in scenario.osps().iter().enumerate() {
        if !o.is_edge() {
            continue;
        }
        let limit = cap * o.service_rate;
        let (l0, l1) = (
            scenario.column_load(from, j, None),
            scenario.column_load(to, j, None),
        );
        if l1 >= limit && l1 > l0 {
            gamma = gamma.min((limit - l0) / (l1 - l0));
            limited = true;
        }
    }
    if limited {
        (0.95 * gamma).max(0.0)
    } else {
        1.0
    }
}

fn blend(from: &StrategyProfile, to: &StrategyProfile, gamma: f64) -> StrategyProfile {
    if gamma == 1.0 {
        return to.clone();
    }
    let rows = from
        .rows()
        .zip(to.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + gamma * (y - x)).collect())
        .collect();
    StrategyProfile::from_rows(rows).expect("blend of equal shapes")
}

/// Mixing history is discarded when the residual grows by more than this factor.
const RESTART_GROWTH: f64 = 2.0;

/// Rounds without a new best residual before mixing pauses, and the length
/// of each pause.
const STALL_ROUNDS: usize = 10;

/// Anderson mixing for the fixed-point map `profile -> proposed profile`.
struct Anderson {
    memory: usize,
    xs: Vec<Vec<f64>>,
    gs: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            xs: Vec::new(),
            gs: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.gs.clear();
    }

    /// Records `g = G(x)` and returns the mixed next iterate, or `None`
    /// while there is no history.
    fn mix(&mut self, x: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        if self.memory == 0 {
            return None;
        }
        self.xs.push(x.to_vec());
        self.gs.push(g.to_vec());
        if self.xs.len() > self.memory + 1 {
            self.xs.remove(0);
            self.gs.remove(0);
        }
        let k = self.xs.len() - 1;
        if k == 0 {
            return None;
        }
        let d = x.len();
        let resid = |t: usize| {
            DVector::from_iterator(d, self.gs[t].iter().zip(&self.xs[t]).map(|(g, x)| g - x))
        };
        let mut df = DMatrix::zeros(d, k);
        let mut dg = DMatrix::zeros(d, k);
        for c in 0..k {
            df.set_column(c, &(resid(c + 1) - resid(c)));
            let gcol = DVector::from_iterator(
                d,
                self.gs[c + 1].iter().zip(&self.gs[c]).map(|(a, b)| a - b),
            );
            dg.set_column(c, &gcol);
        }
        let f = resid(k);
        let mut normal = df.transpose() * &df;
        let reg = 1e-10 * normal.trace().max(1e-300);
        for c in 0..k {
            normal[(c, c)] += reg;
        }
        let gamma = normal.cholesky()?.solve(&(df.transpose() * f));
        let next = DVector::from_column_slice(g) - dg * gamma;
        next.iter()
            .all(|v| v.is_finite())
            .then(|| next.iter().copied().collect())
    }
}

/// Clips entries to `[0, 1]` and rescales rows that sum above one.
fn clipped_profile(scenario: &SystemScenario, mut data: Vec<f64>) -> Option<StrategyProfile> {
    let n = scenario.n();
    for row in data.chunks_mut(n) {
        row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let s: f64 = row.iter().sum();
        if s > 1.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    StrategyProfile::from_rows(data.chunks(n).map(<[f64]>::to_vec).collect()).ok()
}

/// Runs Jacobi rounds of proximal best responses from `initial` until two
/// consecutive rounds move the profile by at most `sigma_conv`.
pub fn ipoa(
    scenario: &SystemScenario,
    prices: &PriceVector,
    params: &IpoaParams,
    initial: &StrategyProfile,
) -> Result<IpoaResult> {
    params.validate()?;
    if initial.m() != scenario.m() || initial.n() != scenario.n() {
        return Err(Error::InfeasibleInitial(
            "profile shape does not match the scenario".into(),
        ));
    }
    let margins = Margins {
        delta_stab: params.solver.delta_stab,
        ..Margins::default()
    };
    let report = check_feasible(scenario, initial, prices, &margins);
    if !report.is_stable() {
        return Err(Error::InfeasibleInitial(format!(
            "violates {:?}",
            report.tags()
        )));
    }

    let record = |round, delta, residual, step, failed, profile: &StrategyProfile| RoundRecord {
        round,
        frobenius_delta: delta,
        residual,
        per_device_disutility: device_disutilities(scenario, profile, prices),
        step,
        failed_devices: failed,
        profile: params.record_profiles.then(|| profile.clone()),
    };

    let mut current = initial.clone();
    let mut centroid = initial.clone();
    let mut trace = RunTrace {
        rounds: vec![record(0, None, None, 1.0, Vec::new(), &current)],
    };
    let mut below = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let mut mixer = Anderson::new(params.anderson_memory);
    let mut last_residual = f64::INFINITY;
    let mut best_residual = f64::INFINITY;
    let mut since_best = 0usize;
    let mut plain_left = 0usize;

    for round in 1..=params.max_outer_iters {
        let mut proposal = current.clone();
        let mut failed = Vec::new();
        for i in 0..scenario.m() {
            let sol = solver::solve_proximal_from(
                scenario,
                i,
                &current,
                prices,
                centroid.row(i),
                params.tau,
                &params.solver,
                Some(current.row(i)),
            );
            match sol {
                Ok(s) => proposal.set_row(i, &s.alpha),
                Err(_) => failed.push(i),
            }
        }
        let residual = proposal.frobenius_distance(&current);
        if residual > RESTART_GROWTH * last_residual {
            mixer.clear();
        }
        last_residual = residual;
        if residual < best_residual {
            best_residual = residual;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= STALL_ROUNDS && plain_left == 0 {
            mixer.clear();
            plain_left = 2 * STALL_ROUNDS;
            since_best = 0;
        }
        let mixed = if plain_left > 0 {
            plain_left -= 1;
            None
        } else {
            mixer.mix(current.as_slice(), proposal.as_slice())
        };
        let accepted = mixed
            .clone()
            .and_then(|data| clipped_profile(scenario, data))
            .filter(|p| check_feasible(scenario, p, prices, &margins).is_stable());
        let (next, step) = match accepted {
            Some(p) => (p, 1.0),
            None => {
                if mixed.is_some() {
                    mixer.clear();
                }
                let step = edge_step(scenario, &current, &proposal, params.solver.delta_stab);
                (blend(&current, &proposal, step), step)
            }
        };
        let delta = next.frobenius_distance(&current);
        current = next;
        iterations = round;

        let refresh = match params.centroid_mode {
            CentroidMode::EveryRound => true,
            CentroidMode::OnInnerConvergence => delta <= 10.0 * params.sigma_conv,
        };
        if refresh {
            if params.centroid_mode == CentroidMode::OnInnerConvergence {
                mixer.clear();
            }
            centroid = current.clone();
        }
        trace.rounds.push(record(
            round,
            Some(delta),
            Some(residual),
            step,
            failed,
            &current,
        ));

        below = if delta.max(residual) <= params.sigma_conv {
            below + 1
        } else {
            0
        };
        if below >= 2 {
            converged = true;
            break;
        }
    }
    Ok(IpoaResult {
        profile: current,
        iterations,
        trace,
        converged,
    })
}

/// IPOA from the all-local profile.
pub fn ipoa_from_local(
    scenario: &SystemScenario,
    prices: &PriceVector,
    params: &IpoaParams,
) -> Result<IpoaResult> {
    ipoa(
        scenario,
        prices,
        params,
        &StrategyProfile::zeros(scenario.m(), scenario.n()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeReport {
    pub is_ne: bool,
    /// Largest disutility decrease any device achieves by deviating alone.
    pub worst_deviation: f64,
    pub worst_device: Option<usize>,
    pub per_device: Vec<f64>,
}

/// Visits every row with entries in multiples of `1/k` and sum at most 1.
pub(crate) fn simplex_grid(n: usize, k: usize, visit: &mut dyn FnMut(&[f64])) {
    fn rec(
        pos: usize,
        left: usize,
        k: usize,
        units: &mut Vec<usize>,
        row: &mut Vec<f64>,
        visit: &mut dyn FnMut(&[f64]),
    ) {
        if pos == units.len() {
            visit(row);
            return;
        }
        for u in 0..=left {
            units[pos] = u;
            row[pos] = u as f64 / k as f64;
            rec(pos + 1, left - u, k, units, row, visit);
        }
    }
    let mut units = vec![0; n];
    let mut row = vec![0.0; n];
    rec(0, k, k, &mut units, &mut row, visit);
}

/// Checks that no device can lower its disutility by more than `eps_ne`
/// through a unilateral deviation, searching a feasibility-filtered grid of
/// step `grid_step` plus the solver's best response.
pub fn verify_ne(
    scenario: &SystemScenario,
    prices: &PriceVector,
    profile: &StrategyProfile,
    eps_ne: f64,
    grid_step: f64,
) -> NeReport {
    verify_ne_with(
        scenario,
        prices,
        profile,
        eps_ne,
        grid_step,
        &SolverParams::default(),
    )
}

pub fn verify_ne_with(
    scenario: &SystemScenario,
    prices: &PriceVector,
    profile: &StrategyProfile,
    eps_ne: f64,
    grid_step: f64,
    params: &SolverParams,
) -> NeReport {
    let k = (1.0 / grid_step).round().max(1.0) as usize;
    let mut per_device = Vec::with_capacity(scenario.m());
    for i in 0..scenario.m() {
        let view = DeviceView::new(scenario, i, profile, prices);
        let Ok(current) = view.disutility(profile.row(i)) else {
            per_device.push(f64::INFINITY);
            continue;
        };
        let zero = vec![0.0; scenario.n()];
        let problem = solver::ProximalProblem::new(view.clone(), &zero, 0.0, params.delta_stab);
        let mut g = vec![0.0; problem.n_constraints()];
        let mut best = current;
        simplex_grid(scenario.n(), k, &mut |row| {
            if problem.feasible(row, &mut g) {
                if let Ok(u) = view.disutility(row) {
                    best = best.min(u);
                }
            }
        });
        if let Ok(br) = solver::best_response(scenario, i, profile, prices, params) {
            if let Ok(u) = view.disutility(&br) {
                best = best.min(u);
            }
        }
        per_device.push(current - best);
    }
    let (worst_device, worst_deviation) = per_device.iter().copied().enumerate().fold(
        (None, f64::NEG_INFINITY),
        |(bi, bv), (i, v)| if v > bv { (Some(i), v) } else { (bi, bv) },
    );
    NeReport {
        is_ne: worst_deviation <= eps_ne,
        worst_deviation,
        worst_device,
        per_device,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderDeviceReport {
    pub pi: f64,
    pub theta_cap: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderConditionReport {
    pub devices: Vec<LeaderDeviceReport>,
    pub all_hold: bool,
}

/// Sufficient condition for a price equilibrium among providers:
///
/// ```text
/// 2 Pi [c^3 / (f - lambda c)^3 + lambda c^4 / (f - lambda c)^5] <= Theta S2 z / r
/// Pi    = P_max / (theta_p lambda c) (theta_d / D_max + theta_e eps_local / E_max)
/// Theta = P_max / (theta_p lambda c) (theta_d / D_max + theta_e eps_tx / E_max)
/// ```
///
/// With `theta_p = 0` both scale factors are infinite; `holds` then compares
/// the bracketed terms without the common positive factor.
pub fn check_leader_condition(scenario: &SystemScenario) -> LeaderConditionReport {
    let devices: Vec<LeaderDeviceReport> = scenario
        .devices()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let w = d.weights;
            let scale = d.p_max / (w.payment * d.lambda * d.cycles);
            let local = w.delay / d.d_max + w.energy * d.power_local / d.e_max;
            let radio = w.delay / d.d_max + w.energy * d.power_tx / d.e_max;
            let pi = scale * local;
            let theta_cap = scale * radio;
            let head = d.cpu_rate - d.load();
            let bracket =
                d.cycles.powi(3) / head.powi(3) + d.lambda * d.cycles.powi(4) / head.powi(5);
            let r = scenario.rate(i);
            let zr = d.input_bits / r;
            let s2 = d.service_var + zr * zr;
            let lhs = 2.0 * pi * bracket;
            let rhs = theta_cap * s2 * d.input_bits / r;
            let holds = if w.payment > 0.0 {
                lhs <= rhs
            } else {
                2.0 * local * bracket <= radio * s2 * d.input_bits / r
            };
            LeaderDeviceReport {
                pi,
                theta_cap,
                lhs,
                rhs,
                holds,
            }
        })
        .collect();
    let all_hold = devices.iter().all(|d| d.holds);
    LeaderConditionReport { devices, all_hold }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::*;
    use crate::model::Weights;
    use crate::solver::best_response;

    fn two_by_two() -> SystemScenario {
        let mut a = midpoint_device(Weights::new(0.6, 0.2, 0.2));
        a.cpu_rate = 3.2e8;
        let b = midpoint_device(Weights::new(0.5, 0.3, 0.2));
        SystemScenario::new(vec![a, b], vec![cloud(2e9), edge(1.5e9)], reference_net()).unwrap()
    }

    #[test]
    fn single_device_converges_to_best_response() {
        let d = midpoint_device(Weights::new(0.5, 0.3, 0.2));
        let sc = SystemScenario::new(vec![d], vec![cloud(2e9), edge(2e9)], reference_net()).unwrap();
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &sc).unwrap();
        let res = ipoa_from_local(
            &sc,
            &prices,
            &IpoaParams {
                tau: 0.0,
                ..IpoaParams::default()
            },
        )
        .unwrap();
        assert!(res.converged);
        let br = best_response(&sc, 0, &res.profile, &prices, &SolverParams::default()).unwrap();
        for j in 0..2 {
            assert!((res.profile.get(0, j) - br[j]).abs() < 1e-6);
        }
        assert!(res.iterations <= 3, "{}", res.iterations);
    }

    #[test]
    fn two_devices_reach_grid_verified_equilibrium() {
        let sc = two_by_two();
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &sc).unwrap();
        for mode in [CentroidMode::EveryRound, CentroidMode::OnInnerConvergence] {
            let params = IpoaParams {
                centroid_mode: mode,
                sigma_conv: 1e-6,
                max_outer_iters: 1000,
                ..IpoaParams::default()
            };
            let res = ipoa_from_local(&sc, &prices, &params).unwrap();
            assert!(res.converged, "{mode:?} {}", res.iterations);
            let rep = verify_ne(&sc, &prices, &res.profile, 1e-4, 1e-2);
            assert!(rep.is_ne, "{mode:?}: {rep:?}");
        }
    }

    #[test]
    fn evenly_split_is_not_an_equilibrium() {
        let sc = two_by_two();
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &sc).unwrap();
        let even = StrategyProfile::from_rows(vec![vec![1.0 / 3.0; 2]; 2]).unwrap();
        assert!(!verify_ne(&sc, &prices, &even, 1e-3, 0.05).is_ne);
    }

    #[test]
    fn trace_has_initial_round_and_settles() {
        let sc = two_by_two();
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &sc).unwrap();
        let res = ipoa_from_local(&sc, &prices, &IpoaParams::default()).unwrap();
        assert_eq!(res.trace.rounds[0].round, 0);
        assert!(res.trace.rounds[0].frobenius_delta.is_none());
        assert_eq!(res.trace.rounds.len(), res.iterations + 1);
        let n = res.trace.rounds.len();
        for r in &res.trace.rounds[n - 2..] {
            assert!(r.frobenius_delta.unwrap() <= 1e-3);
        }
        let mut buf = Vec::new();
        res.trace.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), n);
    }

    #[test]
    fn infeasible_initial_rejected() {
        let sc = two_by_two();
        let prices = sc.min_prices();
        let bad = StrategyProfile::from_rows(vec![vec![0.9, 0.9], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            ipoa(&sc, &prices, &IpoaParams::default(), &bad),
            Err(Error::InfeasibleInitial(_))
        ));
    }

    #[test]
    fn leader_condition_payment_only_holds() {
        let d = midpoint_device(Weights::new(0.0, 0.0, 1.0));
        let sc = SystemScenario::new(vec![d], vec![cloud(2e9)], reference_net()).unwrap();
        let rep = check_leader_condition(&sc);
        assert_eq!(rep.devices[0].pi, 0.0);
        assert_eq!(rep.devices[0].theta_cap, 0.0);
        assert!(rep.all_hold);
    }

    #[test]
    fn leader_condition_fails_near_local_saturation() {
        let mut d = midpoint_device(Weights::new(0.4, 0.3, 0.3));
        d.cpu_rate = d.load() * (1.0 + 1e-4);
        let sc = SystemScenario::new(vec![d], vec![cloud(2e9)], reference_net()).unwrap();
        assert!(!check_leader_condition(&sc).all_hold);
    }

    #[test]
    fn grid_enumerates_simplex() {
        let mut count = 0;
        simplex_grid(2, 4, &mut |row| {
            assert!(row.iter().sum::<f64>() <= 1.0 + 1e-12);
            count += 1;
        });
        assert_eq!(count, 15);
    }
}

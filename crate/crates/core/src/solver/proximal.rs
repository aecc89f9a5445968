//! Per-device proximally regularized offloading subproblem
//!
//! ```text
//! min_x  U_i(x, A_-i) + tau/2 |x - beta|^2
//! s.t.   x >= 0, sum x <= 1, queue utilizations <= 1 - delta, D <= D_max, E <= E_max, P <= P_max
//! ```

use nalgebra::{DMatrix, DVector};

use super::barrier::{self, BarrierError, BarrierOptions, BarrierProblem, SparseRow};
use super::SolverParams;
use crate::error::{Error, Result};
use crate::model::{DeviceView, PriceVector, StrategyProfile, SystemScenario, FEAS_TOL};

/// Duality gap below which centered points are refined by active-set Newton.
const POLISH_GAP: f64 = 1e-2;

/// Constraints of a warm start within this slack seed the active set.
const WARM_ACTIVE_SLACK: f64 = 1e-9;

/// Interior start used when no warm start is available.
pub const START_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProximalSolution {
    pub alpha: Vec<f64>,
    /// Proximal objective at `alpha`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub newton_iters: usize,
    /// True when the active-set refinement was accepted.
    pub polished: bool,
}

pub(crate) struct ProximalProblem<'a> {
    view: DeviceView<'a>,
    beta: &'a [f64],
    tau: f64,
    cap: f64,
    edges: Vec<usize>,
}

impl<'a> ProximalProblem<'a> {
    pub fn new(view: DeviceView<'a>, beta: &'a [f64], tau: f64, delta_stab: f64) -> Self {
        let edges = view
            .osps
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_edge())
            .map(|(j, _)| j)
            .collect();
        Self {
            view,
            beta,
            tau,
            cap: 1.0 - delta_stab,
            edges,
        }
    }

    fn n(&self) -> usize {
        self.view.n()
    }

    fn c3(&self) -> usize {
        self.n() + 1
    }

    fn c5(&self, e: usize) -> usize {
        self.n() + 3 + e
    }

    fn first_cap(&self) -> usize {
        self.n() + 3 + self.edges.len()
    }

    /// All constraints hold within the feasibility tolerance.
    pub fn feasible(&self, x: &[f64], g: &mut [f64]) -> bool {
        self.eval(x, g).is_some() && g.iter().all(|v| *v <= FEAS_TOL)
    }

    fn hard_ok(&self, x: &[f64]) -> bool {
        let mut g = vec![0.0; self.n_constraints()];
        self.hard_constraints(x, &mut g);
        g[..self.n_hard()].iter().all(|v| *v < 0.0)
    }

    fn hard_constraints(&self, x: &[f64], g: &mut [f64]) {
        let d = self.view.dev;
        let n = self.n();
        let s: f64 = x.iter().sum();
        for j in 0..n {
            g[j] = -x[j];
        }
        g[n] = s - 1.0;
        g[self.c3()] = (1.0 - s) * d.load() / d.cpu_rate - self.cap;
        g[n + 2] = d.lambda * d.input_bits * s / self.view.rate - self.cap;
        for (e, &j) in self.edges.iter().enumerate() {
            g[self.c5(e)] = (self.view.others_load[j] + x[j] * d.load())
                / self.view.osps[j].service_rate
                - self.cap;
        }
    }
}

impl BarrierProblem for ProximalProblem<'_> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn n_constraints(&self) -> usize {
        self.first_cap() + 3
    }

    fn n_hard(&self) -> usize {
        self.first_cap()
    }

    fn eval(&self, x: &[f64], g: &mut [f64]) -> Option<f64> {
        self.hard_constraints(x, g);
        let b = self.view.breakdown(x).ok()?;
        let d = self.view.dev;
        let k = self.first_cap();
        g[k] = b.delay / d.d_max - 1.0;
        g[k + 1] = b.energy / d.e_max - 1.0;
        g[k + 2] = b.payment / d.p_max - 1.0;
        let prox: f64 = x
            .iter()
            .zip(self.beta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Some(b.disutility + 0.5 * self.tau * prox)
    }

    fn derivatives(
        &self,
        x: &[f64],
        scale: f64,
        grad: &mut DVector<f64>,
        hess: &mut DMatrix<f64>,
        jac: &mut Vec<SparseRow>,
    ) {
        let n = self.n();
        let d = self.view.dev;
        let Ok(rd) = self.view.derivs(x) else {
            return;
        };
        if scale != 0.0 {
            let gu = rd.grad_disutility(&self.view);
            let hu = self
                .view
                .hessian(x)
                .map(|h| h.h)
                .unwrap_or_else(|_| DMatrix::zeros(n, n));
            for j in 0..n {
                grad[j] += scale * (gu[j] + self.tau * (x[j] - self.beta[j]));
                hess[(j, j)] += scale * self.tau;
            }
            *hess += hu * scale;
        }
        let all = |v: f64| (0..n).map(|j| (j, v)).collect::<SparseRow>();
        for j in 0..n {
            jac.push(vec![(j, -1.0)]);
        }
        jac.push(all(1.0));
        jac.push(all(-d.load() / d.cpu_rate));
        jac.push(all(d.lambda * d.input_bits / self.view.rate));
        for &j in &self.edges {
            jac.push(vec![(j, d.load() / self.view.osps[j].service_rate)]);
        }
        let dense = |v: &[f64], s: f64| {
            v.iter()
                .enumerate()
                .map(|(j, g)| (j, g / s))
                .collect::<SparseRow>()
        };
        jac.push(dense(&rd.grad_delay, d.d_max));
        jac.push(dense(&rd.grad_energy, d.e_max));
        jac.push(dense(&rd.grad_payment, d.p_max));
    }

    fn add_constraint_hessians(&self, x: &[f64], weights: &[f64], hess: &mut DMatrix<f64>) {
        let k = self.first_cap();
        let (wd, we) = (weights[k], weights[k + 1]);
        if wd == 0.0 && we == 0.0 {
            return;
        }
        let Ok(curv) = self.view.curvature(x) else {
            return;
        };
        let d = self.view.dev;
        *hess += DeviceView::delay_hessian(&curv) * (wd / d.d_max);
        *hess += self.view.energy_hessian(&curv) * (we / d.e_max);
    }
}

/// Moves a candidate strictly inside the probability simplex.
fn pulled_inward(x: &[f64]) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().map(|v| v.clamp(START_FLOOR, 1.0)).collect();
    let s: f64 = y.iter().sum();
    let limit = 1.0 - START_FLOOR;
    if s > limit {
        y.iter_mut().for_each(|v| *v *= limit / s);
    }
    y
}

fn candidates(p: &ProximalProblem<'_>, warm: Option<&[f64]>) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut out = Vec::new();
    if let Some(w) = warm {
        out.push(pulled_inward(w));
    }
    out.push(vec![START_FLOOR; n]);
    out.push(pulled_inward(p.beta));
    let clouds: Vec<usize> = (0..n).filter(|j| !p.view.osps[*j].is_edge()).collect();
    for share in [0.25, 0.5, 0.75, 0.95] {
        if !clouds.is_empty() {
            let mut x = vec![START_FLOOR; n];
            for &j in &clouds {
                x[j] = share / clouds.len() as f64;
            }
            out.push(x);
        }
        out.push(vec![share / n as f64; n]);
    }
    out
}

fn infeasible(i: usize, reason: &str) -> Error {
    Error::InfeasibleSubproblem {
        device: i,
        reason: reason.into(),
    }
}

fn options(params: &SolverParams) -> BarrierOptions {
    BarrierOptions {
        mu: params.barrier_mu,
        gap_tol: params.tol_kkt,
        max_newton_iters: params.max_newton_iters,
        t0: params.barrier_t0,
        polish_gap: POLISH_GAP,
        polish_feas_tol: params.tol_kkt * 1e-4,
        ..BarrierOptions::default()
    }
}

pub(crate) fn solve_problem(
    p: &ProximalProblem<'_>,
    warm: Option<&[f64]>,
    params: &SolverParams,
) -> Result<ProximalSolution> {
    let i = p.view.index;
    let opts = options(params);
    if let Some(pol) =
        warm.and_then(|w| barrier::polish_from(p, w, WARM_ACTIVE_SLACK, opts.polish_feas_tol))
    {
        if pol.kkt_residual <= params.tol_kkt {
            return Ok(ProximalSolution {
                alpha: pol.x,
                objective: pol.objective,
                kkt_residual: pol.kkt_residual,
                newton_iters: 0,
                polished: true,
            });
        }
    }
    let cands = candidates(p, warm);
    let mut g = vec![0.0; p.n_constraints()];
    let fully = cands
        .iter()
        .find(|x| p.eval(x, &mut g).is_some() && g.iter().all(|v| *v < 0.0));
    let (start, mut iters) = match fully {
        Some(x) => (x.clone(), 0),
        None => {
            let Some(x) = cands
                .iter()
                .find(|x| p.hard_ok(x) && p.eval(x, &mut g).is_some())
            else {
                return Err(infeasible(i, "other devices saturate the shared queues"));
            };
            barrier::phase_one(p, x, &opts).map_err(|e| match e {
                BarrierError::NoConvergence { iterations } => Error::NoConvergence { iterations },
                BarrierError::NotStrictlyFeasible => infeasible(i, "QoE caps cannot be met"),
            })?
        }
    };
    let out = barrier::minimize(p, &start, &opts, None).map_err(|e| match e {
        BarrierError::NoConvergence { iterations } => Error::NoConvergence {
            iterations: iterations + iters,
        },
        BarrierError::NotStrictlyFeasible => infeasible(i, "no strictly feasible start"),
    })?;
    iters += out.newton_iters;
    let polished = out
        .polished
        .clone()
        .or_else(|| barrier::polish(p, &out, opts.polish_feas_tol));
    if let Some(pol) = polished {
        if pol.kkt_residual <= out.kkt_residual.max(params.tol_kkt) {
            return Ok(ProximalSolution {
                alpha: pol.x,
                objective: pol.objective,
                kkt_residual: pol.kkt_residual,
                newton_iters: iters,
                polished: true,
            });
        }
    }
    Ok(ProximalSolution {
        alpha: out.x,
        objective: out.objective,
        kkt_residual: out.kkt_residual,
        newton_iters: iters,
        polished: false,
    })
}

fn check_inputs(scenario: &SystemScenario, i: usize, beta: &[f64], tau: f64) -> Result<()> {
    if i >= scenario.m() {
        return Err(Error::InvalidParameter(format!(
            "device index {i} out of range"
        )));
    }
    if beta.len() != scenario.n() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidParameter(
            "centroid must be a finite length-N vector".into(),
        ));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be >= 0, got {tau}"
        )));
    }
    Ok(())
}

/// Full solver report for device `i`, optionally warm-started from `warm`.
/// Row `i` of `profile` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn solve_proximal_from(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
    prices: &PriceVector,
    beta: &[f64],
    tau: f64,
    params: &SolverParams,
    warm: Option<&[f64]>,
) -> Result<ProximalSolution> {
    check_inputs(scenario, i, beta, tau)?;
    let view = DeviceView::new(scenario, i, profile, prices);
    let p = ProximalProblem::new(view, beta, tau, params.delta_stab);
    solve_problem(&p, warm, params)
}

/// Minimizer of the proximally regularized disutility of device `i`
/// against the other rows of `profile_others`.
pub fn solve_proximal(
    scenario: &SystemScenario,
    i: usize,
    profile_others: &StrategyProfile,
    prices: &PriceVector,
    beta: &[f64],
    tau: f64,
    params: &SolverParams,
) -> Result<Vec<f64>> {
    solve_proximal_from(scenario, i, profile_others, prices, beta, tau, params, None)
        .map(|s| s.alpha)
}

/// Unregularized best response of device `i`.
pub fn best_response(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
    prices: &PriceVector,
    params: &SolverParams,
) -> Result<Vec<f64>> {
    let zero = vec![0.0; scenario.n()];
    solve_proximal(scenario, i, profile, prices, &zero, 0.0, params)
}

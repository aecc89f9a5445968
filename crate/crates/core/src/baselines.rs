//! Comparison schemes (local-only, cloud-only, even split, social optimum)
//! and the price of anarchy.
//!
//! The social problem minimizes the mean disutility over the whole profile.
//! Rows interact only through edge headroom `H_x = f_x - L_x`: summed over
//! devices, the edge compute delay terms are `A_x / H_x` with
//! `A_x = sum_i w_i alpha_ix c_i`, so each edge column adds
//! `(v u' + u v') / H^2 + 2 A u u' / H^3` to the Hessian, where
//! `u_i = lambda_i c_i` and `v_i = w_i c_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConstraintTag, Error, Result};
use crate::games::{ipoa_from_local, IpoaParams};
use crate::harness::restart_rng;
use crate::model::{
    check_feasible, mean_disutility, DeviceView, Margins, PriceVector, StrategyProfile,
    SystemScenario, FEAS_TOL,
};
use crate::solver::barrier::{self, BarrierError, BarrierOptions, BarrierProblem, SparseRow};
use crate::solver::{SolverParams, START_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    LocalOnly,
    CloudOnly,
    Evenly,
    SociallyOptimal,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::LocalOnly,
        BaselineKind::CloudOnly,
        BaselineKind::Evenly,
        BaselineKind::SociallyOptimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::LocalOnly => "local_only",
            BaselineKind::CloudOnly => "cloud_only",
            BaselineKind::Evenly => "evenly",
            BaselineKind::SociallyOptimal => "socially_optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialParams {
    /// Random feasible starts in addition to any warm start.
    pub restarts: usize,
    /// Seed of the restart streams.
    pub seed: u64,
    pub solver: SolverParams,
}

impl Default for SocialParams {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            solver: SolverParams::default(),
        }
    }
}

/// Fixed-rule profile for `LocalOnly`, `CloudOnly` and `Evenly`; the social
/// optimum with default parameters otherwise.
pub fn baseline_profile(
    scenario: &SystemScenario,
    kind: BaselineKind,
    prices: &PriceVector,
) -> Result<StrategyProfile> {
    let (m, n) = (scenario.m(), scenario.n());
    match kind {
        BaselineKind::LocalOnly => Ok(StrategyProfile::zeros(m, n)),
        BaselineKind::CloudOnly => {
            let nc = scenario.n_cloud();
            if nc == 0 {
                return Err(Error::InvalidParameter(
                    "cloud-only baseline needs a cloud OSP".into(),
                ));
            }
            let row: Vec<f64> = scenario
                .osps()
                .iter()
                .map(|o| if o.is_edge() { 0.0 } else { 1.0 / nc as f64 })
                .collect();
            StrategyProfile::from_rows(vec![row; m])
        }
        BaselineKind::Evenly => StrategyProfile::from_rows(vec![vec![1.0 / (n + 1) as f64; n]; m]),
        BaselineKind::SociallyOptimal => {
            socially_optimal(scenario, prices, &SocialParams::default(), None).map(|s| s.profile)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub profile: StrategyProfile,
    /// `+inf` when some queue is unstable and the disutility is undefined.
    pub mean_disutility: f64,
    pub feasible: bool,
    pub violations: Vec<ConstraintTag>,
}

impl BaselineOutcome {
    fn new(
        scenario: &SystemScenario,
        kind: BaselineKind,
        profile: StrategyProfile,
        prices: &PriceVector,
    ) -> Self {
        let report = check_feasible(scenario, &profile, prices, &Margins::default());
        let mean = mean_disutility(scenario, &profile, prices).unwrap_or(f64::INFINITY);
        Self {
            kind,
            profile,
            mean_disutility: mean,
            feasible: report.feasible,
            violations: report.tags(),
        }
    }
}

/// Profile, mean disutility and feasibility report of one scheme.
pub fn evaluate_baseline(
    scenario: &SystemScenario,
    kind: BaselineKind,
    prices: &PriceVector,
    social: &SocialParams,
) -> Result<BaselineOutcome> {
    let profile = match kind {
        BaselineKind::SociallyOptimal => socially_optimal(scenario, prices, social, None)?.profile,
        other => baseline_profile(scenario, other, prices)?,
    };
    Ok(BaselineOutcome::new(scenario, kind, profile, prices))
}

/// Mean-disutility minimization over the joint profile.
pub(crate) struct SocialProblem<'a> {
    scenario: &'a SystemScenario,
    prices: &'a PriceVector,
    cap: f64,
    edges: Vec<usize>,
}

/// Per-device quantities shared by the objective and the caps.
struct RowTerms {
    grad_delay: Vec<f64>,
    grad_energy: Vec<f64>,
    grad_payment: Vec<f64>,
    grad_obj: Vec<f64>,
    gamma: f64,
    upsilon: f64,
}

impl<'a> SocialProblem<'a> {
    pub fn new(scenario: &'a SystemScenario, prices: &'a PriceVector, delta_stab: f64) -> Self {
        let edges = scenario
            .osps()
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_edge())
            .map(|(j, _)| j)
            .collect();
        Self {
            scenario,
            prices,
            cap: 1.0 - delta_stab,
            edges,
        }
    }

    fn m(&self) -> usize {
        self.scenario.m()
    }

    fn n(&self) -> usize {
        self.scenario.n()
    }

    fn first_c5(&self) -> usize {
        self.m() * self.n() + 3 * self.m()
    }

    fn first_cap(&self) -> usize {
        self.first_c5() + self.edges.len()
    }

    fn loads(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut l = vec![0.0; n];
        for (i, d) in self.scenario.devices().iter().enumerate() {
            for j in 0..n {
                l[j] += x[i * n + j] * d.load();
            }
        }
        l
    }

    fn view(&self, i: usize, x: &[f64], loads: &[f64]) -> DeviceView<'a> {
        let n = self.n();
        let own = self.scenario.device(i).load();
        let others = (0..n).map(|j| loads[j] - x[i * n + j] * own).collect();
        DeviceView::with_others_load(self.scenario, i, others, self.prices)
    }

    fn headroom(&self, loads: &[f64], j: usize) -> f64 {
        self.scenario.osps()[j].service_rate - loads[j]
    }

    fn row_terms(&self, i: usize, x: &[f64], loads: &[f64]) -> Option<RowTerms> {
        let n = self.n();
        let row = &x[i * n..(i + 1) * n];
        let view = self.view(i, x, loads);
        let rd = view.derivs(row).ok()?;
        let grad_obj = rd.grad_disutility(&view);
        Some(RowTerms {
            grad_delay: rd.grad_delay,
            grad_energy: rd.grad_energy,
            grad_payment: rd.grad_payment,
            grad_obj,
            gamma: rd.curvature.gamma,
            upsilon: rd.curvature.upsilon,
        })
    }

    /// `(v u' + u v') / H^2 + 2 a u u' / H^3` on column `j` of every row.
    fn add_edge_block(
        &self,
        j: usize,
        h: f64,
        v: &[f64],
        a: f64,
        scale: f64,
        hess: &mut DMatrix<f64>,
    ) {
        let n = self.n();
        let devs = self.scenario.devices();
        for k in 0..self.m() {
            let uk = devs[k].load();
            for l in 0..self.m() {
                let ul = devs[l].load();
                let val = (v[k] * ul + uk * v[l]) / (h * h) + 2.0 * a * uk * ul / (h * h * h);
                hess[(k * n + j, l * n + j)] += scale * val;
            }
        }
    }

    fn add_row_block(&self, i: usize, value: f64, hess: &mut DMatrix<f64>) {
        let n = self.n();
        for a in 0..n {
            for b in 0..n {
                hess[(i * n + a, i * n + b)] += value;
            }
        }
    }
}

impl BarrierProblem for SocialProblem<'_> {
    fn dim(&self) -> usize {
        self.m() * self.n()
    }

    fn n_constraints(&self) -> usize {
        self.first_cap() + 3 * self.m()
    }

    fn n_hard(&self) -> usize {
        self.first_cap()
    }

    fn eval(&self, x: &[f64], g: &mut [f64]) -> Option<f64> {
        let (m, n) = (self.m(), self.n());
        let loads = self.loads(x);
        let mut total = 0.0;
        let base = m * n;
        let caps = self.first_cap();
        for (i, d) in self.scenario.devices().iter().enumerate() {
            let row = &x[i * n..(i + 1) * n];
            let s: f64 = row.iter().sum();
            for j in 0..n {
                g[i * n + j] = -row[j];
            }
            g[base + 3 * i] = s - 1.0;
            g[base + 3 * i + 1] = (1.0 - s) * d.load() / d.cpu_rate - self.cap;
            g[base + 3 * i + 2] = d.lambda * d.input_bits * s / self.scenario.rate(i) - self.cap;
        }
        for (e, &j) in self.edges.iter().enumerate() {
            g[self.first_c5() + e] = loads[j] / self.scenario.osps()[j].service_rate - self.cap;
        }
        for (i, d) in self.scenario.devices().iter().enumerate() {
            let b = self
                .view(i, x, &loads)
                .breakdown(&x[i * n..(i + 1) * n])
                .ok()?;
            g[caps + 3 * i] = b.delay / d.d_max - 1.0;
            g[caps + 3 * i + 1] = b.energy / d.e_max - 1.0;
            g[caps + 3 * i + 2] = b.payment / d.p_max - 1.0;
            total += b.disutility;
        }
        Some(total / m as f64)
    }

    fn derivatives(
        &self,
        x: &[f64],
        scale: f64,
        grad: &mut DVector<f64>,
        hess: &mut DMatrix<f64>,
        jac: &mut Vec<SparseRow>,
    ) {
        let (m, n) = (self.m(), self.n());
        let devs = self.scenario.devices();
        let loads = self.loads(x);
        let Some(terms) = (0..m)
            .map(|i| self.row_terms(i, x, &loads))
            .collect::<Option<Vec<_>>>()
        else {
            return;
        };
        let inv_m = 1.0 / m as f64;
        let delay_w: Vec<f64> = devs.iter().map(|d| d.weights.delay / d.d_max).collect();

        if scale != 0.0 {
            for (i, t) in terms.iter().enumerate() {
                let d = &devs[i];
                for j in 0..n {
                    grad[i * n + j] += scale * inv_m * t.grad_obj[j];
                }
                let curv = delay_w[i] * (t.gamma + t.upsilon)
                    + d.weights.energy / d.e_max
                        * (d.power_local * t.gamma + d.power_tx * t.upsilon);
                self.add_row_block(i, scale * inv_m * curv, hess);
            }
            for &j in &self.edges {
                let h = self.headroom(&loads, j);
                let v: Vec<f64> = (0..m).map(|i| delay_w[i] * devs[i].cycles).collect();
                let a: f64 = (0..m).map(|i| v[i] * x[i * n + j]).sum();
                for k in 0..m {
                    // Effect of row k on the other devices' edge delay.
                    let others = a - v[k] * x[k * n + j];
                    grad[k * n + j] += scale * inv_m * devs[k].load() * others / (h * h);
                }
                self.add_edge_block(j, h, &v, a, scale * inv_m, hess);
            }
        }

        for k in 0..m * n {
            jac.push(vec![(k, -1.0)]);
        }
        for (i, d) in devs.iter().enumerate() {
            let row = |v: f64| (0..n).map(|j| (i * n + j, v)).collect::<SparseRow>();
            jac.push(row(1.0));
            jac.push(row(-d.load() / d.cpu_rate));
            jac.push(row(d.lambda * d.input_bits / self.scenario.rate(i)));
        }
        for &j in &self.edges {
            let f = self.scenario.osps()[j].service_rate;
            jac.push((0..m).map(|k| (k * n + j, devs[k].load() / f)).collect());
        }
        for (i, (d, t)) in devs.iter().zip(&terms).enumerate() {
            let mut delay: SparseRow = (0..n)
                .map(|j| (i * n + j, t.grad_delay[j] / d.d_max))
                .collect();
            for &j in &self.edges {
                let h = self.headroom(&loads, j);
                let coef = x[i * n + j] * d.cycles / (h * h) / d.d_max;
                if coef != 0.0 {
                    delay.extend(
                        (0..m)
                            .filter(|&k| k != i)
                            .map(|k| (k * n + j, coef * devs[k].load())),
                    );
                }
            }
            jac.push(delay);
            jac.push(
                (0..n)
                    .map(|j| (i * n + j, t.grad_energy[j] / d.e_max))
                    .collect(),
            );
            jac.push(
                (0..n)
                    .map(|j| (i * n + j, t.grad_payment[j] / d.p_max))
                    .collect(),
            );
        }
    }

    fn add_constraint_hessians(&self, x: &[f64], weights: &[f64], hess: &mut DMatrix<f64>) {
        let (m, n) = (self.m(), self.n());
        let caps = self.first_cap();
        let devs = self.scenario.devices();
        let wd: Vec<f64> = (0..m)
            .map(|i| weights[caps + 3 * i] / devs[i].d_max)
            .collect();
        let we: Vec<f64> = (0..m)
            .map(|i| weights[caps + 3 * i + 1] / devs[i].e_max)
            .collect();
        if wd.iter().chain(&we).all(|w| *w == 0.0) {
            return;
        }
        let loads = self.loads(x);
        for i in 0..m {
            if wd[i] == 0.0 && we[i] == 0.0 {
                continue;
            }
            let view = self.view(i, x, &loads);
            let Ok(k) = view.curvature(&x[i * n..(i + 1) * n]) else {
                return;
            };
            let d = &devs[i];
            let value = wd[i] * (k.gamma + k.upsilon)
                + we[i] * (d.power_local * k.gamma + d.power_tx * k.upsilon);
            self.add_row_block(i, value, hess);
        }
        if wd.iter().all(|w| *w == 0.0) {
            return;
        }
        for &j in &self.edges {
            let h = self.headroom(&loads, j);
            let v: Vec<f64> = (0..m).map(|i| wd[i] * devs[i].cycles).collect();
            let a: f64 = (0..m).map(|i| v[i] * x[i * n + j]).sum();
            self.add_edge_block(j, h, &v, a, 1.0, hess);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialOptimum {
    pub profile: StrategyProfile,
    /// Mean disutility at `profile`.
    pub objective: f64,
    /// Final objective per start (warm start first); `None` for failed starts.
    pub start_objectives: Vec<Option<f64>>,
    /// Largest minus smallest successful objective.
    pub spread: f64,
}

/// A random profile strictly inside the stability region, or `None`.
fn random_start(problem: &SocialProblem<'_>, rng: &mut impl Rng) -> Option<Vec<f64>> {
    let (m, n) = (problem.m(), problem.n());
    let sc = problem.scenario;
    let mut x = vec![0.0; m * n];
    for i in 0..m {
        let draws: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = draws.iter().sum();
        for j in 0..n {
            x[i * n + j] = (draws[j] / total).max(START_FLOOR);
        }
    }
    let loads = problem.loads(&x);
    for &j in &problem.edges {
        let limit = 0.9 * problem.cap * sc.osps()[j].service_rate;
        if loads[j] > limit {
            let f = limit / loads[j];
            (0..m).for_each(|i| x[i * n + j] *= f);
        }
    }
    Some(x)
}

fn interior(x: &[f64], n: usize) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().map(|v| v.clamp(START_FLOOR, 1.0)).collect();
    for row in y.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        let limit = 1.0 - START_FLOOR;
        if s > limit {
            row.iter_mut().for_each(|v| *v *= limit / s);
        }
    }
    y
}

fn solve_from(
    problem: &SocialProblem<'_>,
    x0: &[f64],
    params: &SolverParams,
) -> Option<(Vec<f64>, f64)> {
    let opts = BarrierOptions {
        t0: params.barrier_t0,
        mu: params.barrier_mu,
        gap_tol: params.tol_kkt,
        max_newton_iters: params.max_newton_iters,
        polish_gap: 1e-2,
        polish_feas_tol: params.tol_kkt * 1e-4,
        ..BarrierOptions::default()
    };
    let mut g = vec![0.0; problem.n_constraints()];
    problem.eval(x0, &mut g)?;
    if !g[..problem.n_hard()].iter().all(|v| *v < 0.0) {
        return None;
    }
    let start = if g.iter().all(|v| *v < 0.0) {
        x0.to_vec()
    } else {
        barrier::phase_one(problem, x0, &opts).ok()?.0
    };
    let out = match barrier::minimize(problem, &start, &opts, None) {
        Ok(out) => out,
        Err(BarrierError::NoConvergence { .. } | BarrierError::NotStrictlyFeasible) => return None,
    };
    let polished = out
        .polished
        .clone()
        .or_else(|| barrier::polish(problem, &out, opts.polish_feas_tol));
    let (x, f) = match polished {
        Some(p) => (p.x, p.objective),
        None => (out.x, out.objective),
    };
    problem.eval(&x, &mut g)?;
    g.iter().all(|v| *v <= FEAS_TOL).then_some((x, f))
}

/// Best of barrier runs from `warm` (if given) and `params.restarts`
/// seeded random feasible starts.
pub fn socially_optimal(
    scenario: &SystemScenario,
    prices: &PriceVector,
    params: &SocialParams,
    warm: Option<&StrategyProfile>,
) -> Result<SocialOptimum> {
    params.solver.validate()?;
    let n = scenario.n();
    let problem = SocialProblem::new(scenario, prices, params.solver.delta_stab);
    let mut starts = Vec::new();
    if let Some(w) = warm {
        starts.push(Some(interior(w.as_slice(), n)));
    }
    for r in 0..params.restarts {
        starts.push(random_start(&problem, &mut restart_rng(params.seed, r)));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_objectives = Vec::with_capacity(starts.len());
    for x0 in &starts {
        let res = x0
            .as_ref()
            .and_then(|x| solve_from(&problem, x, &params.solver));
        start_objectives.push(res.as_ref().map(|r| r.1));
        if let Some((x, f)) = res {
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((x, f));
            }
        }
    }
    let Some((x, objective)) = best else {
        return Err(Error::NoConvergence {
            iterations: params.solver.max_newton_iters,
        });
    };
    let ok: Vec<f64> = start_objectives.iter().flatten().copied().collect();
    let spread = ok.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b))
        - ok.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    let profile = StrategyProfile::from_rows(x.chunks(n).map(<[f64]>::to_vec).collect())?;
    Ok(SocialOptimum {
        profile,
        objective,
        start_objectives,
        spread,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoaReport {
    /// Mean disutility at the follower equilibrium.
    pub avg_ne: f64,
    /// Mean disutility at the social optimum.
    pub avg_so: f64,
    pub poa: f64,
    pub ne_converged: bool,
    pub ne_iterations: usize,
    pub so_spread: f64,
}

/// Ratio of the mean disutility at the IPOA equilibrium to that at the
/// social optimum. The equilibrium also seeds the social search.
pub fn poa(
    scenario: &SystemScenario,
    prices: &PriceVector,
    ipoa_params: &IpoaParams,
    social: &SocialParams,
) -> Result<PoaReport> {
    let ne = ipoa_from_local(scenario, prices, ipoa_params)?;
    let avg_ne = mean_disutility(scenario, &ne.profile, prices)?;
    let so = socially_optimal(scenario, prices, social, Some(&ne.profile))?;
    let avg_so = mean_disutility(scenario, &so.profile, prices)?;
    Ok(PoaReport {
        avg_ne,
        avg_so,
        poa: avg_ne / avg_so,
        ne_converged: ne.converged,
        ne_iterations: ne.iterations,
        so_spread: so.spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::{cloud, edge, midpoint_device, reference_net};
    use crate::model::Weights;
    use crate::solver::best_response;

    fn pair(osps: Vec<crate::model::OspParams>) -> SystemScenario {
        let a = midpoint_device(Weights::new(0.6, 0.2, 0.2));
        let mut b = midpoint_device(Weights::new(0.3, 0.3, 0.4));
        b.cpu_rate = 4.2e8;
        SystemScenario::new(vec![a, b], osps, reference_net()).unwrap()
    }

    #[test]
    fn fixed_rules() {
        let sc = pair(vec![cloud(2e9), edge(2e9), edge(2e9), edge(1.5e9)]);
        let prices = sc.min_prices();
        let local = baseline_profile(&sc, BaselineKind::LocalOnly, &prices).unwrap();
        assert!(local.as_slice().iter().all(|v| *v == 0.0));
        let even = baseline_profile(&sc, BaselineKind::Evenly, &prices).unwrap();
        assert!(even.as_slice().iter().all(|v| (*v - 0.2).abs() < 1e-15));
        assert!((even.row(0).iter().sum::<f64>() - 0.8).abs() < 1e-15);
        let cloud_only = baseline_profile(&sc, BaselineKind::CloudOnly, &prices).unwrap();
        for row in cloud_only.rows() {
            assert_eq!(row, &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    /// Central differences of the stacked objective and of every constraint.
    #[test]
    fn social_derivatives_match_finite_differences() {
        let sc = pair(vec![cloud(2e9), edge(1.6e9), edge(2.4e9)]);
        let prices = PriceVector::per_gcycle(&[0.2, 0.1, 0.1], &sc).unwrap();
        let p = SocialProblem::new(&sc, &prices, 0.0);
        let x = [0.2, 0.3, 0.25, 0.1, 0.4, 0.2];
        let dim = x.len();
        let mc = p.n_constraints();
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut jac = Vec::new();
        p.derivatives(&x, 1.0, &mut grad, &mut hess, &mut jac);
        let weights: Vec<f64> = (0..mc).map(|k| 0.5 + k as f64 * 0.1).collect();
        let mut chess = DMatrix::zeros(dim, dim);
        p.add_constraint_hessians(&x, &weights, &mut chess);

        let h = 1e-6;
        let mut g = vec![0.0; mc];
        let at = |y: &[f64], g: &mut [f64]| p.eval(y, g).unwrap();
        for a in 0..dim {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[a] += h;
            dn[a] -= h;
            let mut gu = vec![0.0; mc];
            let mut gd = vec![0.0; mc];
            let fd = (at(&up, &mut gu) - at(&dn, &mut gd)) / (2.0 * h);
            assert!(
                (fd - grad[a]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "grad {a}: {fd} vs {}",
                grad[a]
            );
            for k in 0..mc {
                let dk = (gu[k] - gd[k]) / (2.0 * h);
                let an: f64 = jac[k].iter().filter(|e| e.0 == a).map(|e| e.1).sum();
                assert!(
                    (dk - an).abs() <= 1e-6 * (1.0 + dk.abs()),
                    "jac {k},{a}: {dk} vs {an}"
                );
            }
            // Hessian columns from gradient differences.
            let mut gu_vec = DVector::zeros(dim);
            let mut gd_vec = DVector::zeros(dim);
            let (mut hu, mut hd) = (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim));
            let (mut ju, mut jd) = (Vec::new(), Vec::new());
            p.derivatives(&up, 1.0, &mut gu_vec, &mut hu, &mut ju);
            p.derivatives(&dn, 1.0, &mut gd_vec, &mut hd, &mut jd);
            for b in 0..dim {
                let fd = (gu_vec[b] - gd_vec[b]) / (2.0 * h);
                assert!(
                    (fd - hess[(b, a)]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "hess {b},{a}: {fd} vs {}",
                    hess[(b, a)]
                );
                let row_sum = |j: &Vec<SparseRow>| -> f64 {
                    (0..mc)
                        .map(|k| {
                            weights[k] * j[k].iter().filter(|e| e.0 == b).map(|e| e.1).sum::<f64>()
                        })
                        .sum()
                };
                let cfd = (row_sum(&ju) - row_sum(&jd)) / (2.0 * h);
                assert!(
                    (cfd - chess[(b, a)]).abs() <= 1e-5 * (1.0 + cfd.abs()),
                    "constraint hess {b},{a}: {cfd} vs {}",
                    chess[(b, a)]
                );
            }
        }
        let _ = p.eval(&x, &mut g);
    }

    #[test]
    fn single_device_matches_best_response() {
        let d = midpoint_device(Weights::new(0.5, 0.3, 0.2));
        let sc = SystemScenario::new(vec![d], vec![cloud(2e9), edge(2e9)], reference_net()).unwrap();
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &sc).unwrap();
        let so = socially_optimal(
            &sc,
            &prices,
            &SocialParams {
                restarts: 3,
                ..SocialParams::default()
            },
            None,
        )
        .unwrap();
        let br = best_response(
            &sc,
            0,
            &StrategyProfile::zeros(1, 2),
            &prices,
            &SolverParams::default(),
        )
        .unwrap();
        for j in 0..2 {
            assert!(
                (so.profile.get(0, j) - br[j]).abs() < 1e-6,
                "{:?} vs {br:?}",
                so.profile
            );
        }
        let rep = poa(
            &sc,
            &prices,
            &IpoaParams::default(),
            &SocialParams {
                restarts: 2,
                ..SocialParams::default()
            },
        )
        .unwrap();
        assert!((rep.poa - 1.0).abs() < 1e-6, "{rep:?}");
    }

    #[test]
    fn social_beats_equilibrium_on_shared_edge() {
        let sc = pair(vec![edge(1.2e9)]);
        let prices = sc.min_prices();
        let rep = poa(
            &sc,
            &prices,
            &IpoaParams::default(),
            &SocialParams {
                restarts: 3,
                ..SocialParams::default()
            },
        )
        .unwrap();
        assert!(rep.avg_so <= rep.avg_ne + 1e-12, "{rep:?}");
        assert!(rep.poa >= 1.0 - 1e-6);
    }

    /// Brute-force grid over the joint 4-dim space at step 0.05.
    #[test]
    fn two_by_two_matches_grid_oracle() {
        let sc = pair(vec![cloud(2e9), edge(1.2e9)]);
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &sc).unwrap();
        let so = socially_optimal(
            &sc,
            &prices,
            &SocialParams {
                restarts: 3,
                ..SocialParams::default()
            },
            None,
        )
        .unwrap();
        let steps: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let rows: Vec<[f64; 2]> = steps
            .iter()
            .flat_map(|&a| steps.iter().map(move |&b| [a, b]))
            .filter(|r| r[0] + r[1] <= 1.0 + 1e-12)
            .collect();
        let mut grid_best = f64::INFINITY;
        for r0 in &rows {
            for r1 in &rows {
                let prof = StrategyProfile::from_rows(vec![r0.to_vec(), r1.to_vec()]).unwrap();
                if check_feasible(&sc, &prof, &prices, &Margins::default()).feasible {
                    if let Ok(v) = mean_disutility(&sc, &prof, &prices) {
                        grid_best = grid_best.min(v);
                    }
                }
            }
        }
        assert!(
            so.objective <= grid_best + 1e-12,
            "{} vs grid {grid_best}",
            so.objective
        );
        assert!(
            grid_best - so.objective <= 1e-3,
            "{} vs grid {grid_best}",
            so.objective
        );
    }

    #[test]
    fn unstable_baseline_gets_sentinel() {
        let mut devices = Vec::new();
        for _ in 0..60 {
            devices.push(midpoint_device(Weights::new(0.4, 0.3, 0.3)));
        }
        let sc =
            SystemScenario::new(devices, vec![cloud(2e9), edge(1.44e9)], reference_net()).unwrap();
        let prices = sc.min_prices();
        let out = evaluate_baseline(&sc, BaselineKind::Evenly, &prices, &SocialParams::default())
            .unwrap();
        assert!(!out.feasible);
        assert!(out.violations.contains(&ConstraintTag::C5));
        assert_eq!(out.mean_disutility, f64::INFINITY);
    }
}

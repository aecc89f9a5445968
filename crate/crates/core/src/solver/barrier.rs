//! Log-barrier interior method with damped Newton centering, a phase-1
//! adapter for soft constraints, and an active-set Newton-KKT polish.
//!
//! Constraints are `g_k(x) <= 0`. The first `n_hard()` constraints define
//! the domain (queue stability, bounds) and must hold strictly at every
//! iterate; the rest are "soft" and may be violated at the starting point,
//! in which case [`phase_one`] finds a strictly feasible point first.

use nalgebra::{DMatrix, DVector};

/// Sparse constraint gradient: `(index, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

pub trait BarrierProblem {
    fn dim(&self) -> usize;

    fn n_constraints(&self) -> usize;

    fn n_hard(&self) -> usize;

    /// Objective value with `g` filled with constraint values, or `None` when
    /// `x` lies outside the domain of the functions.
    fn eval(&self, x: &[f64], g: &mut [f64]) -> Option<f64>;

    /// Adds `scale * grad f` and `scale * hess f` and fills the constraint
    /// Jacobian rows.
    fn derivatives(
        &self,
        x: &[f64],
        scale: f64,
        grad: &mut DVector<f64>,
        hess: &mut DMatrix<f64>,
        jac: &mut Vec<SparseRow>,
    );

    /// `hess += sum_k weights[k] * hess g_k`. Linear constraints contribute nothing.
    fn add_constraint_hessians(&self, x: &[f64], weights: &[f64], hess: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    pub t0: f64,
    pub mu: f64,
    /// Target duality gap `m / t`.
    pub gap_tol: f64,
    pub max_newton_iters: usize,
    /// Centering stops when half the squared Newton decrement drops below this.
    pub newton_tol: f64,
    /// Once `m / t` is at most this, every centered point is handed to
    /// [`polish`]; a refined point with KKT residual at most `gap_tol` ends
    /// the run. Zero disables early polishing.
    pub polish_gap: f64,
    /// Constraint tolerance for polished points.
    pub polish_feas_tol: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            t0: 1.0,
            mu: 10.0,
            gap_tol: 1e-8,
            max_newton_iters: 1000,
            newton_tol: 1e-10,
            polish_gap: 0.0,
            polish_feas_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierError {
    NotStrictlyFeasible,
    NoConvergence { iterations: usize },
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
    /// Barrier multipliers `1 / (-t g_k)`.
    pub multipliers: Vec<f64>,
    pub t: f64,
    pub newton_iters: usize,
    /// `max(|grad f + sum mu_k grad g_k|_inf, m / t)`.
    pub kkt_residual: f64,
    /// True when a caller-supplied stop condition ended the run early.
    pub stopped_early: bool,
    /// Accepted active-set refinement of `x`.
    pub polished: Option<Polished>,
}

fn strictly_feasible(g: &[f64]) -> bool {
    g.iter().all(|v| *v < 0.0)
}

fn barrier_value(t: f64, f: f64, g: &[f64]) -> f64 {
    t * f - g.iter().map(|v| (-v).ln()).sum::<f64>()
}

fn scatter(row: &SparseRow, out: &mut DVector<f64>, scale: f64) {
    for &(k, v) in row {
        out[k] += scale * v;
    }
}

fn rank_one(row: &SparseRow, scale: f64, hess: &mut DMatrix<f64>) {
    for &(a, va) in row {
        for &(b, vb) in row {
            hess[(a, b)] += scale * va * vb;
        }
    }
}

/// Solves `H d = -grad`, regularizing `H` with a growing multiple of the
/// identity when it is not positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let mut shift = 0.0;
    for _ in 0..40 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += shift;
        }
        if let Some(ch) = h.cholesky() {
            let d = ch.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 {
            1e-12 * scale
        } else {
            shift * 10.0
        };
    }
    None
}

struct Workspace {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    jac: Vec<SparseRow>,
    weights: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
            jac: Vec::new(),
            weights: vec![0.0; m],
        }
    }
}

/// Minimizes `f` subject to `g <= 0` from a strictly feasible `x0`.
///
/// `stop` is checked after every accepted Newton step with the current
/// iterate and constraint values.
pub fn minimize<P: BarrierProblem + ?Sized>(
    p: &P,
    x0: &[f64],
    opts: &BarrierOptions,
    stop: Option<&dyn Fn(&[f64], &[f64]) -> bool>,
) -> Result<BarrierOutcome, BarrierError> {
    let n = p.dim();
    let m = p.n_constraints();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; m];
    let mut f = match p.eval(&x, &mut g) {
        Some(f) if f.is_finite() && strictly_feasible(&g) => f,
        _ => return Err(BarrierError::NotStrictlyFeasible),
    };
    let mut ws = Workspace::new(n, m);
    let mut t = opts.t0;
    let mut iters = 0usize;
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; m];
    let mut stopped_early = false;

    'outer: loop {
        loop {
            ws.grad.fill(0.0);
            ws.hess.fill(0.0);
            ws.jac.clear();
            p.derivatives(&x, t, &mut ws.grad, &mut ws.hess, &mut ws.jac);
            for (k, row) in ws.jac.iter().enumerate() {
                let inv = 1.0 / (-g[k]);
                scatter(row, &mut ws.grad, inv);
                rank_one(row, inv * inv, &mut ws.hess);
                ws.weights[k] = inv;
            }
            p.add_constraint_hessians(&x, &ws.weights, &mut ws.hess);

            let Some(dir) = newton_direction(&ws.hess, &ws.grad) else {
                break;
            };
            let slope = ws.grad.dot(&dir);
            if -slope / 2.0 <= opts.newton_tol {
                break;
            }
            if iters >= opts.max_newton_iters {
                return Err(BarrierError::NoConvergence { iterations: iters });
            }
            let phi0 = barrier_value(t, f, &g);
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-16 {
                for i in 0..n {
                    trial[i] = x[i] + step * dir[i];
                }
                if let Some(ft) = p.eval(&trial, &mut g_trial) {
                    if ft.is_finite() && strictly_feasible(&g_trial) {
                        let phi = barrier_value(t, ft, &g_trial);
                        // Roundoff slack keeps near-centered steps acceptable at large t.
                        if phi <= phi0 + 0.01 * step * slope + 1e-14 * phi0.abs() {
                            std::mem::swap(&mut x, &mut trial);
                            std::mem::swap(&mut g, &mut g_trial);
                            f = ft;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            iters += 1;
            if !accepted {
                // No further progress at this precision; treat as centered.
                break;
            }
            if let Some(stop) = stop {
                if stop(&x, &g) {
                    stopped_early = true;
                    break 'outer;
                }
            }
        }
        let gap = m as f64 / t;
        if opts.polish_gap > 0.0 && gap <= opts.polish_gap {
            let mut out = outcome(p, &x, f, &g, t, iters, false);
            if let Some(pol) = polish(p, &out, opts.polish_feas_tol) {
                if pol.kkt_residual <= opts.gap_tol {
                    out.polished = Some(pol);
                    return Ok(out);
                }
            }
        }
        if gap <= opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }
    Ok(outcome(p, &x, f, &g, t, iters, stopped_early))
}

fn outcome<P: BarrierProblem + ?Sized>(
    p: &P,
    x: &[f64],
    f: f64,
    g: &[f64],
    t: f64,
    newton_iters: usize,
    stopped_early: bool,
) -> BarrierOutcome {
    let multipliers: Vec<f64> = g.iter().map(|v| 1.0 / (-t * v)).collect();
    let kkt_residual = stationarity(p, x, &multipliers, None).max(g.len() as f64 / t);
    BarrierOutcome {
        x: x.to_vec(),
        objective: f,
        constraints: g.to_vec(),
        multipliers,
        t,
        newton_iters,
        kkt_residual,
        stopped_early,
        polished: None,
    }
}

/// `|grad f + sum_{k in active} mu_k grad g_k|_inf`; all constraints when `active` is `None`.
fn stationarity<P: BarrierProblem + ?Sized>(
    p: &P,
    x: &[f64],
    mu: &[f64],
    active: Option<&[usize]>,
) -> f64 {
    let n = p.dim();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut jac = Vec::new();
    p.derivatives(x, 1.0, &mut grad, &mut hess, &mut jac);
    match active {
        None => jac
            .iter()
            .zip(mu)
            .for_each(|(row, &w)| scatter(row, &mut grad, w)),
        Some(idx) => idx
            .iter()
            .zip(mu)
            .for_each(|(&k, &w)| scatter(&jac[k], &mut grad, w)),
    }
    grad.amax()
}

#[derive(Debug, Clone)]
pub struct Polished {
    pub x: Vec<f64>,
    pub objective: f64,
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
}

/// Refines a barrier solution by Newton iterations on the KKT system of
/// the constraints identified as active (`mu_k > -g_k`). Returns `None`
/// when the refined point is not an acceptable KKT point.
pub fn polish<P: BarrierProblem + ?Sized>(
    p: &P,
    sol: &BarrierOutcome,
    feas_tol: f64,
) -> Option<Polished> {
    let n = p.dim();
    let m = p.n_constraints();
    let active: Vec<usize> = (0..m)
        .filter(|&k| sol.multipliers[k] > -sol.constraints[k])
        .collect();
    let na = active.len();
    if na > n {
        return None;
    }
    let mut x = sol.x.clone();
    let mut mu: Vec<f64> = active.iter().map(|&k| sol.multipliers[k]).collect();
    let mut g = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for _ in 0..8 {
        p.eval(&x, &mut g)?;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut jac = Vec::new();
        p.derivatives(&x, 1.0, &mut grad, &mut hess, &mut jac);
        weights.iter_mut().for_each(|w| *w = 0.0);
        for (a, &k) in active.iter().enumerate() {
            weights[k] = mu[a];
        }
        p.add_constraint_hessians(&x, &weights, &mut hess);

        let mut kkt = DMatrix::zeros(n + na, n + na);
        kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        let mut rhs = DVector::zeros(n + na);
        for i in 0..n {
            rhs[i] = -grad[i];
        }
        for (a, &k) in active.iter().enumerate() {
            for &(i, v) in &jac[k] {
                kkt[(n + a, i)] += v;
                kkt[(i, n + a)] += v;
            }
            rhs[n + a] = -g[k];
        }
        let sol_vec = kkt.lu().solve(&rhs)?;
        let mut step = 0.0f64;
        for i in 0..n {
            step = step.max(sol_vec[i].abs());
            x[i] += sol_vec[i];
        }
        for a in 0..na {
            mu[a] = sol_vec[n + a];
        }
        if step <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))) {
            break;
        }
    }
    let objective = p.eval(&x, &mut g)?;
    if !objective.is_finite() || g.iter().any(|v| *v > feas_tol) {
        return None;
    }
    if mu.iter().any(|v| *v < -1e-9) {
        return None;
    }
    if objective > sol.objective + 1e-12 * (1.0 + sol.objective.abs()) {
        return None;
    }
    let residual = active
        .iter()
        .map(|&k| g[k].abs())
        .fold(stationarity(p, &x, &mu, Some(&active)), f64::max);
    Some(Polished {
        x,
        objective,
        active,
        multipliers: mu,
        kkt_residual: residual,
    })
}

/// Active-set refinement started from an arbitrary point `x`, taking as
/// active every constraint within `active_slack` of its bound.
pub fn polish_from<P: BarrierProblem + ?Sized>(
    p: &P,
    x: &[f64],
    active_slack: f64,
    feas_tol: f64,
) -> Option<Polished> {
    let mut g = vec![0.0; p.n_constraints()];
    let objective = p.eval(x, &mut g)?;
    let multipliers = g
        .iter()
        .map(|v| if -v <= active_slack { 1.0 } else { 0.0 })
        .collect();
    let seed = BarrierOutcome {
        x: x.to_vec(),
        objective,
        constraints: g,
        multipliers,
        t: f64::INFINITY,
        newton_iters: 0,
        kkt_residual: f64::INFINITY,
        stopped_early: false,
        polished: None,
    };
    polish(p, &seed, feas_tol)
}

/// Phase-1 problem: minimize `s` over `(x, s)` subject to the hard
/// constraints and `g_soft(x) <= s`.
pub struct PhaseOne<'a, P: ?Sized> {
    pub inner: &'a P,
}

impl<P: BarrierProblem + ?Sized> BarrierProblem for PhaseOne<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn n_constraints(&self) -> usize {
        self.inner.n_constraints()
    }

    fn n_hard(&self) -> usize {
        self.inner.n_hard()
    }

    fn eval(&self, x: &[f64], g: &mut [f64]) -> Option<f64> {
        let n = self.inner.dim();
        let s = x[n];
        self.inner.eval(&x[..n], g)?;
        for v in &mut g[self.inner.n_hard()..] {
            *v -= s;
        }
        Some(s)
    }

    fn derivatives(
        &self,
        x: &[f64],
        scale: f64,
        grad: &mut DVector<f64>,
        _hess: &mut DMatrix<f64>,
        jac: &mut Vec<SparseRow>,
    ) {
        let n = self.inner.dim();
        let mut g_in = DVector::zeros(n);
        let mut h_in = DMatrix::zeros(n, n);
        self.inner
            .derivatives(&x[..n], 0.0, &mut g_in, &mut h_in, jac);
        for row in jac.iter_mut().skip(self.inner.n_hard()) {
            row.push((n, -1.0));
        }
        grad[n] += scale;
    }

    fn add_constraint_hessians(&self, x: &[f64], weights: &[f64], hess: &mut DMatrix<f64>) {
        let n = self.inner.dim();
        let mut h_in = DMatrix::zeros(n, n);
        self.inner
            .add_constraint_hessians(&x[..n], weights, &mut h_in);
        let mut block = hess.view_mut((0, 0), (n, n));
        block += &h_in;
    }
}

/// Finds a point strictly satisfying all constraints, starting from `x0`
/// which must strictly satisfy the hard ones. Returns the point and the
/// Newton iterations used.
pub fn phase_one<P: BarrierProblem + ?Sized>(
    p: &P,
    x0: &[f64],
    opts: &BarrierOptions,
) -> Result<(Vec<f64>, usize), BarrierError> {
    let n = p.dim();
    let hard = p.n_hard();
    let mut g = vec![0.0; p.n_constraints()];
    p.eval(x0, &mut g)
        .ok_or(BarrierError::NotStrictlyFeasible)?;
    if !strictly_feasible(&g[..hard]) {
        return Err(BarrierError::NotStrictlyFeasible);
    }
    if strictly_feasible(&g) {
        return Ok((x0.to_vec(), 0));
    }
    let worst = g[hard..].iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let mut z = x0.to_vec();
    z.push(worst + 1.0);
    let aug = PhaseOne { inner: p };
    let stop = |x: &[f64], g: &[f64]| {
        let s = x[n];
        g[hard..].iter().all(|v| v + s < 0.0)
    };
    let out = minimize(&aug, &z, opts, Some(&stop))?;
    let s = out.x[n];
    if out.stopped_early || out.constraints[hard..].iter().all(|v| v + s < 0.0) {
        let mut x = out.x;
        x.truncate(n);
        Ok((x, out.newton_iters))
    } else {
        Err(BarrierError::NotStrictlyFeasible)
    }
}

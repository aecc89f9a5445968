//! Leader price adjustment (ISPA) and the blind-pricing comparison scheme.
//!
//! Each OSP estimates the derivative of its revenue with respect to its own
//! price by re-solving the follower game at `p_j ± eta`, then takes a clipped
//! ascent step. Probe runs start from the follower equilibrium at the
//! unperturbed prices so the two evaluations differ only through the price
//! perturbation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{ipoa, IpoaParams};
use crate::model::{osp_utility, PriceVector, StrategyProfile, SystemScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Every OSP probes around the prices of the previous iteration.
    #[default]
    Jacobi,
    /// OSP `j` probes around prices already updated by OSPs `0..j`.
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IspaParams {
    /// Ascent step per OSP in ($/cycle) per (cycles/s); a single entry
    /// applies to every OSP.
    pub delta_step: Vec<f64>,
    /// Finite-difference half-width ($/cycle).
    pub eta: f64,
    pub max_iters: usize,
    pub update_mode: UpdateMode,
    pub ipoa: IpoaParams,
}

impl Default for IspaParams {
    fn default() -> Self {
        Self {
            delta_step: vec![DEFAULT_DELTA_STEP],
            eta: 1e-12,
            max_iters: 20,
            update_mode: UpdateMode::Jacobi,
            ipoa: IpoaParams {
                sigma_conv: 1e-6,
                max_outer_iters: 1000,
                anderson_memory: 10,
                ..IpoaParams::default()
            },
        }
    }
}

/// Gives first steps of a few percent of a 0.05 $/Gcycle cost price when
/// an OSP serves on the order of 1 Gcycle/s.
pub const DEFAULT_DELTA_STEP: f64 = 1e-21;

impl IspaParams {
    pub fn validate(&self, n_osps: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter("eta must be > 0".into()));
        }
        if !(self.delta_step.len() == 1 || self.delta_step.len() == n_osps) {
            return Err(Error::InvalidParameter(format!(
                "delta_step needs 1 or {n_osps} entries, got {}",
                self.delta_step.len()
            )));
        }
        if self.delta_step.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter(
                "delta_step entries must be > 0".into(),
            ));
        }
        self.ipoa.validate()
    }

    pub fn delta(&self, j: usize) -> f64 {
        if self.delta_step.len() == 1 {
            self.delta_step[0]
        } else {
            self.delta_step[j]
        }
    }
}

/// Finite-difference estimate of an OSP's marginal revenue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalUtility {
    /// Estimated derivative of revenue with respect to own price (cycles/s).
    pub value: f64,
    /// Revenue at the upper probe ($/s).
    pub plus_eval: f64,
    /// Revenue at the lower probe, or at the current price when one-sided ($/s).
    pub minus_eval: f64,
    /// Price distance between the probes: `2 eta`, or `eta` when one-sided.
    pub span: f64,
    /// Forward difference used because `p_j - eta` is below cost.
    pub one_sided: bool,
}

impl MarginalUtility {
    fn new(plus_eval: f64, minus_eval: f64, span: f64, one_sided: bool) -> Self {
        Self {
            value: (plus_eval - minus_eval) / span,
            plus_eval,
            minus_eval,
            span,
            one_sided,
        }
    }
}

fn with_price(prices: &PriceVector, j: usize, p: f64) -> PriceVector {
    let mut v = prices.clone();
    v.0[j] = p;
    v
}

/// Probes OSP `j` from the follower profile `warm`; the flag reports a
/// probe run that hit its round limit.
fn probe(
    scenario: &SystemScenario,
    j: usize,
    prices: &PriceVector,
    params: &IspaParams,
    warm: &StrategyProfile,
) -> Result<(MarginalUtility, bool)> {
    let p = prices[j];
    let p_min = scenario.osps()[j].p_min;
    let up = with_price(prices, j, p + params.eta);
    let plus = ipoa(scenario, &up, &params.ipoa, warm)?;
    let plus_eval = osp_utility(scenario, j, &plus.profile, &up);
    let (lo, span, one_sided) = if p - params.eta >= p_min {
        (p - params.eta, 2.0 * params.eta, false)
    } else {
        (p, params.eta, true)
    };
    let down = with_price(prices, j, lo);
    let minus = ipoa(scenario, &down, &params.ipoa, warm)?;
    let minus_eval = osp_utility(scenario, j, &minus.profile, &down);
    let degraded = !(plus.converged && minus.converged);
    Ok((
        MarginalUtility::new(plus_eval, minus_eval, span, one_sided),
        degraded,
    ))
}

/// Marginal revenue of OSP `j` with both probes started from the all-local
/// profile.
pub fn marginal_utility(
    scenario: &SystemScenario,
    j: usize,
    prices: &PriceVector,
    params: &IspaParams,
) -> Result<MarginalUtility> {
    marginal_utility_from(
        scenario,
        j,
        prices,
        params,
        &StrategyProfile::zeros(scenario.m(), scenario.n()),
    )
}

/// Marginal revenue of OSP `j` with both probes started from `warm`.
pub fn marginal_utility_from(
    scenario: &SystemScenario,
    j: usize,
    prices: &PriceVector,
    params: &IspaParams,
    warm: &StrategyProfile,
) -> Result<MarginalUtility> {
    params.validate(scenario.n())?;
    let (mu, degraded) = probe(scenario, j, prices, params, warm)?;
    if degraded {
        return Err(Error::FollowerDiverged { iteration: 0 });
    }
    Ok(mu)
}

/// Clipped ascent step for OSP `j`.
pub fn price_update(
    scenario: &SystemScenario,
    j: usize,
    prices: &PriceVector,
    mu: &MarginalUtility,
    params: &IspaParams,
) -> f64 {
    (prices[j] + params.delta(j) * mu.value).max(scenario.osps()[j].p_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingRecord {
    pub iter: usize,
    /// Prices ($/cycle).
    pub prices: Vec<f64>,
    /// OSP revenues at the follower equilibrium ($/s).
    pub utilities: Vec<f64>,
    /// Per OSP: a marginal-utility probe producing this iteration's price
    /// hit its round limit.
    pub degraded_flags: Vec<bool>,
    /// The follower run at these prices hit its round limit.
    pub degraded: bool,
    /// Marginal utilities that produced the next prices (cycles/s).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marginal: Vec<f64>,
    pub profile: StrategyProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PricingTrace {
    pub records: Vec<PricingRecord>,
}

impl PricingTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// One row per iteration with prices in $/Gcycle and revenues in $/s.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.records.first().map_or(0, |r| r.prices.len());
        let mut header = vec!["iter".to_string()];
        header.extend((0..n).map(|j| format!("price_{j}_usd_per_gcycle")));
        header.extend((0..n).map(|j| format!("utility_{j}_usd_per_s")));
        header.push("mean_utility_usd_per_s".into());
        header.push("degraded".into());
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string()];
            row.extend(r.prices.iter().map(|p| (p * 1e9).to_string()));
            row.extend(r.utilities.iter().map(f64::to_string));
            row.push(mean(&r.utilities).to_string());
            row.push((r.degraded || r.degraded_flags.iter().any(|&f| f)).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Revenue series of OSP `j`.
    pub fn utility_series(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.utilities[j]).collect()
    }

    pub fn mean_utility_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| mean(&r.utilities)).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IspaResult {
    pub prices: PriceVector,
    /// Follower equilibrium at `prices`.
    pub profile: StrategyProfile,
    /// Iteration 0 holds the starting prices.
    pub trace: PricingTrace,
}

fn utilities(
    scenario: &SystemScenario,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> Vec<f64> {
    (0..scenario.n())
        .map(|j| osp_utility(scenario, j, profile, prices))
        .collect()
}

fn check_start(scenario: &SystemScenario, p0: &PriceVector) -> Result<()> {
    PriceVector::new(p0.0.clone(), scenario).map(|_| ())
}

/// Iterative leader price adjustment from `p0`.
pub fn ispa(
    scenario: &SystemScenario,
    params: &IspaParams,
    p0: &PriceVector,
) -> Result<IspaResult> {
    params.validate(scenario.n())?;
    check_start(scenario, p0)?;
    let n = scenario.n();
    let zeros = StrategyProfile::zeros(scenario.m(), n);
    let base = ipoa(scenario, p0, &params.ipoa, &zeros)?;
    let mut prices = p0.clone();
    let mut profile = base.profile;
    let mut trace = PricingTrace {
        records: vec![PricingRecord {
            iter: 0,
            prices: prices.0.clone(),
            utilities: utilities(scenario, &profile, &prices),
            degraded_flags: vec![false; n],
            degraded: !base.converged,
            marginal: Vec::new(),
            profile: profile.clone(),
        }],
    };

    for k in 0..params.max_iters {
        let mut next = prices.clone();
        let mut flags = vec![false; n];
        let mut marginal = vec![0.0; n];
        for j in 0..n {
            let around = match params.update_mode {
                UpdateMode::Jacobi => &prices,
                UpdateMode::GaussSeidel => &next,
            };
            let (mu, degraded) =
                probe(scenario, j, around, params, &profile).map_err(|e| diverged_at(e, k + 1))?;
            flags[j] = degraded;
            marginal[j] = mu.value;
            next.0[j] = price_update(scenario, j, around, &mu, params);
        }
        trace.records.last_mut().expect("initial record").marginal = marginal;
        let run =
            ipoa(scenario, &next, &params.ipoa, &profile).map_err(|e| diverged_at(e, k + 1))?;
        prices = next;
        profile = run.profile;
        trace.records.push(PricingRecord {
            iter: k + 1,
            prices: prices.0.clone(),
            utilities: utilities(scenario, &profile, &prices),
            degraded_flags: flags,
            degraded: !run.converged,
            marginal: Vec::new(),
            profile: profile.clone(),
        });
    }
    Ok(IspaResult {
        prices,
        profile,
        trace,
    })
}

fn diverged_at(e: Error, iteration: usize) -> Error {
    match e {
        Error::NoConvergence { .. } | Error::InfeasibleSubproblem { .. } => {
            Error::FollowerDiverged { iteration }
        }
        other => other,
    }
}

/// Prices on the linear schedule from `p0` (iteration 0) to `p_targets`
/// (iteration `max_iters`).
pub fn blind_schedule(
    p0: &PriceVector,
    p_targets: &PriceVector,
    k: usize,
    max_iters: usize,
) -> Vec<f64> {
    let frac = if max_iters == 0 {
        1.0
    } else {
        k as f64 / max_iters as f64
    };
    p0.0.iter()
        .zip(&p_targets.0)
        .map(|(a, b)| a + frac * (b - a))
        .collect()
}

/// Prices move linearly from `p0` to `p_targets` regardless of demand; the
/// follower equilibrium is re-solved at every step.
pub fn blind_pricing(
    scenario: &SystemScenario,
    params: &IspaParams,
    p0: &PriceVector,
    p_targets: &PriceVector,
) -> Result<IspaResult> {
    params.validate(scenario.n())?;
    check_start(scenario, p0)?;
    check_start(scenario, p_targets)?;
    if p0.0.iter().zip(&p_targets.0).any(|(a, b)| b < a) {
        return Err(Error::InvalidParameter(
            "blind targets must not be below the starting prices".into(),
        ));
    }
    let n = scenario.n();
    let mut profile = StrategyProfile::zeros(scenario.m(), n);
    let mut records = Vec::with_capacity(params.max_iters + 1);
    let mut prices = p0.clone();
    for k in 0..=params.max_iters {
        prices = PriceVector(blind_schedule(p0, p_targets, k, params.max_iters));
        let run = ipoa(scenario, &prices, &params.ipoa, &profile).map_err(|e| diverged_at(e, k))?;
        profile = run.profile;
        records.push(PricingRecord {
            iter: k,
            prices: prices.0.clone(),
            utilities: utilities(scenario, &profile, &prices),
            degraded_flags: vec![false; n],
            degraded: !run.converged,
            marginal: Vec::new(),
            profile: profile.clone(),
        });
    }
    Ok(IspaResult {
        prices,
        profile,
        trace: PricingTrace { records },
    })
}

/// Blind targets: every OSP ends at the mean of `prices`.
pub fn matched_targets(prices: &PriceVector) -> PriceVector {
    PriceVector(vec![mean(&prices.0); prices.len()])
}

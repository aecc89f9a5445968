//! Experiment recipes: one scenario family, one algorithm family and one
//! sweep axis each. A run writes `manifest.json`, `trace.jsonl` and
//! `summary.csv` into its output directory.
//!
//! Dimensionless quantities carry the `_unitless` suffix in CSV headers.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{generate_scenario, ScenarioSpec};
use crate::baselines::{
    evaluate_baseline, poa, socially_optimal, BaselineKind, BaselineOutcome, SocialParams,
};
use crate::error::{Error, Result};
use crate::games::{ipoa_from_local, IpoaParams, IpoaResult};
use crate::model::{mean_disutility, PriceVector, SystemScenario};
use crate::pricing::{blind_pricing, ispa, matched_targets, IspaParams, IspaResult, PricingTrace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// Per-round disutility of selected devices during one IPOA run.
    #[default]
    ConvergenceTrace,
    /// Mean disutility of every scheme against the arrival rate.
    DisutilityVsLambda,
    /// Mean disutility of every scheme against the transmit power.
    DisutilityVsPower,
    /// ISPA price trajectories against the device count.
    PriceTrace,
    /// ISPA revenue trajectories against the device count.
    UtilityTrace,
    /// ISPA against linearly rising prices with the same final mean.
    IspaVsBlind,
    /// Price of anarchy against the arrival rate.
    PoaSweep,
}

/// Parameter varied across the points of a recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Lambda,
    Power,
    Devices,
}

impl Axis {
    /// Column name with unit suffix.
    pub fn column(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda_tasks_per_min",
            Axis::Power => "power_tx_w",
            Axis::Devices => "m_devices",
        }
    }
}

impl Recipe {
    pub const ALL: [Recipe; 7] = [
        Recipe::ConvergenceTrace,
        Recipe::DisutilityVsLambda,
        Recipe::DisutilityVsPower,
        Recipe::PriceTrace,
        Recipe::UtilityTrace,
        Recipe::IspaVsBlind,
        Recipe::PoaSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::ConvergenceTrace => "convergence",
            Recipe::DisutilityVsLambda => "lambda",
            Recipe::DisutilityVsPower => "power",
            Recipe::PriceTrace => "prices",
            Recipe::UtilityTrace => "utilities",
            Recipe::IspaVsBlind => "blind",
            Recipe::PoaSweep => "poa",
        }
    }

    pub fn axis(self) -> Option<Axis> {
        match self {
            Recipe::DisutilityVsLambda | Recipe::PoaSweep => Some(Axis::Lambda),
            Recipe::DisutilityVsPower => Some(Axis::Power),
            Recipe::PriceTrace | Recipe::UtilityTrace => Some(Axis::Devices),
            Recipe::ConvergenceTrace | Recipe::IspaVsBlind => None,
        }
    }

    fn uses_pricing(self) -> bool {
        matches!(
            self,
            Recipe::PriceTrace | Recipe::UtilityTrace | Recipe::IspaVsBlind
        )
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = String;

    /// Accepts the short name or the snake_case variant name.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Recipe::ALL
            .into_iter()
            .find(|r| {
                r.name() == s
                    || serde_json::to_value(r)
                        .ok()
                        .and_then(|v| v.as_str().map(|v| v == s))
                        .unwrap_or(false)
            })
            .ok_or_else(|| {
                let names: Vec<_> = Recipe::ALL.iter().map(|r| r.name()).collect();
                format!(
                    "unknown recipe '{s}' (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub recipe: Recipe,
    /// Base scenario; the sweep axis overrides one of its parameters.
    pub scenario: ScenarioSpec,
    /// Follower prices, or ISPA start prices; `None` means cost prices.
    pub prices_usd_per_gcycle: Option<Vec<f64>>,
    /// Values of the recipe's axis, in the axis column's units.
    pub sweep: Vec<f64>,
    /// 0-indexed devices reported by the convergence recipe.
    pub tracked_devices: Vec<usize>,
    pub ipoa: IpoaParams,
    pub ispa: IspaParams,
    pub social: SocialParams,
    /// Large-scale budgets (ISPA iterations, social restarts).
    pub full: bool,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::recipe(Recipe::default(), 1, false)
    }
}

const FOLLOWER_PRICES: [f64; 4] = [0.2, 0.1, 0.1, 0.1];
const CI_ISPA_ITERS: usize = 20;
const FULL_ISPA_ITERS: usize = 50;
const CI_RESTARTS: usize = 4;
const FULL_RESTARTS: usize = 10;

impl ExperimentSpec {
    /// Default settings of `recipe`: 50 devices, one cloud and three edge
    /// OSPs, 25 tasks/min and 0.4 W unless the recipe sweeps them.
    pub fn recipe(recipe: Recipe, seed: u64, full: bool) -> Self {
        let scenario = ScenarioSpec::new(50, 1, 3, seed)
            .fixed("lambda_tasks_per_min", 25.0)
            .fixed("power_tx_w", 0.4);
        let sweep = match recipe.axis() {
            Some(Axis::Lambda) => (20..=29).map(f64::from).collect(),
            Some(Axis::Power) => (1..=10).map(|k| f64::from(k) / 10.0).collect(),
            Some(Axis::Devices) => vec![10.0, 30.0, 50.0, 70.0, 90.0],
            None => Vec::new(),
        };
        let prices = (!recipe.uses_pricing()).then(|| FOLLOWER_PRICES.to_vec());
        let ispa = IspaParams {
            max_iters: if full { FULL_ISPA_ITERS } else { CI_ISPA_ITERS },
            ..IspaParams::default()
        };
        let social = SocialParams {
            restarts: if full { FULL_RESTARTS } else { CI_RESTARTS },
            seed,
            ..SocialParams::default()
        };
        Self {
            recipe,
            scenario,
            prices_usd_per_gcycle: prices,
            sweep,
            tracked_devices: vec![4, 14, 24, 34, 44],
            ipoa: IpoaParams::default(),
            ispa,
            social,
            full,
            out: PathBuf::from("runs").join(recipe.name()),
        }
    }

    /// Reseeds the scenario and the restart streams.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self.social.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.ipoa.validate()?;
        let n = self.scenario.n_cloud + self.scenario.n_edge;
        if self.recipe.uses_pricing() {
            self.ispa.validate(n)?;
        }
        if let Some(p) = &self.prices_usd_per_gcycle {
            if p.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "{} prices for {n} OSPs",
                    p.len()
                )));
            }
        }
        match self.recipe.axis() {
            Some(axis) => {
                if self.sweep.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "recipe {} needs sweep values",
                        self.recipe
                    )));
                }
                for &v in &self.sweep {
                    let ok = match axis {
                        Axis::Lambda | Axis::Power => v.is_finite() && v > 0.0,
                        Axis::Devices => v >= 1.0 && v.fract() == 0.0,
                    };
                    if !ok {
                        return Err(Error::InvalidParameter(format!(
                            "bad {} value {v}",
                            axis.column()
                        )));
                    }
                }
            }
            None if !self.sweep.is_empty() => {
                return Err(Error::InvalidParameter(format!(
                    "recipe {} takes no sweep",
                    self.recipe
                )));
            }
            None => {}
        }
        if self.recipe == Recipe::ConvergenceTrace {
            if let Some(&i) = self.tracked_devices.iter().find(|&&i| i >= self.scenario.m) {
                return Err(Error::InvalidParameter(format!(
                    "tracked device {i} out of range"
                )));
            }
        }
        Ok(())
    }

    /// Scenario spec of one sweep point.
    pub fn point_scenario(&self, value: Option<f64>) -> ScenarioSpec {
        let spec = self.scenario.clone();
        match (self.recipe.axis(), value) {
            (Some(Axis::Lambda), Some(v)) => spec.fixed("lambda_tasks_per_min", v),
            (Some(Axis::Power), Some(v)) => spec.fixed("power_tx_w", v),
            (Some(Axis::Devices), Some(v)) => ScenarioSpec {
                m: v as usize,
                ..spec
            },
            _ => spec,
        }
    }

    fn prices(&self, sc: &SystemScenario) -> Result<PriceVector> {
        match &self.prices_usd_per_gcycle {
            Some(p) => PriceVector::per_gcycle(p, sc),
            None => Ok(sc.min_prices()),
        }
    }

    fn points(&self) -> Vec<Option<f64>> {
        if self.recipe.axis().is_some() {
            self.sweep.iter().map(|&v| Some(v)).collect()
        } else {
            vec![None]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub points: usize,
    pub failures: usize,
}

impl RunSummary {
    pub fn all_failed(&self) -> bool {
        self.failures == self.points
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean disutility of IPOA, the social optimum and the fixed baselines at
/// one scenario and price vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub ipoa_mean: f64,
    pub ipoa_converged: bool,
    pub ipoa_rounds: usize,
    pub social_mean: f64,
    pub social_spread: f64,
    pub baselines: Vec<BaselineOutcome>,
}

impl SchemeComparison {
    pub fn baseline(&self, kind: BaselineKind) -> Option<&BaselineOutcome> {
        self.baselines.iter().find(|b| b.kind == kind)
    }
}

const FIXED_BASELINES: [BaselineKind; 3] = [
    BaselineKind::LocalOnly,
    BaselineKind::CloudOnly,
    BaselineKind::Evenly,
];

pub fn compare_schemes(
    scenario: &SystemScenario,
    prices: &PriceVector,
    ipoa_params: &IpoaParams,
    social: &SocialParams,
) -> Result<(SchemeComparison, IpoaResult)> {
    let ne = ipoa_from_local(scenario, prices, ipoa_params)?;
    let ipoa_mean = mean_disutility(scenario, &ne.profile, prices)?;
    let so = socially_optimal(scenario, prices, social, Some(&ne.profile))?;
    let baselines = FIXED_BASELINES
        .iter()
        .filter(|k| **k != BaselineKind::CloudOnly || scenario.n_cloud() > 0)
        .map(|&k| evaluate_baseline(scenario, k, prices, social))
        .collect::<Result<Vec<_>>>()?;
    let cmp = SchemeComparison {
        ipoa_mean,
        ipoa_converged: ne.converged,
        ipoa_rounds: ne.iterations,
        social_mean: so.objective,
        social_spread: so.spread,
        baselines,
    };
    Ok((cmp, ne))
}

/// Runs `spec` and writes its outputs. Per-point failures are recorded in
/// the manifest; only invalid specs and I/O errors are returned.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunSummary> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out)?;
    let mut trace = BufWriter::new(File::create(spec.out.join("trace.jsonl"))?);
    let mut summary = csv::Writer::from_path(spec.out.join("summary.csv"))?;
    summary.write_record(header(spec))?;

    let mut point_log = Vec::new();
    let mut failures = 0;
    for (k, value) in spec.points().into_iter().enumerate() {
        let point = spec.point_scenario(value);
        let outcome = run_point(spec, &point, k, value, &mut trace, &mut summary);
        let mut entry = json!({
            "index": k,
            "scenario": point,
            "effective_ranges": point.effective_ranges(),
        });
        if let Some(v) = value {
            entry["axis_value"] = json!(v);
        }
        match outcome {
            Ok(extra) => {
                entry["status"] = json!("ok");
                if !extra.is_null() {
                    entry["result"] = extra;
                }
            }
            Err(e @ (Error::Io(_) | Error::Csv(_) | Error::Json(_))) => return Err(e),
            Err(e) => {
                failures += 1;
                entry["status"] = json!("failed");
                entry["error"] = json!(e.to_string());
            }
        }
        point_log.push(entry);
    }
    trace.flush()?;
    summary.flush()?;

    let manifest = json!({
        "recipe": spec.recipe.name(),
        "seed": spec.scenario.seed,
        "version": VERSION,
        "axis": spec.recipe.axis().map(Axis::column),
        "spec": spec,
        "points": point_log,
        "failures": failures,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(spec.out.join("manifest.json"), text)?;
    Ok(RunSummary {
        out_dir: spec.out.clone(),
        points: point_log.len(),
        failures,
    })
}

fn header(spec: &ExperimentSpec) -> Vec<String> {
    let n = spec.scenario.n_cloud + spec.scenario.n_edge;
    let axis = spec.recipe.axis().map(|a| a.column().to_string());
    let mut h: Vec<String> = axis.into_iter().collect();
    match spec.recipe {
        Recipe::ConvergenceTrace => {
            h.extend([
                "round".into(),
                "frobenius_delta_unitless".into(),
                "residual_unitless".into(),
            ]);
            h.extend(
                spec.tracked_devices
                    .iter()
                    .map(|i| format!("disutility_dev{i}_unitless")),
            );
            h.push("mean_disutility_unitless".into());
        }
        Recipe::DisutilityVsLambda | Recipe::DisutilityVsPower => {
            h.extend([
                "ipoa_mean_disutility_unitless".into(),
                "ipoa_converged".into(),
                "ipoa_rounds".into(),
            ]);
            h.push("socially_optimal_mean_disutility_unitless".into());
            for k in FIXED_BASELINES {
                h.push(format!("{}_mean_disutility_unitless", k.name()));
                h.push(format!("{}_violations", k.name()));
            }
        }
        Recipe::PriceTrace | Recipe::UtilityTrace => {
            h.push("iters".into());
            h.extend((0..n).map(|j| format!("final_price_{j}_usd_per_gcycle")));
            h.extend((0..n).map(|j| format!("final_utility_{j}_usd_per_s")));
            h.extend((0..n).map(|j| format!("utility_slope_{j}_usd_per_s_per_iter")));
            h.push("degraded_records".into());
        }
        Recipe::IspaVsBlind => {
            h.extend([
                "iter".into(),
                "ispa_mean_price_usd_per_gcycle".into(),
                "blind_mean_price_usd_per_gcycle".into(),
                "ispa_mean_utility_usd_per_s".into(),
                "blind_mean_utility_usd_per_s".into(),
            ]);
        }
        Recipe::PoaSweep => {
            h.extend([
                "avg_ne_unitless".into(),
                "avg_so_unitless".into(),
                "poa_unitless".into(),
                "so_spread_unitless".into(),
                "ne_converged".into(),
                "ne_rounds".into(),
            ]);
        }
    }
    h
}

fn write_line<W: Write>(
    w: &mut W,
    k: usize,
    value: Option<f64>,
    kind: &str,
    record: impl Serialize,
) -> Result<()> {
    let mut v = serde_json::to_value(record)?;
    if let Value::Object(map) = &mut v {
        map.insert("point".into(), json!(k));
        map.insert("kind".into(), json!(kind));
        if let Some(x) = value {
            map.insert("axis_value".into(), json!(x));
        }
    }
    serde_json::to_writer(&mut *w, &v)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn cell(v: f64) -> String {
    v.to_string()
}

fn run_point<W: Write, C: Write>(
    spec: &ExperimentSpec,
    point: &ScenarioSpec,
    k: usize,
    value: Option<f64>,
    trace: &mut W,
    summary: &mut csv::Writer<C>,
) -> Result<Value> {
    let sc = generate_scenario(point)?;
    let prices = spec.prices(&sc)?;
    let lead: Vec<String> = value.map(cell).into_iter().collect();
    match spec.recipe {
        Recipe::ConvergenceTrace => {
            let res = ipoa_from_local(&sc, &prices, &spec.ipoa)?;
            for r in &res.trace.rounds {
                write_line(trace, k, value, "round", r)?;
                let mut row = lead.clone();
                row.push(r.round.to_string());
                row.push(r.frobenius_delta.map_or(String::new(), cell));
                row.push(r.residual.map_or(String::new(), cell));
                row.extend(
                    spec.tracked_devices
                        .iter()
                        .map(|&i| cell(r.per_device_disutility[i])),
                );
                let mean = r.per_device_disutility.iter().sum::<f64>()
                    / r.per_device_disutility.len() as f64;
                row.push(cell(mean));
                summary.write_record(&row)?;
            }
            Ok(json!({ "converged": res.converged, "rounds": res.iterations }))
        }
        Recipe::DisutilityVsLambda | Recipe::DisutilityVsPower => {
            let (cmp, _) = compare_schemes(&sc, &prices, &spec.ipoa, &spec.social)?;
            write_line(trace, k, value, "schemes", &cmp)?;
            let mut row = lead;
            row.extend([
                cell(cmp.ipoa_mean),
                cmp.ipoa_converged.to_string(),
                cmp.ipoa_rounds.to_string(),
            ]);
            row.push(cell(cmp.social_mean));
            for kind in FIXED_BASELINES {
                match cmp.baseline(kind) {
                    Some(b) => {
                        row.push(cell(b.mean_disutility));
                        let tags: Vec<String> =
                            b.violations.iter().map(ToString::to_string).collect();
                        row.push(tags.join(";"));
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            summary.write_record(&row)?;
            let flagged: Vec<&str> = cmp
                .baselines
                .iter()
                .filter(|b| !b.feasible)
                .map(|b| b.kind.name())
                .collect();
            Ok(json!({ "infeasible_baselines": flagged }))
        }
        Recipe::PriceTrace | Recipe::UtilityTrace => {
            let res = ispa(&sc, &spec.ispa, &prices)?;
            write_pricing(trace, k, value, "ispa", &res.trace)?;
            let name = format!("ispa_m{}.csv", sc.m());
            res.trace
                .write_csv(BufWriter::new(File::create(spec.out.join(&name))?))?;
            summary.write_record(pricing_row(lead, &res))?;
            Ok(json!({ "trace_csv": name }))
        }
        Recipe::IspaVsBlind => {
            let (res, blind) = ispa_vs_blind(&sc, &spec.ispa, &prices)?;
            write_pricing(trace, k, value, "ispa", &res.trace)?;
            write_pricing(trace, k, value, "blind", &blind.trace)?;
            res.trace
                .write_csv(BufWriter::new(File::create(spec.out.join("ispa.csv"))?))?;
            blind
                .trace
                .write_csv(BufWriter::new(File::create(spec.out.join("blind.csv"))?))?;
            let (iu, bu) = (
                res.trace.mean_utility_series(),
                blind.trace.mean_utility_series(),
            );
            for (i, (a, b)) in res
                .trace
                .records
                .iter()
                .zip(&blind.trace.records)
                .enumerate()
            {
                let mean_price = |p: &[f64]| p.iter().sum::<f64>() / p.len() as f64 * 1e9;
                summary.write_record([
                    i.to_string(),
                    cell(mean_price(&a.prices)),
                    cell(mean_price(&b.prices)),
                    cell(iu[i]),
                    cell(bu[i]),
                ])?;
            }
            let last = iu.len() - 1;
            Ok(json!({ "ispa_final_mean_utility": iu[last], "blind_final_mean_utility": bu[last] }))
        }
        Recipe::PoaSweep => {
            let rep = poa(&sc, &prices, &spec.ipoa, &spec.social)?;
            write_line(trace, k, value, "poa", &rep)?;
            let mut row = lead;
            row.extend([
                cell(rep.avg_ne),
                cell(rep.avg_so),
                cell(rep.poa),
                cell(rep.so_spread),
                rep.ne_converged.to_string(),
                rep.ne_iterations.to_string(),
            ]);
            summary.write_record(&row)?;
            Ok(Value::Null)
        }
    }
}

/// ISPA from `p0`, then blind pricing from `p0` to ISPA's final mean price
/// with the same iteration budget.
pub fn ispa_vs_blind(
    scenario: &SystemScenario,
    params: &IspaParams,
    p0: &PriceVector,
) -> Result<(IspaResult, IspaResult)> {
    let res = ispa(scenario, params, p0)?;
    let targets = matched_targets(&res.prices);
    let floor: Vec<f64> = p0
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(a, b)| a.max(*b))
        .collect();
    let targets = PriceVector::new(floor, scenario)?;
    let blind = blind_pricing(scenario, params, p0, &targets)?;
    Ok((res, blind))
}

fn write_pricing<W: Write>(
    w: &mut W,
    k: usize,
    value: Option<f64>,
    kind: &str,
    t: &PricingTrace,
) -> Result<()> {
    t.records
        .iter()
        .try_for_each(|r| write_line(w, k, value, kind, r))
}

fn pricing_row(mut row: Vec<String>, res: &IspaResult) -> Vec<String> {
    let recs = &res.trace.records;
    let last = recs.last().expect("trace holds iteration 0");
    let n = last.prices.len();
    row.push((recs.len() - 1).to_string());
    row.extend(last.prices.iter().map(|p| cell(p * 1e9)));
    row.extend(last.utilities.iter().map(|u| cell(*u)));
    let xs: Vec<f64> = (0..recs.len()).map(|i| i as f64).collect();
    row.extend((0..n).map(|j| cell(least_squares_slope(&xs, &res.trace.utility_series(j)))));
    let degraded = recs
        .iter()
        .filter(|r| r.degraded || r.degraded_flags.iter().any(|&f| f))
        .count();
    row.push(degraded.to_string());
    row
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;

    fn small(recipe: Recipe, dir: &Path) -> ExperimentSpec {
        let mut spec = ExperimentSpec::recipe(recipe, 3, false);
        spec.scenario.m = 6;
        spec.tracked_devices = vec![0, 5];
        spec.ispa.max_iters = 2;
        spec.social.restarts = 1;
        if recipe.axis().is_some() {
            spec.sweep.truncate(2);
        }
        if recipe.axis() == Some(Axis::Devices) {
            spec.sweep = vec![3.0, 6.0];
        }
        spec.out = dir.join(recipe.name());
        spec
    }

    #[test]
    fn recipe_names_round_trip() {
        for r in Recipe::ALL {
            assert_eq!(r.name().parse::<Recipe>().unwrap(), r);
            let snake = serde_json::to_value(r).unwrap();
            assert_eq!(snake.as_str().unwrap().parse::<Recipe>().unwrap(), r);
        }
        assert!("fig9".parse::<Recipe>().is_err());
    }

    #[test]
    fn slope_of_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert!((least_squares_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn every_recipe_writes_its_files() {
        let dir = tempfile::tempdir().unwrap();
        for r in Recipe::ALL {
            let spec = small(r, dir.path());
            let out = run_experiment(&spec).unwrap();
            assert_eq!(out.failures, 0, "{r}");
            for f in ["manifest.json", "trace.jsonl", "summary.csv"] {
                assert!(spec.out.join(f).exists(), "{r}: {f}");
            }
            let mut rdr = csv::Reader::from_path(spec.out.join("summary.csv")).unwrap();
            let headers = rdr.headers().unwrap().clone();
            assert!(rdr.records().count() >= 1, "{r}");
            for h in headers.iter() {
                let counted = [
                    "round",
                    "iter",
                    "iters",
                    "ipoa_rounds",
                    "ne_rounds",
                    "degraded_records",
                ]
                .contains(&h)
                    || h.ends_with("_converged")
                    || h.ends_with("_violations");
                let united = [
                    "_unitless",
                    "_usd_per_gcycle",
                    "_usd_per_s",
                    "_usd_per_s_per_iter",
                    "_per_min",
                    "_w",
                    "_devices",
                ]
                .iter()
                .any(|u| h.ends_with(u));
                assert!(counted || united, "{r}: header {h} lacks a unit");
            }
        }
    }

    #[test]
    fn sweep_validation() {
        let mut spec = ExperimentSpec::recipe(Recipe::DisutilityVsLambda, 1, false);
        spec.sweep.clear();
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::recipe(Recipe::ConvergenceTrace, 1, false);
        spec.sweep = vec![1.0];
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::recipe(Recipe::PriceTrace, 1, false);
        spec.sweep = vec![2.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn full_scale_budgets() {
        let ci = ExperimentSpec::recipe(Recipe::PriceTrace, 1, false);
        let full = ExperimentSpec::recipe(Recipe::PriceTrace, 1, true);
        assert_eq!((ci.ispa.max_iters, ci.social.restarts), (20, 4));
        assert_eq!((full.ispa.max_iters, full.social.restarts), (50, 10));
    }
}

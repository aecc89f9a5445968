//! Command-line front end. Exit codes: 0 on success, 1 on runtime failure,
//! 2 on usage or configuration errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use super::experiment::VERSION;
use super::{
    generate_scenario, generate_scenario_file, run_experiment, validate_scenario, ExperimentSpec,
    Override, Recipe,
};
use crate::baselines::{evaluate_baseline, poa, BaselineKind};
use crate::error::Error;
use crate::games::ipoa_from_local;
use crate::model::units::ScenarioFile;
use crate::model::{mean_disutility, PriceVector, SystemScenario};
use crate::pricing::ispa;

/// Environment variable that overrides `--out`.
pub const OUT_DIR_ENV: &str = "MECGAME_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "mecgame",
    version,
    about = "Edge-cloud offloading and pricing game simulator"
)]
pub struct Cli {
    /// Scenario and restart seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON experiment spec; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overridden by MECGAME_OUT_DIR).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Large-scale budgets: 50 ISPA iterations and 10 social restarts.
    #[arg(long, global = true)]
    pub full: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Scenario file written by `generate`; drawn from the spec otherwise.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Prices in $/Gcycle, comma separated, one per OSP.
    #[arg(long, value_delimiter = ',')]
    pub prices: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    LocalOnly,
    CloudOnly,
    Evenly,
    SociallyOptimal,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a scenario and write it as JSON.
    Generate {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n_cloud: Option<usize>,
        #[arg(long)]
        n_edge: Option<usize>,
        /// Parameter override `name=value` or `name=lo:hi`, native units.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        overrides: Vec<String>,
    },
    /// Follower equilibrium at fixed prices.
    Ipoa(Inputs),
    /// Leader price iteration from the given (or cost) prices.
    Ispa(Inputs),
    /// Mean disutility of a comparison scheme.
    Baseline {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = KindArg::All)]
        kind: KindArg,
    },
    /// Price of anarchy at fixed prices.
    Poa(Inputs),
    /// Run an experiment recipe.
    Experiment {
        #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Recipe>()))]
        recipe: Option<Recipe>,
    },
    /// Gradient, Hessian and convexity checks on a scenario.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Recursively overlays `top` onto `base`; non-object values replace.
fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Recipe defaults for `forced`, else the config's recipe, else `fallback`,
/// with the config file overlaid field by field.
fn load_spec(
    cli: &Cli,
    fallback: Recipe,
    forced: Option<Recipe>,
) -> std::result::Result<ExperimentSpec, Failure> {
    let mut spec = match &cli.config {
        Some(path) => {
            let bad = |e: String| Failure::Usage(format!("bad config {}: {e}", path.display()));
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let config: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            if !config.is_object() {
                return Err(bad("expected a JSON object".into()));
            }
            let recipe = match (forced, config.get("recipe")) {
                (Some(r), _) => r,
                (None, Some(v)) => {
                    serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?
                }
                (None, None) => fallback,
            };
            let seed = config
                .pointer("/scenario/seed")
                .and_then(serde_json::Value::as_u64)
                .unwrap_or(1);
            let full = cli.full || config.get("full") == Some(&serde_json::Value::Bool(true));
            let mut merged = serde_json::to_value(ExperimentSpec::recipe(recipe, seed, full))
                .map_err(|e| Failure::Runtime(e.into()))?;
            merge(&mut merged, config);
            merged["recipe"] =
                serde_json::to_value(recipe).map_err(|e| Failure::Runtime(e.into()))?;
            let mut spec: ExperimentSpec =
                serde_json::from_value(merged).map_err(|e| bad(e.to_string()))?;
            if cli.full {
                let full = ExperimentSpec::recipe(recipe, seed, true);
                spec.ispa.max_iters = full.ispa.max_iters;
                spec.social.restarts = full.social.restarts;
                spec.full = true;
            }
            spec
        }
        None => ExperimentSpec::recipe(forced.unwrap_or(fallback), 1, cli.full),
    };
    if let Some(seed) = cli.seed {
        spec = spec.with_seed(seed);
    }
    Ok(spec)
}

fn out_dir(cli: &Cli, fallback: &Path) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| fallback.to_path_buf())
}

fn scenario_for(spec: &ExperimentSpec, inputs: Option<&Path>) -> Result<SystemScenario, Failure> {
    match inputs {
        Some(path) => {
            let file = ScenarioFile::load(path).map_err(|e| match e {
                Error::Io(io) => {
                    Failure::Usage(format!("cannot read scenario {}: {io}", path.display()))
                }
                Error::Json(j) => Failure::Usage(format!("bad scenario {}: {j}", path.display())),
                other => Failure::Runtime(other),
            })?;
            Ok(file.to_scenario()?)
        }
        None => Ok(generate_scenario(&spec.scenario)?),
    }
}

/// Explicit prices, then the spec's prices unless the scenario came from a
/// file without a config, then cost prices.
fn prices_for(
    cli: &Cli,
    spec: &ExperimentSpec,
    inputs: &Inputs,
    sc: &SystemScenario,
) -> Result<PriceVector, Failure> {
    let spec_applies = inputs.scenario.is_none() || cli.config.is_some();
    let chosen = inputs
        .prices
        .clone()
        .or_else(|| spec.prices_usd_per_gcycle.clone().filter(|_| spec_applies));
    Ok(match chosen {
        Some(p) => PriceVector::per_gcycle(&p, sc)?,
        None => sc.min_prices(),
    })
}

fn say(cli: &Cli, msg: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", msg.as_ref());
    }
}

fn write_manifest(
    dir: &Path,
    command: &str,
    spec: &ExperimentSpec,
    extra: serde_json::Value,
) -> Result<(), Error> {
    let manifest = json!({
        "command": command,
        "seed": spec.scenario.seed,
        "version": VERSION,
        "spec": spec,
        "effective_ranges": spec.scenario.effective_ranges(),
        "result": extra,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Generate {
            m,
            n_cloud,
            n_edge,
            overrides,
        } => {
            let mut spec = load_spec(cli, Recipe::default(), None)?;
            let sc = &mut spec.scenario;
            sc.m = m.unwrap_or(sc.m);
            sc.n_cloud = n_cloud.unwrap_or(sc.n_cloud);
            sc.n_edge = n_edge.unwrap_or(sc.n_edge);
            for raw in overrides {
                let (name, value) = parse_override(raw).map_err(Failure::Usage)?;
                sc.overrides.insert(name, value);
            }
            let file = generate_scenario_file(&spec.scenario)?;
            let dir = out_dir(cli, Path::new("runs/generate"));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            let path = dir.join("scenario.json");
            file.save(&path)?;
            write_manifest(
                &dir,
                "generate",
                &spec,
                json!({ "scenario": "scenario.json" }),
            )?;
            say(cli, format!("wrote {}", path.display()));
            Ok(())
        }
        Command::Ipoa(inputs) => {
            let spec = load_spec(cli, Recipe::ConvergenceTrace, None)?;
            let sc = scenario_for(&spec, inputs.scenario.as_deref())?;
            let prices = prices_for(cli, &spec, inputs, &sc)?;
            let res = ipoa_from_local(&sc, &prices, &spec.ipoa)?;
            let dir = out_dir(cli, Path::new("runs/ipoa"));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            match cli.format {
                Format::Jsonl => res.trace.write_jsonl(BufWriter::new(
                    File::create(dir.join("ipoa.jsonl")).map_err(Error::from)?,
                ))?,
                Format::Csv => {
                    let mut w =
                        csv::Writer::from_path(dir.join("ipoa.csv")).map_err(Error::from)?;
                    w.write_record([
                        "round",
                        "frobenius_delta_unitless",
                        "residual_unitless",
                        "step_unitless",
                        "mean_disutility_unitless",
                    ])
                    .map_err(Error::from)?;
                    for r in &res.trace.rounds {
                        let mean = r.per_device_disutility.iter().sum::<f64>()
                            / r.per_device_disutility.len() as f64;
                        w.write_record([
                            r.round.to_string(),
                            r.frobenius_delta.map_or(String::new(), |v| v.to_string()),
                            r.residual.map_or(String::new(), |v| v.to_string()),
                            r.step.to_string(),
                            mean.to_string(),
                        ])
                        .map_err(Error::from)?;
                    }
                    w.flush().map_err(Error::from)?;
                }
            }
            let mean = mean_disutility(&sc, &res.profile, &prices)?;
            write_manifest(
                &dir,
                "ipoa",
                &spec,
                json!({ "converged": res.converged, "rounds": res.iterations, "mean_disutility": mean }),
            )?;
            say(
                cli,
                format!(
                    "converged={} rounds={} mean_disutility={mean:.6}",
                    res.converged, res.iterations
                ),
            );
            if res.converged {
                Ok(())
            } else {
                Err(Failure::Runtime(Error::NoConvergence {
                    iterations: res.iterations,
                }))
            }
        }
        Command::Ispa(inputs) => {
            let spec = load_spec(cli, Recipe::PriceTrace, None)?;
            let sc = scenario_for(&spec, inputs.scenario.as_deref())?;
            let prices = prices_for(cli, &spec, inputs, &sc)?;
            let res = ispa(&sc, &spec.ispa, &prices)?;
            let dir = out_dir(cli, Path::new("runs/ispa"));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            match cli.format {
                Format::Jsonl => res.trace.write_jsonl(BufWriter::new(
                    File::create(dir.join("ispa.jsonl")).map_err(Error::from)?,
                ))?,
                Format::Csv => res.trace.write_csv(BufWriter::new(
                    File::create(dir.join("ispa.csv")).map_err(Error::from)?,
                ))?,
            }
            let final_prices: Vec<f64> = res.prices.as_slice().iter().map(|p| p * 1e9).collect();
            write_manifest(
                &dir,
                "ispa",
                &spec,
                json!({ "final_prices_usd_per_gcycle": final_prices }),
            )?;
            say(cli, format!("final prices ($/Gcycle): {final_prices:?}"));
            Ok(())
        }
        Command::Baseline { inputs, kind } => {
            let spec = load_spec(cli, Recipe::DisutilityVsLambda, None)?;
            let sc = scenario_for(&spec, inputs.scenario.as_deref())?;
            let prices = prices_for(cli, &spec, inputs, &sc)?;
            let kinds: Vec<BaselineKind> = match kind {
                KindArg::LocalOnly => vec![BaselineKind::LocalOnly],
                KindArg::CloudOnly => vec![BaselineKind::CloudOnly],
                KindArg::Evenly => vec![BaselineKind::Evenly],
                KindArg::SociallyOptimal => vec![BaselineKind::SociallyOptimal],
                KindArg::All => BaselineKind::ALL
                    .iter()
                    .copied()
                    .filter(|k| *k != BaselineKind::CloudOnly || sc.n_cloud() > 0)
                    .collect(),
            };
            let outcomes = kinds
                .iter()
                .map(|&k| evaluate_baseline(&sc, k, &prices, &spec.social))
                .collect::<Result<Vec<_>, _>>()?;
            let dir = out_dir(cli, Path::new("runs/baseline"));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            match cli.format {
                Format::Jsonl => jsonl(&dir.join("baseline.jsonl"), &outcomes)?,
                Format::Csv => {
                    let mut w =
                        csv::Writer::from_path(dir.join("baseline.csv")).map_err(Error::from)?;
                    w.write_record([
                        "scheme",
                        "mean_disutility_unitless",
                        "feasible",
                        "violations",
                    ])
                    .map_err(Error::from)?;
                    for o in &outcomes {
                        let tags: Vec<String> =
                            o.violations.iter().map(ToString::to_string).collect();
                        w.write_record([
                            o.kind.name().to_string(),
                            o.mean_disutility.to_string(),
                            o.feasible.to_string(),
                            tags.join(";"),
                        ])
                        .map_err(Error::from)?;
                    }
                    w.flush().map_err(Error::from)?;
                }
            }
            let summary: Vec<_> = outcomes.iter().map(|o| json!({ "scheme": o.kind.name(), "mean_disutility": o.mean_disutility, "feasible": o.feasible })).collect();
            write_manifest(&dir, "baseline", &spec, json!(summary))?;
            for o in &outcomes {
                say(
                    cli,
                    format!(
                        "{} mean_disutility={} feasible={}",
                        o.kind.name(),
                        o.mean_disutility,
                        o.feasible
                    ),
                );
            }
            Ok(())
        }
        Command::Poa(inputs) => {
            let spec = load_spec(cli, Recipe::PoaSweep, None)?;
            let sc = scenario_for(&spec, inputs.scenario.as_deref())?;
            let prices = prices_for(cli, &spec, inputs, &sc)?;
            let rep = poa(&sc, &prices, &spec.ipoa, &spec.social)?;
            let dir = out_dir(cli, Path::new("runs/poa"));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            match cli.format {
                Format::Jsonl => jsonl(&dir.join("poa.jsonl"), [&rep])?,
                Format::Csv => {
                    let mut w = csv::Writer::from_path(dir.join("poa.csv")).map_err(Error::from)?;
                    w.write_record([
                        "avg_ne_unitless",
                        "avg_so_unitless",
                        "poa_unitless",
                        "so_spread_unitless",
                    ])
                    .map_err(Error::from)?;
                    w.write_record(
                        [rep.avg_ne, rep.avg_so, rep.poa, rep.so_spread].map(|v| v.to_string()),
                    )
                    .map_err(Error::from)?;
                    w.flush().map_err(Error::from)?;
                }
            }
            write_manifest(
                &dir,
                "poa",
                &spec,
                serde_json::to_value(&rep).map_err(Error::from)?,
            )?;
            say(
                cli,
                format!(
                    "poa={:.6} avg_ne={:.6} avg_so={:.6}",
                    rep.poa, rep.avg_ne, rep.avg_so
                ),
            );
            Ok(())
        }
        Command::Experiment { recipe } => {
            let mut spec = load_spec(cli, Recipe::default(), *recipe)?;
            spec.out = out_dir(cli, &spec.out);
            let summary = run_experiment(&spec)?;
            say(
                cli,
                format!(
                    "{}: {} points, {} failed, output in {}",
                    spec.recipe,
                    summary.points,
                    summary.failures,
                    summary.out_dir.display()
                ),
            );
            if summary.all_failed() {
                Err(Failure::Runtime(Error::InvalidParameter(
                    "every sweep point failed".into(),
                )))
            } else {
                Ok(())
            }
        }
        Command::Validate { scenario, points } => {
            let spec = load_spec(cli, Recipe::default(), None)?;
            let sc = scenario_for(&spec, scenario.as_deref())?;
            let rep = validate_scenario(&sc, *points, spec.scenario.seed)?;
            say(
                cli,
                serde_json::to_string_pretty(&rep).map_err(Error::from)?,
            );
            if rep.passed {
                Ok(())
            } else {
                Err(Failure::Runtime(Error::InvalidParameter(
                    "derivative checks failed".into(),
                )))
            }
        }
    }
}

fn parse_override(raw: &str) -> std::result::Result<(String, Override), String> {
    let (name, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("override `{raw}` is not name=value"))?;
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("override `{raw}`: `{s}` is not a number"))
    };
    let value = match value.split_once(':') {
        Some((lo, hi)) => Override::Range([num(lo)?, num(hi)?]),
        None => Override::Fixed(num(value)?),
    };
    Ok((name.trim().to_string(), value))
}

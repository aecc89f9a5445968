//! Seeded scenario generation, experiment recipes and the command-line
//! interface.
//!
//! Every parameter is drawn uniformly from a range in native units; fixed
//! values are degenerate ranges. Every device, OSP, social restart and
//! validation sample owns a ChaCha8 stream selected by a
//! `(kind << 32) | index` stream id, so the draws of device `i` do not
//! depend on how many devices exist.

pub mod cli;
pub mod experiment;
pub mod validate;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::units::{DeviceRecord, NetworkRecord, OspRecord, ScenarioFile};
use crate::model::{OspKind, SystemScenario};

pub use experiment::{run_experiment, ExperimentSpec, Recipe, RunSummary};
pub use validate::{validate_scenario, ValidationReport};

const NETWORK_STREAM: u64 = 0;
const DEVICE_STREAM: u64 = 1 << 32;
const OSP_STREAM: u64 = 2 << 32;
const RESTART_STREAM: u64 = 3 << 32;
const SAMPLE_STREAM: u64 = 4 << 32;

/// RNG for device `i`'s parameter draws.
pub fn device_rng(seed: u64, i: usize) -> ChaCha8Rng {
    stream(seed, DEVICE_STREAM | i as u64)
}

pub fn osp_rng(seed: u64, j: usize) -> ChaCha8Rng {
    stream(seed, OSP_STREAM | j as u64)
}

/// RNG for random restart `r` of the social-optimum search.
pub fn restart_rng(seed: u64, r: usize) -> ChaCha8Rng {
    stream(seed, RESTART_STREAM | r as u64)
}

/// RNG for validation sample `k`.
pub fn sample_rng(seed: u64, k: usize) -> ChaCha8Rng {
    stream(seed, SAMPLE_STREAM | k as u64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A fixed value or an inclusive uniform range, in native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Override {
    Fixed(f64),
    Range([f64; 2]),
}

impl Override {
    fn bounds(self) -> (f64, f64) {
        match self {
            Override::Fixed(v) => (v, v),
            Override::Range([lo, hi]) => (lo, hi),
        }
    }
}

/// Device parameters in draw order with their default ranges. The three
/// weight entries are raw uniforms that are normalized to sum to one.
pub const DEVICE_PARAMS: [(&str, f64, f64); 14] = [
    ("lambda_tasks_per_min", 20.0, 29.0),
    ("cycles_mcycles", 300.0, 300.0),
    ("input_kb", 500.0, 500.0),
    ("cpu_mhz", 300.0, 450.0),
    ("power_local_w", 0.5, 0.5),
    ("power_tx_w", 0.1, 1.0),
    ("channel_gain_db", -50.0, -50.0),
    ("service_var_s2", 0.0, 0.0),
    ("d_max_s", 1.0, 1.0),
    ("e_max_j", 1.0, 1.0),
    ("p_max_usd_per_s", 0.1, 0.1),
    ("theta_d", 0.0, 1.0),
    ("theta_e", 0.0, 1.0),
    ("theta_p", 0.0, 1.0),
];

pub const OSP_PARAMS: [(&str, f64, f64); 3] = [
    ("osp_rate_ghz", 1.44, 2.9),
    ("p_min_usd_per_gcycle", 0.05, 0.05),
    ("amplifiers", 1.0, 1.0),
];

pub const NETWORK_PARAMS: [(&str, f64, f64); 4] = [
    ("bandwidth_mhz", 100.0, 100.0),
    ("w0_w", 1e-8, 1e-8),
    ("fiber_gbps", 10.0, 10.0),
    ("prop_delay_s", 0.0, 0.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub m: usize,
    pub n_cloud: usize,
    pub n_edge: usize,
    pub seed: u64,
    #[serde(default)]
    pub overrides: BTreeMap<String, Override>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            m: 50,
            n_cloud: 1,
            n_edge: 3,
            seed: 1,
            overrides: BTreeMap::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn new(m: usize, n_cloud: usize, n_edge: usize, seed: u64) -> Self {
        Self {
            m,
            n_cloud,
            n_edge,
            seed,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: Override) -> Self {
        self.overrides.insert(name.to_string(), value);
        self
    }

    pub fn fixed(self, name: &str, value: f64) -> Self {
        self.with(name, Override::Fixed(value))
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be >= 1".into()));
        }
        if self.n_cloud + self.n_edge == 0 {
            return Err(Error::InvalidParameter("at least one OSP required".into()));
        }
        let known = DEVICE_PARAMS
            .iter()
            .chain(&OSP_PARAMS)
            .chain(&NETWORK_PARAMS)
            .map(|p| p.0)
            .collect::<Vec<_>>();
        for (name, ov) in &self.overrides {
            if !known.contains(&name.as_str()) {
                return Err(Error::InvalidOverride {
                    name: name.clone(),
                    reason: "unknown parameter".into(),
                });
            }
            let (lo, hi) = ov.bounds();
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidOverride {
                    name: name.clone(),
                    reason: format!("bad range [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }

    fn bounds(&self, name: &str, lo: f64, hi: f64) -> (f64, f64) {
        self.overrides.get(name).map_or((lo, hi), |o| o.bounds())
    }

    /// Every parameter range after overrides, in native units.
    pub fn effective_ranges(&self) -> BTreeMap<String, [f64; 2]> {
        DEVICE_PARAMS
            .iter()
            .chain(&OSP_PARAMS)
            .chain(&NETWORK_PARAMS)
            .map(|&(name, lo, hi)| {
                let (lo, hi) = self.bounds(name, lo, hi);
                (name.to_string(), [lo, hi])
            })
            .collect()
    }

    fn draw<const K: usize>(
        &self,
        rng: &mut ChaCha8Rng,
        table: &[(&str, f64, f64); K],
    ) -> [f64; K] {
        let mut out = [0.0; K];
        for (k, &(name, lo, hi)) in table.iter().enumerate() {
            let u: f64 = rng.random();
            let (lo, hi) = self.bounds(name, lo, hi);
            out[k] = lo + u * (hi - lo);
        }
        out
    }
}

/// Draws the scenario in native units.
pub fn generate_scenario_file(spec: &ScenarioSpec) -> Result<ScenarioFile> {
    spec.validate()?;
    let mut devices = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let v = spec.draw(&mut device_rng(spec.seed, i), &DEVICE_PARAMS);
        let total = v[11] + v[12] + v[13];
        if !(total > 0.0) {
            return Err(Error::InvalidOverride {
                name: "theta_d".into(),
                reason: "weights must not all be zero".into(),
            });
        }
        devices.push(DeviceRecord {
            lambda_tasks_per_min: v[0],
            cycles_mcycles: v[1],
            input_kb: v[2],
            cpu_mhz: v[3],
            power_local_w: v[4],
            power_tx_w: v[5],
            channel_gain_db: v[6],
            service_var_s2: v[7],
            d_max_s: v[8],
            e_max_j: v[9],
            p_max_usd_per_s: v[10],
            theta_d: v[11] / total,
            theta_e: v[12] / total,
            theta_p: v[13] / total,
        });
    }
    let osps = (0..spec.n_cloud + spec.n_edge)
        .map(|j| {
            let v = spec.draw(&mut osp_rng(spec.seed, j), &OSP_PARAMS);
            let kind = if j < spec.n_cloud {
                OspKind::Cloud
            } else {
                OspKind::Edge
            };
            OspRecord {
                kind,
                rate_ghz: v[0],
                p_min_usd_per_gcycle: v[1],
                amplifiers: v[2],
            }
        })
        .collect();
    let v = spec.draw(&mut stream(spec.seed, NETWORK_STREAM), &NETWORK_PARAMS);
    let network = NetworkRecord {
        bandwidth_mhz: v[0],
        w0_w: v[1],
        fiber_gbps: v[2],
        prop_delay_s: v[3],
    };
    Ok(ScenarioFile {
        devices,
        osps,
        network,
    })
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<SystemScenario> {
    generate_scenario_file(spec)?.to_scenario()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let spec = ScenarioSpec::new(20, 1, 3, 5);
        let a = serde_json::to_string(&generate_scenario_file(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scenario_file(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adding_devices_keeps_existing_draws() {
        let small = generate_scenario_file(&ScenarioSpec::new(10, 1, 3, 9)).unwrap();
        let large = generate_scenario_file(&ScenarioSpec::new(30, 1, 3, 9)).unwrap();
        assert_eq!(small.devices[..], large.devices[..10]);
        assert_eq!(small.osps, large.osps);
    }

    #[test]
    fn fixed_override_applies_to_every_device() {
        let spec = ScenarioSpec::new(50, 1, 3, 1).fixed("power_tx_w", 0.4);
        let sc = generate_scenario(&spec).unwrap();
        assert!(sc.devices().iter().all(|d| d.power_tx == 0.4));
        assert_eq!(sc.m(), 50);
        assert_eq!(sc.n_cloud(), 1);
        assert_eq!(sc.n(), 4);
    }

    #[test]
    fn draws_respect_ranges_and_weights_normalize() {
        let file = generate_scenario_file(&ScenarioSpec::new(40, 2, 2, 3)).unwrap();
        for d in &file.devices {
            assert!((300.0..=450.0).contains(&d.cpu_mhz));
            assert!((20.0..=29.0).contains(&d.lambda_tasks_per_min));
            assert!((d.theta_d + d.theta_e + d.theta_p - 1.0).abs() < 1e-12);
        }
        for o in &file.osps {
            assert!((1.44..=2.9).contains(&o.rate_ghz));
        }
    }

    #[test]
    fn bad_overrides_rejected() {
        let unknown = ScenarioSpec::default().fixed("colour", 1.0);
        assert!(matches!(
            generate_scenario(&unknown),
            Err(Error::InvalidOverride { .. })
        ));
        let inverted = ScenarioSpec::default().with("cpu_mhz", Override::Range([450.0, 300.0]));
        assert!(matches!(
            generate_scenario(&inverted),
            Err(Error::InvalidOverride { .. })
        ));
    }
}

//! Scenario files in native units (tasks/min, Mcycles, Kb, MHz, dB).
//!
//! Field names carry their unit; every value is converted to SI exactly once
//! when the file is turned into a [`SystemScenario`]. Unknown fields are
//! rejected.
//!
//! ```json
//! {
//!   "devices": [{
//!     "lambda_tasks_per_min": 25.0, "cycles_mcycles": 300.0, "input_kb": 500.0,
//!     "cpu_mhz": 375.0, "power_local_w": 0.5, "power_tx_w": 0.4,
//!     "channel_gain_db": -50.0, "service_var_s2": 0.0,
//!     "d_max_s": 1.0, "e_max_j": 1.0, "p_max_usd_per_s": 0.1,
//!     "theta_d": 0.4, "theta_e": 0.3, "theta_p": 0.3
//!   }],
//!   "osps": [{ "kind": "cloud", "rate_ghz": 2.0, "p_min_usd_per_gcycle": 0.05, "amplifiers": 1.0 }],
//!   "network": { "bandwidth_mhz": 100.0, "w0_w": 1e-8, "fiber_gbps": 10.0, "prop_delay_s": 0.0 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeviceParams, NetworkParams, OspKind, OspParams, SystemScenario, Weights};
use crate::error::Result;

pub fn per_min_to_per_s(v: f64) -> f64 {
    v / 60.0
}

pub fn mega(v: f64) -> f64 {
    v * 1e6
}

pub fn giga(v: f64) -> f64 {
    v * 1e9
}

/// Kilobits to bits (1 Kb = 1000 bits).
pub fn kilo(v: f64) -> f64 {
    v * 1e3
}

/// $/Gcycle to $/cycle.
pub fn per_gcycle(v: f64) -> f64 {
    v / 1e9
}

/// Power ratio in dB to a linear gain. Integral dB values that are
/// multiples of 10 map to exact powers of ten.
pub fn db_to_linear(db: f64) -> f64 {
    let tenths = db / 10.0;
    if tenths.fract() == 0.0 && tenths.abs() < 300.0 {
        10f64.powi(tenths as i32)
    } else {
        10f64.powf(tenths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceRecord {
    pub lambda_tasks_per_min: f64,
    pub cycles_mcycles: f64,
    pub input_kb: f64,
    pub cpu_mhz: f64,
    pub power_local_w: f64,
    pub power_tx_w: f64,
    pub channel_gain_db: f64,
    pub service_var_s2: f64,
    pub d_max_s: f64,
    pub e_max_j: f64,
    pub p_max_usd_per_s: f64,
    pub theta_d: f64,
    pub theta_e: f64,
    pub theta_p: f64,
}

impl DeviceRecord {
    pub fn to_si(&self) -> DeviceParams {
        DeviceParams {
            lambda: per_min_to_per_s(self.lambda_tasks_per_min),
            cycles: mega(self.cycles_mcycles),
            input_bits: kilo(self.input_kb),
            cpu_rate: mega(self.cpu_mhz),
            power_local: self.power_local_w,
            power_tx: self.power_tx_w,
            channel_gain: db_to_linear(self.channel_gain_db),
            service_var: self.service_var_s2,
            d_max: self.d_max_s,
            e_max: self.e_max_j,
            p_max: self.p_max_usd_per_s,
            weights: Weights::new(self.theta_d, self.theta_e, self.theta_p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OspRecord {
    pub kind: OspKind,
    pub rate_ghz: f64,
    pub p_min_usd_per_gcycle: f64,
    #[serde(default = "default_amplifiers")]
    pub amplifiers: f64,
}

fn default_amplifiers() -> f64 {
    1.0
}

impl OspRecord {
    pub fn to_si(&self) -> OspParams {
        OspParams {
            kind: self.kind,
            service_rate: giga(self.rate_ghz),
            p_min: per_gcycle(self.p_min_usd_per_gcycle),
            amplifiers: self.amplifiers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub bandwidth_mhz: f64,
    pub w0_w: f64,
    pub fiber_gbps: f64,
    pub prop_delay_s: f64,
}

impl NetworkRecord {
    pub fn to_si(&self) -> NetworkParams {
        NetworkParams {
            bandwidth: mega(self.bandwidth_mhz),
            w0: self.w0_w,
            fiber_rate: giga(self.fiber_gbps),
            prop_delay: self.prop_delay_s,
        }
    }
}

/// A scenario in native units, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub devices: Vec<DeviceRecord>,
    pub osps: Vec<OspRecord>,
    pub network: NetworkRecord,
}

impl ScenarioFile {
    pub fn to_scenario(&self) -> Result<SystemScenario> {
        SystemScenario::new(
            self.devices.iter().map(DeviceRecord::to_si).collect(),
            self.osps.iter().map(OspRecord::to_si).collect(),
            self.network.to_si(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cost_breakdown, PriceVector, StrategyProfile};

    fn record() -> DeviceRecord {
        DeviceRecord {
            lambda_tasks_per_min: 25.0,
            cycles_mcycles: 300.0,
            input_kb: 500.0,
            cpu_mhz: 375.0,
            power_local_w: 0.5,
            power_tx_w: 0.4,
            channel_gain_db: -50.0,
            service_var_s2: 0.0,
            d_max_s: 1.0,
            e_max_j: 1.0,
            p_max_usd_per_s: 0.1,
            theta_d: 0.5,
            theta_e: 0.25,
            theta_p: 0.25,
        }
    }

    #[test]
    fn gain_of_minus_50_db() {
        assert_eq!(db_to_linear(-50.0), 1e-5);
        assert!((db_to_linear(-3.0) - 0.501187).abs() < 1e-6);
    }

    #[test]
    fn native_ingestion_matches_preconverted_si() {
        let file = ScenarioFile {
            devices: vec![record(), record()],
            osps: vec![
                OspRecord {
                    kind: OspKind::Cloud,
                    rate_ghz: 2.0,
                    p_min_usd_per_gcycle: 0.05,
                    amplifiers: 1.0,
                },
                OspRecord {
                    kind: OspKind::Edge,
                    rate_ghz: 1.5,
                    p_min_usd_per_gcycle: 0.05,
                    amplifiers: 1.0,
                },
            ],
            network: NetworkRecord {
                bandwidth_mhz: 100.0,
                w0_w: 1e-8,
                fiber_gbps: 10.0,
                prop_delay_s: 0.0,
            },
        };
        let from_file = file.to_scenario().unwrap();

        let si_dev = DeviceParams {
            lambda: 25.0 / 60.0,
            cycles: 3e8,
            input_bits: 5e5,
            cpu_rate: 3.75e8,
            power_local: 0.5,
            power_tx: 0.4,
            channel_gain: 1e-5,
            service_var: 0.0,
            d_max: 1.0,
            e_max: 1.0,
            p_max: 0.1,
            weights: Weights::new(0.5, 0.25, 0.25),
        };
        let si = SystemScenario::new(
            vec![si_dev.clone(), si_dev],
            vec![
                OspParams {
                    kind: OspKind::Cloud,
                    service_rate: 2e9,
                    p_min: 0.05 / 1e9,
                    amplifiers: 1.0,
                },
                OspParams {
                    kind: OspKind::Edge,
                    service_rate: 1.5e9,
                    p_min: 0.05 / 1e9,
                    amplifiers: 1.0,
                },
            ],
            NetworkParams {
                bandwidth: 1e8,
                w0: 1e-8,
                fiber_rate: 1e10,
                prop_delay: 0.0,
            },
        )
        .unwrap();
        assert_eq!(from_file, si);

        let profile = StrategyProfile::from_rows(vec![vec![0.25, 0.25], vec![0.1, 0.3]]).unwrap();
        let prices = PriceVector::per_gcycle(&[0.2, 0.1], &si).unwrap();
        for i in 0..2 {
            assert_eq!(
                cost_breakdown(&from_file, i, &profile, &prices).unwrap(),
                cost_breakdown(&si, i, &profile, &prices).unwrap()
            );
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let json = r#"{"devices": [], "osps": [], "network": {"bandwidth_mhz": 1, "w0_w": 0,
            "fiber_gbps": 1, "prop_delay_s": 0, "colour": "red"}}"#;
        assert!(serde_json::from_str::<ScenarioFile>(json).is_err());
    }
}

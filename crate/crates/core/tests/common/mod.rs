//! Shared fixtures and independent re-implementations used as oracles.
#![allow(dead_code)]

use mecgame::harness::{generate_scenario, ScenarioSpec};
use mecgame::{
    DeviceParams, NetworkParams, OspKind, OspParams, PriceVector, StrategyProfile, SystemScenario,
    Weights,
};

/// Midpoint device of the default ranges: 24.5 tasks/min, 300 Mcycles, 500 Kb, 375 MHz.
pub fn midpoint_device(weights: Weights) -> DeviceParams {
    DeviceParams {
        lambda: 24.5 / 60.0,
        cycles: 3e8,
        input_bits: 5e5,
        cpu_rate: 3.75e8,
        power_local: 0.5,
        power_tx: 0.55,
        channel_gain: 1e-5,
        service_var: 0.0,
        d_max: 1.0,
        e_max: 1.0,
        p_max: 0.1,
        weights,
    }
}

pub fn reference_net() -> NetworkParams {
    NetworkParams {
        bandwidth: 1e8,
        w0: 1e-8,
        fiber_rate: 1e10,
        prop_delay: 0.0,
    }
}

pub fn cloud(rate: f64) -> OspParams {
    OspParams {
        kind: OspKind::Cloud,
        service_rate: rate,
        p_min: 5e-11,
        amplifiers: 1.0,
    }
}

pub fn edge(rate: f64) -> OspParams {
    OspParams {
        kind: OspKind::Edge,
        service_rate: rate,
        p_min: 5e-11,
        amplifiers: 1.0,
    }
}

/// 50 devices, one cloud and three edge OSPs, 25 tasks/min, 0.4 W.
pub fn reference_scenario(seed: u64) -> SystemScenario {
    generate_scenario(&reference_spec(seed)).unwrap()
}

pub fn reference_spec(seed: u64) -> ScenarioSpec {
    ScenarioSpec::new(50, 1, 3, seed)
        .fixed("lambda_tasks_per_min", 25.0)
        .fixed("power_tx_w", 0.4)
}

pub fn follower_prices(sc: &SystemScenario) -> PriceVector {
    PriceVector::per_gcycle(&[0.2, 0.1, 0.1, 0.1], sc).unwrap()
}

/// Uplink rate written directly from the Shannon expression with
/// interference from every other device.
pub fn oracle_rate(sc: &SystemScenario, i: usize) -> f64 {
    let devs = sc.devices();
    let interference: f64 = devs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(_, d)| d.power_tx * d.channel_gain)
        .sum();
    let sinr = devs[i].power_tx * devs[i].channel_gain / (sc.net().w0 + interference);
    sc.net().bandwidth * (1.0 + sinr).log2()
}

/// (delay, energy, payment, disutility) transcribed term by term from the
/// queueing model: M/M/1 local CPU, M/G/1 uplink, backbone for cloud,
/// M/M/infinity cloud servers and M/M/1 edge servers.
pub fn oracle_costs(
    sc: &SystemScenario,
    i: usize,
    alpha: &StrategyProfile,
    prices: &PriceVector,
) -> (f64, f64, f64, f64) {
    let d = &sc.devices()[i];
    let r = oracle_rate(sc, i);
    let row = alpha.row(i);
    let s: f64 = row.iter().sum();
    let local_delay = d.cycles / (d.cpu_rate - (1.0 - s) * d.lambda * d.cycles);
    let s2 = d.service_var + (d.input_bits / r).powi(2);
    let wireless =
        d.lambda * s * s2 / (2.0 * (1.0 - d.lambda * s * d.input_bits / r)) + d.input_bits / r;
    let mut delay = (1.0 - s) * local_delay;
    let mut payment = 0.0;
    for (j, o) in sc.osps().iter().enumerate() {
        let per_task = match o.kind {
            OspKind::Cloud => {
                o.amplifiers * d.input_bits / sc.net().fiber_rate
                    + sc.net().prop_delay
                    + d.cycles / o.service_rate
            }
            OspKind::Edge => {
                let load: f64 = sc
                    .devices()
                    .iter()
                    .enumerate()
                    .map(|(k, dk)| dk.lambda * dk.cycles * alpha.get(k, j))
                    .sum();
                d.cycles / (o.service_rate - load)
            }
        };
        delay += row[j] * (wireless + per_task);
        payment += row[j] * prices.as_slice()[j] * d.cycles * d.lambda;
    }
    let energy = (1.0 - s) * d.power_local * local_delay + s * d.power_tx * wireless;
    let w = d.weights;
    let u = w.delay * delay / d.d_max + w.energy * energy / d.e_max + w.payment * payment / d.p_max;
    (delay, energy, payment, u)
}

/// Leader condition per device: (pi, theta, lhs, rhs, holds).
pub fn oracle_leader(sc: &SystemScenario, i: usize) -> (f64, f64, f64, f64, bool) {
    let d = &sc.devices()[i];
    let w = d.weights;
    let pre = d.p_max / (w.payment * d.lambda * d.cycles);
    let pi = pre * (w.delay / d.d_max + w.energy * d.power_local / d.e_max);
    let theta = pre * (w.delay / d.d_max + w.energy * d.power_tx / d.e_max);
    let gap = d.cpu_rate - d.lambda * d.cycles;
    let lhs =
        2.0 * pi * (d.cycles.powi(3) / gap.powi(3) + d.lambda * d.cycles.powi(4) / gap.powi(5));
    let r = oracle_rate(sc, i);
    let s_bar = d.service_var + (d.input_bits / r).powi(2);
    let rhs = theta * s_bar * d.input_bits / r;
    (pi, theta, lhs, rhs, lhs <= rhs)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

//! System model: devices, offloading service providers (OSPs), the queueing
//! cost model and the utility functions of both player classes.
//!
//! All quantities are SI internally: tasks/s, cycles, bits, cycles/s, W, J,
//! $/cycle and $/s. Native-unit scenario files are converted on ingestion by
//! [`units`].
//!
//! For device `i` with row `alpha_i` and `s = sum_j alpha_ij`:
//!
//! ```text
//! local    D_loc = c / (f_md - (1 - s) lambda c)                 (M/M/1)
//! uplink   r     = B log2(1 + eps_tx h / (w0 + sum_{k != i} eps_tx_k h_k))
//!          W     = lambda S2 s / (2 (1 - lambda z s / r)) + z / r (M/G/1, P-K)
//!          S2    = sigma^2 + (z / r)^2
//! wired    cloud: a z / R + t, edge: 0
//! compute  cloud: c / f_j (M/M/inf), edge: c / (f_j - L_j)       (M/M/1)
//! ```
//!
//! with `L_j = sum_k alpha_kj lambda_k c_k`. Delay, energy and payment then
//! combine into the weighted disutility `theta_d D/D_max + theta_e E/E_max +
//! theta_p P/P_max`.

pub mod units;

use serde::{Deserialize, Serialize};

use crate::error::{ConstraintTag, Error, Result};

/// Default stability margin: queue utilizations are kept at or below `1 - DELTA_STAB`.
pub const DELTA_STAB: f64 = 1e-4;

/// Tolerance used when comparing probabilities against their bounds.
pub const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub delay: f64,
    pub energy: f64,
    pub payment: f64,
}

impl Weights {
    pub fn new(delay: f64, energy: f64, payment: f64) -> Self {
        Self {
            delay,
            energy,
            payment,
        }
    }
}

/// Parameters of one IoT mobile device (a follower).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Task arrival rate (tasks/s).
    pub lambda: f64,
    /// Mean CPU cycles per task.
    pub cycles: f64,
    /// Mean input size per task (bits).
    pub input_bits: f64,
    /// Local CPU rate (cycles/s).
    pub cpu_rate: f64,
    /// Local computing power (W).
    pub power_local: f64,
    /// Transmission power (W).
    pub power_tx: f64,
    /// Linear channel gain.
    pub channel_gain: f64,
    /// Variance of the wireless service time (s^2).
    pub service_var: f64,
    /// Delay cap (s).
    pub d_max: f64,
    /// Energy cap (J).
    pub e_max: f64,
    /// Payment-rate cap ($/s).
    pub p_max: f64,
    pub weights: Weights,
}

impl DeviceParams {
    /// Offered compute load `lambda * c` in cycles/s.
    pub fn load(&self) -> f64 {
        self.lambda * self.cycles
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("device {index}: {what}")));
        let positive = [
            ("lambda", self.lambda),
            ("cycles", self.cycles),
            ("input_bits", self.input_bits),
            ("cpu_rate", self.cpu_rate),
            ("power_local", self.power_local),
            ("power_tx", self.power_tx),
            ("channel_gain", self.channel_gain),
            ("d_max", self.d_max),
            ("e_max", self.e_max),
            ("p_max", self.p_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.service_var.is_finite() && self.service_var >= 0.0) {
            return bad("service_var must be >= 0");
        }
        let w = self.weights;
        for (name, v) in [
            ("theta_d", w.delay),
            ("theta_e", w.energy),
            ("theta_p", w.payment),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if (w.delay + w.energy + w.payment - 1.0).abs() > 1e-12 {
            return bad("weights must sum to 1");
        }
        if self.load() >= self.cpu_rate {
            return bad("lambda * c must be below the local CPU rate");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OspKind {
    Cloud,
    Edge,
}

/// Parameters of one offloading service provider (a leader).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OspParams {
    pub kind: OspKind,
    /// Server service rate (cycles/s).
    pub service_rate: f64,
    /// Cost price ($/cycle).
    pub p_min: f64,
    /// Optical amplifiers on the backbone path; ignored for edge OSPs.
    pub amplifiers: f64,
}

impl OspParams {
    pub fn is_edge(&self) -> bool {
        self.kind == OspKind::Edge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Wireless bandwidth (Hz).
    pub bandwidth: f64,
    /// Background interference power (W).
    pub w0: f64,
    /// Backbone uplink rate (bits/s).
    pub fiber_rate: f64,
    /// Backbone propagation delay (s).
    pub prop_delay: f64,
}

/// Immutable description of a full edge-cloud system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemScenario {
    devices: Vec<DeviceParams>,
    osps: Vec<OspParams>,
    net: NetworkParams,
    rates: Vec<f64>,
}

impl SystemScenario {
    pub fn new(
        devices: Vec<DeviceParams>,
        osps: Vec<OspParams>,
        net: NetworkParams,
    ) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one device required".into(),
            ));
        }
        if osps.is_empty() {
            return Err(Error::InvalidParameter("at least one OSP required".into()));
        }
        for (i, d) in devices.iter().enumerate() {
            d.validate(i)?;
        }
        let mut seen_edge = false;
        for (j, o) in osps.iter().enumerate() {
            if !(o.service_rate.is_finite() && o.service_rate > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "osp {j}: service_rate must be > 0"
                )));
            }
            if !(o.p_min.is_finite() && o.p_min >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "osp {j}: p_min must be >= 0"
                )));
            }
            if !(o.amplifiers.is_finite() && o.amplifiers >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "osp {j}: amplifiers must be >= 0"
                )));
            }
            match o.kind {
                OspKind::Edge => seen_edge = true,
                OspKind::Cloud if seen_edge => {
                    return Err(Error::InvalidParameter(
                        "cloud OSPs must precede edge OSPs".into(),
                    ))
                }
                OspKind::Cloud => {}
            }
        }
        if !(net.bandwidth > 0.0 && net.fiber_rate > 0.0 && net.w0 >= 0.0 && net.prop_delay >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "network parameters out of range".into(),
            ));
        }
        let rates: Vec<f64> = (0..devices.len())
            .map(|i| shannon_rate(&devices, &net, i))
            .collect();
        if let Some(i) = rates.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "device {i}: uplink rate is not positive"
            )));
        }
        Ok(Self {
            devices,
            osps,
            net,
            rates,
        })
    }

    pub fn devices(&self) -> &[DeviceParams] {
        &self.devices
    }

    pub fn device(&self, i: usize) -> &DeviceParams {
        &self.devices[i]
    }

    pub fn osps(&self) -> &[OspParams] {
        &self.osps
    }

    pub fn net(&self) -> &NetworkParams {
        &self.net
    }

    /// Number of devices `M`.
    pub fn m(&self) -> usize {
        self.devices.len()
    }

    /// Number of OSPs `N`.
    pub fn n(&self) -> usize {
        self.osps.len()
    }

    pub fn n_cloud(&self) -> usize {
        self.osps.iter().filter(|o| !o.is_edge()).count()
    }

    /// Cached uplink rate of device `i` (bits/s).
    pub fn rate(&self, i: usize) -> f64 {
        self.rates[i]
    }

    /// Cost prices of all OSPs.
    pub fn min_prices(&self) -> PriceVector {
        PriceVector(self.osps.iter().map(|o| o.p_min).collect())
    }

    /// Compute load routed to OSP `j` by every device except `skip`.
    pub fn column_load(&self, profile: &StrategyProfile, j: usize, skip: Option<usize>) -> f64 {
        let mut load = 0.0;
        for (k, d) in self.devices.iter().enumerate() {
            if Some(k) != skip {
                load += profile.get(k, j) * d.load();
            }
        }
        load
    }

    /// Same scenario with device `i`'s parameters replaced.
    pub fn with_device(&self, i: usize, device: DeviceParams) -> Result<Self> {
        let mut devices = self.devices.clone();
        devices[i] = device;
        Self::new(devices, self.osps.clone(), self.net.clone())
    }

    /// Same scenario with devices reordered: new device `k` is old device `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let devices = perm.iter().map(|&k| self.devices[k].clone()).collect();
        Self::new(devices, self.osps.clone(), self.net.clone())
    }
}

fn shannon_rate(devices: &[DeviceParams], net: &NetworkParams, i: usize) -> f64 {
    let mut interference = net.w0;
    for (k, d) in devices.iter().enumerate() {
        if k != i {
            interference += d.power_tx * d.channel_gain;
        }
    }
    let d = &devices[i];
    net.bandwidth * (1.0 + d.power_tx * d.channel_gain / interference).log2()
}

/// Offloading probabilities of all devices, row-major `M x N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StrategyProfile {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl StrategyProfile {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            data: vec![0.0; m * n],
        }
    }

    /// Builds a profile from rows. Only the shape is checked; probability
    /// constraints are reported by [`check_feasible`].
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter(
                "profile must be a non-empty rectangular matrix".into(),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "profile entries must be finite".into(),
            ));
        }
        Ok(Self {
            m,
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        self.data[i * self.n..(i + 1) * self.n].copy_from_slice(row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Rows permuted so that new row `k` is old row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.m, self.n);
        for (k, &src) in perm.iter().enumerate() {
            out.set_row(k, self.row(src));
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for StrategyProfile {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<StrategyProfile> for Vec<Vec<f64>> {
    fn from(p: StrategyProfile) -> Self {
        p.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Unit prices announced by the OSPs ($/cycle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(pub Vec<f64>);

impl PriceVector {
    /// Validates the prices against the scenario's cost prices.
    pub fn new(prices: Vec<f64>, scenario: &SystemScenario) -> Result<Self> {
        if prices.len() != scenario.n() {
            return Err(Error::InvalidParameter(format!(
                "expected {} prices, got {}",
                scenario.n(),
                prices.len()
            )));
        }
        for (j, (p, o)) in prices.iter().zip(scenario.osps()).enumerate() {
            if !(p.is_finite() && *p >= o.p_min) {
                return Err(Error::InvalidParameter(format!(
                    "price of OSP {j} ({p:e} $/cycle) below its cost price {:e}",
                    o.p_min
                )));
            }
        }
        Ok(Self(prices))
    }

    /// Prices given in $/Gcycle.
    pub fn per_gcycle(prices: &[f64], scenario: &SystemScenario) -> Result<Self> {
        Self::new(prices.iter().map(|p| p / 1e9).collect(), scenario)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|p| p * factor).collect())
    }
}

impl std::ops::Index<usize> for PriceVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Expected per-device costs at a given profile and price vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Uplink rate (bits/s).
    pub rate: f64,
    /// Expected delay per task (s).
    pub delay: f64,
    /// Expected energy per task (J).
    pub energy: f64,
    /// Expected payment rate ($/s).
    pub payment: f64,
    pub disutility: f64,
}

/// Stability margins and tolerances used by [`check_feasible`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// Queue utilizations must stay at or below `1 - delta_stab`.
    pub delta_stab: f64,
    /// Absolute slack allowed on every normalized constraint.
    pub tol: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            delta_stab: DELTA_STAB,
            tol: FEAS_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tag: ConstraintTag,
    pub device: Option<usize>,
    pub osp: Option<usize>,
    /// Amount by which the normalized constraint is exceeded.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            feasible: violations.is_empty(),
            violations,
        }
    }

    /// No violation of C1-C5: the cost model is defined everywhere.
    pub fn is_stable(&self) -> bool {
        self.violations.iter().all(|v| v.tag.is_cap())
    }

    pub fn has(&self, tag: ConstraintTag) -> bool {
        self.violations.iter().any(|v| v.tag == tag)
    }

    pub fn tags(&self) -> Vec<ConstraintTag> {
        let mut tags: Vec<_> = self.violations.iter().map(|v| v.tag).collect();
        tags.sort();
        tags.dedup();
        tags
    }
}

/// Everything device `i` needs to evaluate its own costs: its parameters
/// and the load other devices place on each OSP.
#[derive(Debug, Clone)]
pub struct DeviceView<'a> {
    pub(crate) index: usize,
    pub(crate) dev: &'a DeviceParams,
    pub(crate) osps: &'a [OspParams],
    pub(crate) net: &'a NetworkParams,
    pub(crate) rate: f64,
    pub(crate) others_load: Vec<f64>,
    pub(crate) prices: &'a [f64],
}

/// Intermediate quantities shared by cost and derivative evaluation.
#[derive(Debug, Clone)]
pub(crate) struct RowState {
    pub s: f64,
    /// Local queue headroom `f_md - (1 - s) lambda c`.
    pub local_headroom: f64,
    /// Uplink utilization `lambda z s / r`.
    pub rho: f64,
    /// Second moment of the wireless service time.
    pub s2: f64,
    /// Edge headroom `f_j - L_j` per OSP (unused for cloud columns).
    pub edge_headroom: Vec<f64>,
}

impl<'a> DeviceView<'a> {
    pub fn new(
        scenario: &'a SystemScenario,
        i: usize,
        profile: &StrategyProfile,
        prices: &'a PriceVector,
    ) -> Self {
        let others_load = (0..scenario.n())
            .map(|j| scenario.column_load(profile, j, Some(i)))
            .collect();
        Self::with_others_load(scenario, i, others_load, prices)
    }

    pub fn with_others_load(
        scenario: &'a SystemScenario,
        i: usize,
        others_load: Vec<f64>,
        prices: &'a PriceVector,
    ) -> Self {
        Self {
            index: i,
            dev: scenario.device(i),
            osps: scenario.osps(),
            net: scenario.net(),
            rate: scenario.rate(i),
            others_load,
            prices: prices.as_slice(),
        }
    }

    pub fn device(&self) -> &DeviceParams {
        self.dev
    }

    pub fn others_load(&self) -> &[f64] {
        &self.others_load
    }

    pub fn n(&self) -> usize {
        self.osps.len()
    }

    fn unstable(&self, constraint: ConstraintTag, osp: Option<usize>, utilization: f64) -> Error {
        Error::StabilityViolation {
            constraint,
            device: self.index,
            osp,
            utilization,
        }
    }

    pub(crate) fn state(&self, row: &[f64]) -> Result<RowState> {
        let d = self.dev;
        let s: f64 = row.iter().sum();
        let local_headroom = d.cpu_rate - (1.0 - s) * d.load();
        if !(local_headroom > 0.0) {
            return Err(self.unstable(ConstraintTag::C3, None, (1.0 - s) * d.load() / d.cpu_rate));
        }
        let rho = d.lambda * d.input_bits * s / self.rate;
        if !(rho < 1.0) {
            return Err(self.unstable(ConstraintTag::C4, None, rho));
        }
        let mut edge_headroom = vec![f64::INFINITY; row.len()];
        for (j, o) in self.osps.iter().enumerate() {
            if o.is_edge() {
                let load = self.others_load[j] + row[j] * d.load();
                let head = o.service_rate - load;
                if !(head > 0.0) {
                    return Err(self.unstable(ConstraintTag::C5, Some(j), load / o.service_rate));
                }
                edge_headroom[j] = head;
            }
        }
        let service = d.input_bits / self.rate;
        Ok(RowState {
            s,
            local_headroom,
            rho,
            s2: d.service_var + service * service,
            edge_headroom,
        })
    }

    /// Mean wireless sojourn time per offloaded task (waiting plus service).
    pub(crate) fn wireless_delay(&self, st: &RowState) -> f64 {
        let d = self.dev;
        d.lambda * st.s2 * st.s / (2.0 * (1.0 - st.rho)) + d.input_bits / self.rate
    }

    /// Backbone delay to OSP `j` (zero for edge OSPs).
    pub(crate) fn wired_delay(&self, j: usize) -> f64 {
        let o = &self.osps[j];
        if o.is_edge() {
            0.0
        } else {
            o.amplifiers * self.dev.input_bits / self.net.fiber_rate + self.net.prop_delay
        }
    }

    pub(crate) fn compute_delay(&self, j: usize, st: &RowState) -> f64 {
        let o = &self.osps[j];
        if o.is_edge() {
            self.dev.cycles / st.edge_headroom[j]
        } else {
            self.dev.cycles / o.service_rate
        }
    }

    pub fn breakdown(&self, row: &[f64]) -> Result<CostBreakdown> {
        let d = self.dev;
        let st = self.state(row)?;
        let local_share = 1.0 - st.s;
        let local_delay = d.cycles / st.local_headroom;
        let wireless = self.wireless_delay(&st);

        let mut delay = local_share * local_delay;
        let mut payment = 0.0;
        for (j, &a) in row.iter().enumerate() {
            delay += a * (wireless + self.wired_delay(j) + self.compute_delay(j, &st));
            payment += a * self.prices[j] * d.cycles * d.lambda;
        }
        let energy = local_share * d.power_local * local_delay + st.s * d.power_tx * wireless;
        let w = d.weights;
        let disutility =
            w.delay * delay / d.d_max + w.energy * energy / d.e_max + w.payment * payment / d.p_max;
        Ok(CostBreakdown {
            rate: self.rate,
            delay,
            energy,
            payment,
            disutility,
        })
    }

    pub fn disutility(&self, row: &[f64]) -> Result<f64> {
        self.breakdown(row).map(|b| b.disutility)
    }
}

/// Uplink rate of device `i` (bits/s). Independent of strategies and prices.
pub fn uplink_rate(scenario: &SystemScenario, i: usize) -> f64 {
    scenario.rate(i)
}

pub fn cost_breakdown(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> Result<CostBreakdown> {
    DeviceView::new(scenario, i, profile, prices).breakdown(profile.row(i))
}

pub fn disutility(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> Result<f64> {
    cost_breakdown(scenario, i, profile, prices).map(|b| b.disutility)
}

/// Revenue rate of OSP `j` ($/s).
pub fn osp_utility(
    scenario: &SystemScenario,
    j: usize,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> f64 {
    prices[j] * scenario.column_load(profile, j, None)
}

/// Mean disutility over all devices, or the first stability error.
pub fn mean_disutility(
    scenario: &SystemScenario,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..scenario.m() {
        total += disutility(scenario, i, profile, prices)?;
    }
    Ok(total / scenario.m() as f64)
}

/// Evaluates C1-C8 for every device. Stability constraints use the
/// `1 - delta_stab` utilization margin; caps are only evaluated for devices
/// whose queues are stable.
pub fn check_feasible(
    scenario: &SystemScenario,
    profile: &StrategyProfile,
    prices: &PriceVector,
    margins: &Margins,
) -> FeasibilityReport {
    let mut out = Vec::new();
    let cap = 1.0 - margins.delta_stab;
    let tol = margins.tol;
    if profile.m() != scenario.m() || profile.n() != scenario.n() {
        out.push(Violation {
            tag: ConstraintTag::C1,
            device: None,
            osp: None,
            margin: f64::INFINITY,
        });
        return FeasibilityReport::from_violations(out);
    }
    let mut push = |tag, device, osp, excess: f64| {
        if excess > tol {
            out.push(Violation {
                tag,
                device,
                osp,
                margin: excess,
            });
        }
    };
    let mut stable = vec![true; scenario.m()];
    for (i, d) in scenario.devices().iter().enumerate() {
        let row = profile.row(i);
        let s: f64 = row.iter().sum();
        push(ConstraintTag::C1, Some(i), None, (s - 1.0).max(-s));
        for (j, &a) in row.iter().enumerate() {
            push(ConstraintTag::C2, Some(i), Some(j), (a - 1.0).max(-a));
        }
        let local_util = (1.0 - s) * d.load() / d.cpu_rate;
        let radio_util = d.lambda * d.input_bits * s / scenario.rate(i);
        if local_util - cap > tol {
            stable[i] = false;
        }
        if radio_util - cap > tol {
            stable[i] = false;
        }
        push(ConstraintTag::C3, Some(i), None, local_util - cap);
        push(ConstraintTag::C4, Some(i), None, radio_util - cap);
    }
    for (j, o) in scenario.osps().iter().enumerate() {
        if o.is_edge() {
            let util = scenario.column_load(profile, j, None) / o.service_rate;
            if util - cap > tol {
                stable.iter_mut().for_each(|s| *s = false);
            }
            push(ConstraintTag::C5, None, Some(j), util - cap);
        }
    }
    for (i, d) in scenario.devices().iter().enumerate() {
        if !stable[i] {
            continue;
        }
        if let Ok(b) = cost_breakdown(scenario, i, profile, prices) {
            push(ConstraintTag::C6, Some(i), None, b.delay / d.d_max - 1.0);
            push(ConstraintTag::C7, Some(i), None, b.energy / d.e_max - 1.0);
            push(ConstraintTag::C8, Some(i), None, b.payment / d.p_max - 1.0);
        }
    }
    FeasibilityReport::from_violations(out)
}

//! Analytic first and second derivatives of a device's delay, energy,
//! payment and disutility with respect to its own offloading row.
//!
//! With `s = sum_j alpha_j`, `u = f_md - (1 - s) lambda c`, `rho = lambda z s / r`
//! and `H_x = f_x - L_x` the headroom of edge server `x`:
//!
//! ```text
//! Gamma   = 2 lambda c^2 / u^2 + (1 - s) 2 lambda^2 c^3 / u^3
//! Upsilon = lambda S2 / (1 - rho)^2 + s z S2 lambda^2 / (r (1 - rho)^3)
//! Psi_x   = 2 lambda c^2 / H_x^2 + alpha_x 2 lambda^2 c^3 / H_x^3      (edge only)
//!
//! d2D/da_x da_y = Gamma + Upsilon (+ Psi_x on the edge diagonal)
//! d2E/da_x da_y = eps_local Gamma + eps_tx Upsilon
//! d2P/da_x da_y = 0
//! ```

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{DeviceView, PriceVector, RowState, StrategyProfile, SystemScenario};

/// Gradient of the disutility with respect to the device's own row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTerms {
    pub gamma: f64,
    pub upsilon: f64,
    /// Zero on cloud columns.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub h: DMatrix<f64>,
}

impl Hessian {
    pub fn min_eigenvalue(&self) -> f64 {
        self.h.clone().symmetric_eigenvalues().min()
    }
}

/// First derivatives of each cost component plus the curvature terms.
#[derive(Debug, Clone)]
pub(crate) struct RowDerivs {
    pub grad_delay: Vec<f64>,
    pub grad_energy: Vec<f64>,
    pub grad_payment: Vec<f64>,
    pub curvature: CurvatureTerms,
}

impl RowDerivs {
    pub fn grad_disutility(&self, view: &DeviceView<'_>) -> Vec<f64> {
        let d = view.device();
        let w = d.weights;
        (0..self.grad_delay.len())
            .map(|j| {
                w.delay * self.grad_delay[j] / d.d_max
                    + w.energy * self.grad_energy[j] / d.e_max
                    + w.payment * self.grad_payment[j] / d.p_max
            })
            .collect()
    }
}

impl DeviceView<'_> {
    fn curvature_at(&self, row: &[f64], st: &RowState) -> CurvatureTerms {
        let d = self.dev;
        let (lambda, c, z, r) = (d.lambda, d.cycles, d.input_bits, self.rate);
        let local = 1.0 - st.s;
        let u = st.local_headroom;
        let gamma =
            2.0 * lambda * c * c / (u * u) + local * 2.0 * lambda * lambda * c.powi(3) / u.powi(3);
        let one_rho = 1.0 - st.rho;
        let upsilon = lambda * st.s2 / (one_rho * one_rho)
            + st.s * z * st.s2 * lambda * lambda / (r * one_rho.powi(3));
        let psi = self
            .osps
            .iter()
            .enumerate()
            .map(|(x, o)| {
                if o.is_edge() {
                    let h = st.edge_headroom[x];
                    2.0 * lambda * c * c / (h * h)
                        + row[x] * 2.0 * lambda * lambda * c.powi(3) / h.powi(3)
                } else {
                    0.0
                }
            })
            .collect();
        CurvatureTerms {
            gamma,
            upsilon,
            psi,
        }
    }

    pub(crate) fn derivs(&self, row: &[f64]) -> Result<RowDerivs> {
        let st = self.state(row)?;
        let d = self.dev;
        let (lambda, c, z, r) = (d.lambda, d.cycles, d.input_bits, self.rate);
        let u = st.local_headroom;
        let kappa = lambda * z / r;
        let one_rho = 1.0 - st.rho;

        // d/ds of (1 - s) c / u and of s * W(s).
        let local_slope = -c / u - (1.0 - st.s) * c * d.load() / (u * u);
        let radio_slope =
            lambda * st.s2 * st.s * (2.0 - kappa * st.s) / (2.0 * one_rho * one_rho) + z / r;

        let n = row.len();
        let mut grad_delay = Vec::with_capacity(n);
        let mut grad_payment = Vec::with_capacity(n);
        for (j, o) in self.osps.iter().enumerate() {
            let compute = if o.is_edge() {
                let h = st.edge_headroom[j];
                c / h + row[j] * c * d.load() / (h * h)
            } else {
                c / o.service_rate
            };
            grad_delay.push(local_slope + radio_slope + self.wired_delay(j) + compute);
            grad_payment.push(self.prices[j] * c * lambda);
        }
        let grad_energy = vec![d.power_local * local_slope + d.power_tx * radio_slope; n];
        let curvature = self.curvature_at(row, &st);
        Ok(RowDerivs {
            grad_delay,
            grad_energy,
            grad_payment,
            curvature,
        })
    }

    pub fn curvature(&self, row: &[f64]) -> Result<CurvatureTerms> {
        let st = self.state(row)?;
        Ok(self.curvature_at(row, &st))
    }

    pub fn gradient(&self, row: &[f64]) -> Result<Gradient> {
        Ok(Gradient {
            g: self.derivs(row)?.grad_disutility(self),
        })
    }

    /// Delay Hessian: `Gamma + Upsilon` everywhere plus `Psi_x` on edge diagonals.
    pub(crate) fn delay_hessian(k: &CurvatureTerms) -> DMatrix<f64> {
        let n = k.psi.len();
        let mut h = DMatrix::from_element(n, n, k.gamma + k.upsilon);
        for x in 0..n {
            h[(x, x)] += k.psi[x];
        }
        h
    }

    pub(crate) fn energy_hessian(&self, k: &CurvatureTerms) -> DMatrix<f64> {
        let n = k.psi.len();
        DMatrix::from_element(
            n,
            n,
            self.dev.power_local * k.gamma + self.dev.power_tx * k.upsilon,
        )
    }

    pub fn hessian(&self, row: &[f64]) -> Result<Hessian> {
        let k = self.curvature(row)?;
        let d = self.dev;
        let w = d.weights;
        let h = Self::delay_hessian(&k) * (w.delay / d.d_max)
            + self.energy_hessian(&k) * (w.energy / d.e_max);
        Ok(Hessian { h })
    }
}

pub fn grad_disutility(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
    prices: &PriceVector,
) -> Result<Gradient> {
    DeviceView::new(scenario, i, profile, prices).gradient(profile.row(i))
}

pub fn curvature_terms(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
) -> Result<CurvatureTerms> {
    let prices = scenario.min_prices();
    DeviceView::new(scenario, i, profile, &prices).curvature(profile.row(i))
}

/// Hessian of the disutility in device `i`'s own row. Prices do not enter
/// because payment is linear in the row.
pub fn hessian_disutility(
    scenario: &SystemScenario,
    i: usize,
    profile: &StrategyProfile,
) -> Result<Hessian> {
    let prices = scenario.min_prices();
    DeviceView::new(scenario, i, profile, &prices).hessian(profile.row(i))
}

//! Batch bioreactor with substrate-inhibited (Haldane) growth kinetics.
//!
//! States are biomass X, substrate S, and product P:
//!   dX/dt =  mu(S, eta) X
//!   dS/dt = -mu(S, eta) X / Y_xs
//!   dP/dt =  Y_px mu(S, eta) X
//! with growth rate mu = mu_max * S / (K_s + S + S^2/K_i) * eta. The mixing
//! efficiency eta degrades over the batch: its expected value slides from
//! eta_0 to eta_f along a logistic curve in the sample index, and the
//! realized eta_t is a Gaussian draw around that mean. The filters treat
//! eta as the single unknown parameter; only P is measured.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::StateSpaceModel;
use crate::ode::{rk4_jacobian, rk4_step};

/// Kinetic and degradation constants of the benchmark reactor.
#[derive(Debug, Clone, PartialEq)]
pub struct BioreactorParams {
    /// Maximum specific growth rate (1/h).
    pub mu_max: f64,
    /// Substrate affinity constant (g/L).
    pub ks: f64,
    /// Substrate inhibition constant (g/L).
    pub ki: f64,
    /// Biomass-per-substrate yield.
    pub y_xs: f64,
    /// Product-per-biomass yield.
    pub y_px: f64,
    /// Initial mixing efficiency.
    pub eta0: f64,
    /// Final (degraded) mixing efficiency.
    pub eta_f: f64,
    /// Slope of the logistic degradation profile (per step).
    pub alpha: f64,
    /// Offset of the logistic degradation profile.
    pub beta: f64,
}

impl Default for BioreactorParams {
    fn default() -> Self {
        Self {
            mu_max: 0.4,
            ks: 0.1,
            ki: 10.0,
            y_xs: 0.5,
            y_px: 0.6,
            eta0: 1.0,
            eta_f: 0.6,
            alpha: 0.05,
            beta: 5.0,
        }
    }
}

/// Haldane growth rate mu = mu_max * S / (K_s + S + S^2/K_i) * eta.
pub fn haldane_growth(s: f64, eta: f64, params: &BioreactorParams) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::Domain {
            what: "substrate concentration",
            value: s,
        });
    }
    Ok(params.mu_max * s / (params.ks + s + s * s / params.ki) * eta)
}

/// Growth rate with substrate saturated at zero, used inside vector fields
/// where noise or an exploring particle can push S slightly negative.
fn haldane_clamped(s: f64, eta: f64, params: &BioreactorParams) -> f64 {
    let s = s.max(0.0);
    params.mu_max * s / (params.ks + s + s * s / params.ki) * eta
}

/// Continuous-time reactor vector field at state x = (X, S, P).
pub fn bioreactor_derivative(x: &DVector<f64>, eta: f64, params: &BioreactorParams) -> DVector<f64> {
    let mu = haldane_clamped(x[1], eta, params);
    let growth = mu * x[0];
    DVector::from_row_slice(&[growth, -growth / params.y_xs, params.y_px * growth])
}

/// Analytic Jacobian of [`bioreactor_derivative`] with respect to x.
pub fn bioreactor_jacobian(x: &DVector<f64>, eta: f64, params: &BioreactorParams) -> DMatrix<f64> {
    let s = x[1];
    let (mu, dmu_ds) = if s > 0.0 {
        let denom = params.ks + s + s * s / params.ki;
        let mu = params.mu_max * s / denom * eta;
        let dmu = params.mu_max * eta * (params.ks - s * s / params.ki) / (denom * denom);
        (mu, dmu)
    } else {
        // Saturated branch: field is constant zero in S below the clamp.
        (0.0, 0.0)
    };
    let top = [mu, x[0] * dmu_ds, 0.0];
    let mut j = DMatrix::zeros(3, 3);
    for c in 0..3 {
        j[(0, c)] = top[c];
        j[(1, c)] = -top[c] / params.y_xs;
        j[(2, c)] = params.y_px * top[c];
    }
    j
}

/// Expected mixing efficiency at sample index `t`:
/// (1 - sigma(alpha t - beta)) eta0 + sigma(alpha t - beta) eta_f.
pub fn eta_mean(t: f64, eta0: f64, eta_f: f64, alpha: f64, beta: f64) -> f64 {
    let sig = 1.0 / (1.0 + libm::exp(-(alpha * t - beta)));
    (1.0 - sig) * eta0 + sig * eta_f
}

/// RK4-discretized reactor as seen by the filters: theta = (eta,),
/// measurement is the product concentration P.
#[derive(Debug, Clone)]
pub struct BioreactorModel {
    pub params: BioreactorParams,
    pub ts: f64,
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
}

impl BioreactorModel {
    pub fn new(params: BioreactorParams, ts: f64, q: f64, r: f64) -> Self {
        Self {
            params,
            ts,
            process_cov: DMatrix::identity(3, 3) * q,
            measurement_cov: DMatrix::from_element(1, 1, r),
        }
    }
}

impl StateSpaceModel for BioreactorModel {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }

    fn transition(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let p = &self.params;
        rk4_step(
            |x, _, th| bioreactor_derivative(x, th[0], p),
            x,
            u,
            theta,
            self.ts,
        )
    }

    fn measurement(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x[2]))
    }

    fn process_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.process_cov.clone()
    }

    fn measurement_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.measurement_cov.clone()
    }

    fn transition_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        let p = &self.params;
        let j = rk4_jacobian(
            |x, _, th| bioreactor_derivative(x, th[0], p),
            |x, _, th| bioreactor_jacobian(x, th[0], p),
            x,
            u,
            theta,
            self.ts,
        )?;
        Ok(Some(j))
    }

    fn measurement_jacobian(
        &self,
        _x: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0])))
    }
}

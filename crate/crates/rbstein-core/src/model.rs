//! Discrete-time state-space model interface.
//!
//! A model is x_{t+1} = f(x_t, u_t, theta) + w,  y_t = h(x_t, theta) + v,
//! with w ~ N(0, Q(theta)) and v ~ N(0, R(theta)). `theta` arrives in model
//! space (constrained); reparameterization is the caller's concern, see
//! [`crate::theta`].

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::theta::SlotTransform;

/// Nonlinear discrete-time state-space model with Gaussian noise.
///
/// Jacobian methods may return `Ok(None)`, in which case the filter falls
/// back to central finite differences.
pub trait StateSpaceModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Per-slot reparameterization for this model's parameter vector.
    fn theta_transform(&self) -> Vec<SlotTransform> {
        alloc::vec![SlotTransform::Identity; self.param_dim()]
    }

    /// State transition map f.
    fn transition(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    /// Measurement map h.
    fn measurement(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// Process noise covariance Q(theta).
    fn process_cov(&self, theta: &DVector<f64>) -> DMatrix<f64>;

    /// Measurement noise covariance R(theta).
    fn measurement_cov(&self, theta: &DVector<f64>) -> DMatrix<f64>;

    /// d f / d x, if available in closed form.
    fn transition_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }

    /// d h / d x, if available in closed form.
    fn measurement_jacobian(
        &self,
        _x: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }
}

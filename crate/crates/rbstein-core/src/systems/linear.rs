//! Linear-Gaussian test models with analytic Jacobians.
//!
//! These are the ground-truth workhorses: on them the EKF is exact, the
//! parameter posterior is computable on a grid, and every filter can be
//! checked against a closed-form Kalman recursion.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::StateSpaceModel;

/// Scalar AR(1): x' = theta x + w, y = x + v.
#[derive(Debug, Clone)]
pub struct Ar1Model {
    pub q: f64,
    pub r: f64,
}

impl StateSpaceModel for Ar1Model {
    fn state_dim(&self) -> usize {
        1
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
        _u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, theta[0] * x[0]))
    }

    fn measurement(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x.clone())
    }

    fn process_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.q)
    }

    fn measurement_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }

    fn transition_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(DMatrix::from_element(1, 1, theta[0])))
    }

    fn measurement_jacobian(
        &self,
        _x: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(DMatrix::identity(1, 1)))
    }
}

/// Two-state position/velocity chain with parameterized velocity decay:
/// x' = [[1, ts], [0, theta]] x + w, y = x1 + v.
#[derive(Debug, Clone)]
pub struct DampedIntegratorModel {
    pub ts: f64,
    pub q: f64,
    pub r: f64,
}

impl DampedIntegratorModel {
    fn a(&self, theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, self.ts, 0.0, theta])
    }
}

impl StateSpaceModel for DampedIntegratorModel {
    fn state_dim(&self) -> usize {
        2
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
        _u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.a(theta[0]) * x)
    }

    fn measurement(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x[0]))
    }

    fn process_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.q
    }

    fn measurement_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }

    fn transition_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(self.a(theta[0])))
    }

    fn measurement_jacobian(
        &self,
        _x: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_transition_scales_state() {
        let m = Ar1Model { q: 0.1, r: 0.2 };
        let x = DVector::from_element(1, 3.0);
        let theta = DVector::from_element(1, 0.5);
        let next = m.transition(&x, &DVector::zeros(0), &theta).unwrap();
        assert_eq!(next[0], 1.5);
    }

    #[test]
    fn damped_integrator_matrix_form() {
        let m = DampedIntegratorModel {
            ts: 0.1,
            q: 0.01,
            r: 0.1,
        };
        let x = DVector::from_row_slice(&[1.0, 2.0]);
        let theta = DVector::from_element(1, 0.9);
        let next = m.transition(&x, &DVector::zeros(0), &theta).unwrap();
        assert!((next[0] - 1.2).abs() < 1e-15);
        assert!((next[1] - 1.8).abs() < 1e-15);
    }
}

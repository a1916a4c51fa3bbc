//! Three-state nonlinear benchmark for online network training.
//!
//! The true plant is a chain of integrators with a nonlinear feedback term:
//!   dx1/dt = x2
//!   dx2/dt = x3
//!   dx3/dt = -2 x1 - 3 x2 - 4 x3 + u + f_nl(x)
//!   f_nl(x) = x1 e^{x3} + 0.2 sin(x2 x3) + x3 + x2
//! Only x1 is measured. Two filter-side models are provided: a baseline that
//! drops f_nl entirely (treating it as process noise) and an augmented model
//! where f_nl is replaced by an MLP whose weights, together with the log of
//! the measurement variance, form the parameter vector.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::mlp::MlpSpec;
use crate::model::StateSpaceModel;
use crate::ode::{rk4_jacobian, rk4_step};
use crate::theta::SlotTransform;

/// The unmodeled nonlinearity f_nl.
pub fn nn_nonlinear_term(x: &DVector<f64>) -> f64 {
    x[0] * libm::exp(x[2]) + 0.2 * libm::sin(x[1] * x[2]) + x[2] + x[1]
}

/// True plant vector field; `u` is the scalar input.
pub fn nn_true_derivative(x: &DVector<f64>, u: f64) -> DVector<f64> {
    DVector::from_row_slice(&[
        x[1],
        x[2],
        -2.0 * x[0] - 3.0 * x[1] - 4.0 * x[2] + u + nn_nonlinear_term(x),
    ])
}

/// Multi-sine excitation used by the benchmark, evaluated at time t (s).
pub fn nn_benchmark_input(t: f64) -> f64 {
    libm::sin(0.5 * t) + 0.5 * libm::sin(1.3 * t)
}

fn linear_part(x: &DVector<f64>, u: f64) -> DVector<f64> {
    DVector::from_row_slice(&[
        x[1],
        x[2],
        -2.0 * x[0] - 3.0 * x[1] - 4.0 * x[2] + u,
    ])
}

const LINEAR_JAC: [f64; 9] = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -2.0, -3.0, -4.0];

/// Baseline filter model: linear part only, known noise covariances,
/// no parameters. The missing f_nl shows up as unmodeled process noise.
#[derive(Debug, Clone)]
pub struct NnLinearBaseline {
    pub ts: f64,
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
}

impl NnLinearBaseline {
    pub fn new(ts: f64, q: f64, r: f64) -> Self {
        Self {
            ts,
            process_cov: DMatrix::identity(3, 3) * q,
            measurement_cov: DMatrix::from_element(1, 1, r),
        }
    }
}

impl StateSpaceModel for NnLinearBaseline {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        0
    }

    fn transition(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        rk4_step(|x, u, _| linear_part(x, u[0]), x, u, theta, self.ts)
    }

    fn measurement(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x[0]))
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
        let j = rk4_jacobian(
            |x, u, _| linear_part(x, u[0]),
            |_, _, _| DMatrix::from_row_slice(3, 3, &LINEAR_JAC),
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
        Ok(Some(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])))
    }
}

/// Augmented filter model: the linear part plus an MLP standing in for f_nl.
///
/// theta = (41 MLP weights, log measurement variance), so the filter learns
/// the network and the noise level jointly while the EKF tracks the state.
#[derive(Debug, Clone)]
pub struct NnAugmentedModel {
    pub mlp: MlpSpec,
    pub ts: f64,
    pub process_cov: DMatrix<f64>,
}

impl NnAugmentedModel {
    pub fn new(ts: f64, q: f64) -> Self {
        Self {
            mlp: MlpSpec::new(alloc::vec![3, 4, 4, 1]),
            ts,
            process_cov: DMatrix::identity(3, 3) * q,
        }
    }

    fn weights<'a>(&self, theta: &'a DVector<f64>) -> &'a [f64] {
        &theta.as_slice()[..self.mlp.weight_count()]
    }

    fn field(&self, x: &DVector<f64>, u: f64, theta: &DVector<f64>) -> DVector<f64> {
        let mut d = linear_part(x, u);
        // Weight-length invariants are enforced at construction; a forward
        // pass here cannot fail on shape.
        let nn = self.mlp.forward(self.weights(theta), x).unwrap();
        d[2] += nn[0];
        d
    }

    fn field_jacobian(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::from_row_slice(3, 3, &LINEAR_JAC);
        let (_, grad) = self
            .mlp
            .forward_with_input_jacobian(self.weights(theta), x, true)
            .unwrap();
        let grad = grad.unwrap();
        for c in 0..3 {
            j[(2, c)] += grad[(0, c)];
        }
        j
    }
}

impl StateSpaceModel for NnAugmentedModel {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        self.mlp.weight_count() + 1
    }

    fn theta_transform(&self) -> Vec<SlotTransform> {
        let mut t = alloc::vec![SlotTransform::Identity; self.mlp.weight_count()];
        t.push(SlotTransform::LogVariance);
        t
    }

    fn transition(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        rk4_step(
            |x, u, th| self.field(x, u[0], th),
            x,
            u,
            theta,
            self.ts,
        )
    }

    fn measurement(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x[0]))
    }

    fn process_cov(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.process_cov.clone()
    }

    fn measurement_cov(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, theta[self.mlp.weight_count()])
    }

    fn transition_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<Option<DMatrix<f64>>> {
        let j = rk4_jacobian(
            |x, u, th| self.field(x, u[0], th),
            |x, _, th| self.field_jacobian(x, th),
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
        Ok(Some(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])))
    }
}

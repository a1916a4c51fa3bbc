//! Ground-truth trajectory generation for the benchmark systems.
//!
//! One ChaCha stream per trajectory, owned exclusively by the rollout, with
//! a fixed draw order per step (parameter draw, process noise by coordinate,
//! measurement noise by coordinate). Same seed, same bytes.

use alloc::vec::Vec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::vec_finite;
use crate::ode::rk4_step;
use crate::systems::bioreactor::{bioreactor_derivative, eta_mean, BioreactorParams};
use crate::systems::nn_plant::{nn_benchmark_input, nn_true_derivative};

/// A simulated run. Row t (1-based step, stored at index t-1) holds the
/// state after the t-th transition, the measurement taken there, the input
/// that drove the transition, and the parameter value in effect during it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub true_params: Vec<DVector<f64>>,
    pub initial_state: DVector<f64>,
    pub ts: f64,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Which plant to roll out, with its true noise levels.
///
/// `q` and `r` are variances (the process covariance is q I). `sigma_eta`
/// is the standard deviation of the per-step mixing-efficiency draw.
#[derive(Debug, Clone, PartialEq)]
pub enum SimSystem {
    Bioreactor {
        params: BioreactorParams,
        sigma_eta: f64,
        q: f64,
        r: f64,
        x0: DVector<f64>,
    },
    NnBenchmark {
        q: f64,
        r: f64,
        x0: DVector<f64>,
    },
    Ar1 {
        theta: f64,
        q: f64,
        r: f64,
        x0: f64,
    },
    DampedIntegrator {
        theta: f64,
        q: f64,
        r: f64,
        x0: DVector<f64>,
    },
}

fn normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Roll the chosen system forward `horizon` steps of size `ts`.
pub fn simulate(system: &SimSystem, horizon: usize, ts: f64, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let x0 = match system {
        SimSystem::Bioreactor { x0, .. } => x0.clone(),
        SimSystem::NnBenchmark { x0, .. } => x0.clone(),
        SimSystem::Ar1 { x0, .. } => DVector::from_element(1, *x0),
        SimSystem::DampedIntegrator { x0, .. } => x0.clone(),
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(horizon),
        states: Vec::with_capacity(horizon),
        measurements: Vec::with_capacity(horizon),
        inputs: Vec::with_capacity(horizon),
        true_params: Vec::with_capacity(horizon),
        initial_state: x0.clone(),
        ts,
        seed,
    };

    let mut x = x0;
    for t in 1..=horizon {
        let (next, y, u_row, theta_row) = match system {
            SimSystem::Bioreactor {
                params,
                sigma_eta,
                q,
                r,
                ..
            } => {
                let eta = eta_mean(t as f64, params.eta0, params.eta_f, params.alpha, params.beta)
                    + sigma_eta * normal(&mut rng);
                let empty = DVector::zeros(0);
                let theta = DVector::from_element(1, eta);
                let mut next = rk4_step(
                    |x, _, th| bioreactor_derivative(x, th[0], params),
                    &x,
                    &empty,
                    &theta,
                    ts,
                )?;
                let q_std = libm::sqrt(*q);
                for i in 0..3 {
                    next[i] += q_std * normal(&mut rng);
                }
                let y = DVector::from_element(1, next[2] + libm::sqrt(*r) * normal(&mut rng));
                (next, y, empty, theta)
            }
            SimSystem::NnBenchmark { q, r, .. } => {
                let u = nn_benchmark_input((t - 1) as f64 * ts);
                let u_vec = DVector::from_element(1, u);
                let empty = DVector::zeros(0);
                let mut next = rk4_step(
                    |x, u, _| nn_true_derivative(x, u[0]),
                    &x,
                    &u_vec,
                    &empty,
                    ts,
                )?;
                let q_std = libm::sqrt(*q);
                for i in 0..3 {
                    next[i] += q_std * normal(&mut rng);
                }
                let y = DVector::from_element(1, next[0] + libm::sqrt(*r) * normal(&mut rng));
                (next, y, u_vec, DVector::zeros(0))
            }
            SimSystem::Ar1 { theta, q, r, .. } => {
                let mut next = DVector::from_element(1, theta * x[0]);
                next[0] += libm::sqrt(*q) * normal(&mut rng);
                let y = DVector::from_element(1, next[0] + libm::sqrt(*r) * normal(&mut rng));
                (next, y, DVector::zeros(0), DVector::from_element(1, *theta))
            }
            SimSystem::DampedIntegrator { theta, q, r, .. } => {
                let mut next = DVector::from_row_slice(&[x[0] + ts * x[1], theta * x[1]]);
                let q_std = libm::sqrt(*q);
                for i in 0..2 {
                    next[i] += q_std * normal(&mut rng);
                }
                let y = DVector::from_element(1, next[0] + libm::sqrt(*r) * normal(&mut rng));
                (next, y, DVector::zeros(0), DVector::from_element(1, *theta))
            }
        };

        if !vec_finite(&next) || !vec_finite(&y) {
            return Err(Error::SimulationDiverged { step: t });
        }
        x = next.clone();
        traj.times.push(t as f64 * ts);
        traj.states.push(next);
        traj.measurements.push(y);
        traj.inputs.push(u_row);
        traj.true_params.push(theta_row);
    }
    Ok(traj)
}

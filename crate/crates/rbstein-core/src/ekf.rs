//! Extended Kalman filter primitives, one instance per parameter particle.
//!
//! Conditioned on a particle's theta, the state posterior stays Gaussian:
//! predict pushes (mean, cov) through the transition map and its Jacobian,
//! update folds in a measurement through the Kalman gain and also yields the
//! innovation log-likelihood log N(y; h(x_pred), S) that the particle
//! weights and parameter gradients are built from.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_jittered, logpdf_from_chol, mat_finite, symmetrize, vec_finite,
    INNOVATION_JITTER_MAX, INNOVATION_JITTER_START,
};
use crate::model::StateSpaceModel;
use crate::theta::ThetaVector;

/// Gaussian state belief (mean, covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }
}

/// Innovation-side quantities of one update.
#[derive(Debug, Clone)]
pub struct UpdateDiagnostics {
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub kalman_gain: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Predicted measurement h(x_pred, theta), the center of the
    /// one-step-ahead predictive density.
    pub predicted_measurement: DVector<f64>,
}

/// Central-difference Jacobian with per-coordinate step 1e-6 (1 + |x_i|).
pub fn jacobian_fd<F>(map: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut columns: alloc::vec::Vec<DVector<f64>> = alloc::vec::Vec::with_capacity(n);
    for i in 0..n {
        let delta = 1e-6 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += delta;
        xm[i] -= delta;
        let fp = map(&xp).map_err(|_| Error::JacobianError { coordinate: i })?;
        let fm = map(&xm).map_err(|_| Error::JacobianError { coordinate: i })?;
        let col = (fp - fm) / (2.0 * delta);
        if !vec_finite(&col) {
            return Err(Error::JacobianError { coordinate: i });
        }
        columns.push(col);
    }
    let m = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(m, n, |r, c| columns[c][r]))
}

fn transition_jacobian(
    model: &dyn StateSpaceModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta_c: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    match model.transition_jacobian(x, u, theta_c)? {
        Some(j) => Ok(j),
        None => jacobian_fd(|p| model.transition(p, u, theta_c), x),
    }
}

fn measurement_jacobian(
    model: &dyn StateSpaceModel,
    x: &DVector<f64>,
    theta_c: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    match model.measurement_jacobian(x, theta_c)? {
        Some(j) => Ok(j),
        None => jacobian_fd(|p| model.measurement(p, theta_c), x),
    }
}

/// Time update: mean = f(x, u, theta), cov = F P F^T + Q(theta).
pub fn ekf_predict(
    belief: &GaussianBelief,
    u: &DVector<f64>,
    theta: &ThetaVector,
    model: &dyn StateSpaceModel,
) -> Result<GaussianBelief> {
    let theta_c = theta.constrained();
    let mean = model.transition(&belief.mean, u, &theta_c)?;
    let f = transition_jacobian(model, &belief.mean, u, &theta_c)?;
    let mut cov = &f * &belief.cov * f.transpose() + model.process_cov(&theta_c);
    symmetrize(&mut cov);
    if !vec_finite(&mean) || !mat_finite(&cov) {
        return Err(Error::FilterDiverged {
            where_: "ekf predict",
        });
    }
    Ok(GaussianBelief { mean, cov })
}

/// Measurement update with gain K = P H^T S^{-1}, S = H P H^T + R.
///
/// Also evaluates the innovation log-likelihood used for particle weighting
/// and parameter scores. S is factored by Cholesky with the standard jitter
/// ladder; exhaustion signals a degenerate particle via InnovationSingular.
pub fn ekf_update(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    theta: &ThetaVector,
    model: &dyn StateSpaceModel,
) -> Result<(GaussianBelief, UpdateDiagnostics)> {
    let theta_c = theta.constrained();
    let y_pred = model.measurement(&pred.mean, &theta_c)?;
    let h = measurement_jacobian(model, &pred.mean, &theta_c)?;
    let mut s = &h * &pred.cov * h.transpose() + model.measurement_cov(&theta_c);
    symmetrize(&mut s);
    let (chol, _) = cholesky_jittered(&s, INNOVATION_JITTER_START, INNOVATION_JITTER_MAX)
        .map_err(|jitter_tried| Error::InnovationSingular { jitter_tried })?;

    let innovation = y - &y_pred;
    let log_likelihood = logpdf_from_chol(&innovation, &chol);

    // K = P H^T S^{-1} via the factor: solve(S, H P) then transpose.
    let hp = &h * &pred.cov;
    let gain = chol.solve(&hp).transpose();

    let mean = &pred.mean + &gain * &innovation;
    let n = pred.mean.len();
    let mut cov = (DMatrix::identity(n, n) - &gain * &h) * &pred.cov;
    symmetrize(&mut cov);

    if !vec_finite(&mean) || !mat_finite(&cov) || !log_likelihood.is_finite() {
        return Err(Error::FilterDiverged {
            where_: "ekf update",
        });
    }
    Ok((
        GaussianBelief { mean, cov },
        UpdateDiagnostics {
            innovation,
            innovation_cov: s,
            kalman_gain: gain,
            log_likelihood,
            predicted_measurement: y_pred,
        },
    ))
}

/// Innovation log-likelihood of `y` from a prior belief under `theta`,
/// without committing the update: predict, then score the innovation.
pub fn step_log_likelihood(
    belief_prev: &GaussianBelief,
    y: &DVector<f64>,
    u: &DVector<f64>,
    theta: &ThetaVector,
    model: &dyn StateSpaceModel,
) -> Result<f64> {
    let pred = ekf_predict(belief_prev, u, theta, model)?;
    let theta_c = theta.constrained();
    let y_pred = model.measurement(&pred.mean, &theta_c)?;
    let h = measurement_jacobian(model, &pred.mean, &theta_c)?;
    let mut s = &h * &pred.cov * h.transpose() + model.measurement_cov(&theta_c);
    symmetrize(&mut s);
    let (chol, _) = cholesky_jittered(&s, INNOVATION_JITTER_START, INNOVATION_JITTER_MAX)
        .map_err(|jitter_tried| Error::InnovationSingular { jitter_tried })?;
    Ok(logpdf_from_chol(&(y - y_pred), &chol))
}

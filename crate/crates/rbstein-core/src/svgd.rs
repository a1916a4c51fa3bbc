//! Stein variational transport of the parameter particles.
//!
//! The perturbation direction for particle theta is
//!   phi(theta) = (1/N) sum_j [ k(theta_j, theta) score_j
//!                              + grad_{theta_j} k(theta_j, theta) ]
//! where score_j is the per-particle gradient of the step's log-posterior:
//! the innovation log-likelihood differentiated through the EKF prediction,
//! plus the score of a Gaussian moment-fit to the previous ensemble standing
//! in for the prior. The first kernel term pulls particles toward high
//! posterior density, the gradient term pushes them apart.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::ekf::{ekf_predict, ekf_update, step_log_likelihood, GaussianBelief};
use crate::error::{Error, Result};
use crate::linalg::vec_finite;
use crate::model::StateSpaceModel;
use crate::rbpf::{ParticleEnsemble, StepInfo};
use crate::theta::ThetaVector;

/// A kernel evaluation k(a, b) with its gradient in the first argument.
#[derive(Debug, Clone)]
pub struct KernelEval {
    pub value: f64,
    pub grad_wrt_first: DVector<f64>,
}

/// RBF kernel k(a, b) = exp(-|a-b|^2 / h).
pub fn rbf_kernel(a: &DVector<f64>, b: &DVector<f64>, h: f64) -> KernelEval {
    let d = a - b;
    let value = libm::exp(-d.norm_squared() / h);
    KernelEval {
        grad_wrt_first: d * (-2.0 / h * value),
        value,
    }
}

/// Median heuristic: h = med^2 / ln(N+1) over pairwise Euclidean distances,
/// falling back to 1 when all particles coincide.
pub fn median_bandwidth(points: &[DVector<f64>]) -> f64 {
    let mut sq_dists = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            sq_dists.push((&points[i] - &points[j]).norm_squared());
        }
    }
    median_to_bandwidth(sq_dists, points.len())
}

/// Shared tail of the median heuristic: given squared distances (in
/// whatever metric), h = median / ln(N+1), with the degenerate fallback.
pub(crate) fn median_to_bandwidth(mut sq_dists: Vec<f64>, n: usize) -> f64 {
    if sq_dists.is_empty() {
        return 1.0;
    }
    sq_dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sq_dists.len() / 2;
    let med_sq = if sq_dists.len() % 2 == 1 {
        sq_dists[mid]
    } else {
        0.5 * (sq_dists[mid - 1] + sq_dists[mid])
    };
    if med_sq == 0.0 {
        1.0
    } else {
        med_sq / libm::log(n as f64 + 1.0)
    }
}

/// Gaussian moment-fit to an ensemble, used as the transported prior.
#[derive(Debug, Clone)]
pub struct GaussianPriorFit {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPriorFit {
    /// Population moments of the points, covariance regularized by 1e-6 I.
    pub fn fit(points: &[DVector<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Config(alloc::string::String::from(
                "prior fit needs at least one particle",
            )));
        }
        let dim = points[0].len();
        let mut mean = DVector::zeros(dim);
        for p in points {
            mean += p;
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for p in points {
            let d = p - &mean;
            cov += &d * d.transpose();
        }
        cov /= n as f64;
        for i in 0..dim {
            cov[(i, i)] += 1e-6;
        }
        let chol = Cholesky::new(cov).ok_or(Error::BeliefInvalid {
            what: "prior covariance not positive definite",
        })?;
        Ok(Self { mean, chol })
    }

    /// Gaussian score -Sigma^{-1} (theta - mean).
    pub fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        -self.chol.solve(&(theta - &self.mean))
    }
}

/// Per-particle score ingredients assembled once per transport iteration.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    pub likelihood_grads: Vec<DVector<f64>>,
    pub prior_grads: Vec<DVector<f64>>,
    pub prior: Option<GaussianPriorFit>,
}

impl ScoreCache {
    pub fn build(
        points: &[DVector<f64>],
        likelihood_grads: Vec<DVector<f64>>,
        prior: Option<GaussianPriorFit>,
    ) -> Self {
        let prior_grads = points
            .iter()
            .map(|p| match &prior {
                Some(fit) => fit.score(p),
                None => DVector::zeros(p.len()),
            })
            .collect();
        Self {
            likelihood_grads,
            prior_grads,
            prior,
        }
    }
}

/// Posterior score of particle i: likelihood gradient plus prior gradient.
pub fn posterior_score(cache: &ScoreCache, i: usize) -> DVector<f64> {
    &cache.likelihood_grads[i] + &cache.prior_grads[i]
}

/// Gradient of the innovation log-likelihood with respect to theta,
/// by central finite differences through the EKF prediction.
///
/// Per coordinate the step is 1e-5 (1 + |theta_k|). A singular innovation at
/// one probe point falls back to a one-sided difference against the center
/// value; if no usable pair remains the coordinate is unrecoverable.
pub fn likelihood_grad(
    theta: &ThetaVector,
    y: &DVector<f64>,
    u: &DVector<f64>,
    belief_prev: &GaussianBelief,
    model: &dyn StateSpaceModel,
) -> Result<DVector<f64>> {
    let n = theta.len();
    let mut grad = DVector::zeros(n);
    let mut probe_theta = theta.clone();
    let mut center: Option<Result<f64>> = None;
    for k in 0..n {
        let base = theta.values[k];
        let delta = 1e-5 * (1.0 + base.abs());

        probe_theta.values[k] = base + delta;
        let plus = step_log_likelihood(belief_prev, y, u, &probe_theta, model);
        probe_theta.values[k] = base - delta;
        let minus = step_log_likelihood(belief_prev, y, u, &probe_theta, model);
        probe_theta.values[k] = base;

        let center_value = |c: &mut Option<Result<f64>>| -> Result<f64> {
            c.get_or_insert_with(|| step_log_likelihood(belief_prev, y, u, theta, model))
                .clone()
                .map_err(|_| Error::GradientUnavailable { coordinate: k })
        };

        grad[k] = match (plus, minus) {
            (Ok(p), Ok(m)) => (p - m) / (2.0 * delta),
            (Ok(p), Err(_)) => (p - center_value(&mut center)?) / delta,
            (Err(_), Ok(m)) => (center_value(&mut center)? - m) / delta,
            (Err(_), Err(_)) => {
                return Err(Error::GradientUnavailable { coordinate: k });
            }
        };
    }
    if !vec_finite(&grad) {
        return Err(Error::NonFinite {
            where_: "likelihood gradient",
        });
    }
    Ok(grad)
}

/// Stein perturbation direction for every particle:
/// phi_i = (1/N) sum_j [ k(theta_j, theta_i) score_j
///                       + grad_{theta_j} k(theta_j, theta_i) ].
pub fn phi_hat<K>(points: &[DVector<f64>], scores: &[DVector<f64>], kernel: K) -> Vec<DVector<f64>>
where
    K: Fn(&DVector<f64>, &DVector<f64>) -> KernelEval,
{
    let n = points.len();
    let dim = points.first().map_or(0, |p| p.len());
    let mut directions = Vec::with_capacity(n);
    for i in 0..n {
        let mut phi = DVector::zeros(dim);
        for j in 0..n {
            let k = kernel(&points[j], &points[i]);
            phi += &scores[j] * k.value + k.grad_wrt_first;
        }
        directions.push(phi / n as f64);
    }
    directions
}

/// M rounds of theta_i += epsilon phi_i with scores and the RBF median
/// bandwidth refreshed every round. `step_adaptation` switches on a
/// per-coordinate adaptive-moment rescale of the direction (moments local
/// to this call).
pub fn svgd_iterate<S>(
    points: &mut Vec<DVector<f64>>,
    mut scores_fn: S,
    epsilon: f64,
    iterations: usize,
    step_adaptation: bool,
) -> Result<()>
where
    S: FnMut(&[DVector<f64>]) -> Result<Vec<DVector<f64>>>,
{
    let n = points.len();
    let dim = points.first().map_or(0, |p| p.len());
    let (beta1, beta2, floor) = (0.9, 0.999, 1e-8);
    let mut m1 = alloc::vec![DVector::<f64>::zeros(dim); n];
    let mut m2 = alloc::vec![DVector::<f64>::zeros(dim); n];

    for iter in 1..=iterations {
        let scores = scores_fn(points)?;
        let h = median_bandwidth(points);
        let directions = phi_hat(points, &scores, |a, b| rbf_kernel(a, b, h));
        for (i, (point, phi)) in points.iter_mut().zip(&directions).enumerate() {
            if step_adaptation {
                let blended = &m1[i] * beta1 + phi * (1.0 - beta1);
                m1[i] = blended;
                for c in 0..dim {
                    m2[i][c] = beta2 * m2[i][c] + (1.0 - beta2) * phi[c] * phi[c];
                }
                let bc1 = 1.0 - libm::pow(beta1, iter as f64);
                let bc2 = 1.0 - libm::pow(beta2, iter as f64);
                for c in 0..dim {
                    point[c] +=
                        epsilon * (m1[i][c] / bc1) / (libm::sqrt(m2[i][c] / bc2) + floor);
                }
            } else {
                *point += phi * epsilon;
            }
            if !vec_finite(point) {
                return Err(Error::ParticleDiverged {
                    particle: i,
                    iteration: iter,
                });
            }
        }
    }
    Ok(())
}

/// Transport settings for the Stein filters.
#[derive(Debug, Clone)]
pub struct SvgdConfig {
    /// Step size epsilon.
    pub epsilon: f64,
    /// Inner transport iterations M per filter step.
    pub iterations: usize,
    /// Include the moment-fit prior score (false = likelihood-only ablation).
    pub use_prior: bool,
    /// Adaptive-moment rescaling of the step, local to each filter step.
    pub step_adaptation: bool,
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            iterations: 1,
            use_prior: true,
            step_adaptation: false,
        }
    }
}

/// Result of refreshing every particle's belief against one measurement:
/// the pre-update beliefs (gradients differentiate from these) plus the
/// predictive diagnostics that go into the step record.
pub(crate) struct EkfPass {
    pub prev_beliefs: Vec<GaussianBelief>,
    pub predictive_means: Vec<DVector<f64>>,
    pub predictive_covs: Vec<DMatrix<f64>>,
    pub log_likelihoods: Vec<f64>,
}

/// Kalman-before-transport: predict and update every particle's belief
/// under its current theta. Any per-particle failure aborts the step (the
/// Stein filters have no weighting mechanism to absorb a dead particle).
pub(crate) fn ekf_pass(
    ens: &mut ParticleEnsemble,
    y: &DVector<f64>,
    u: &DVector<f64>,
    model: &dyn StateSpaceModel,
) -> Result<EkfPass> {
    let n = ens.len();
    let prev_beliefs = ens.beliefs.clone();
    let mut predictive_means = Vec::with_capacity(n);
    let mut predictive_covs = Vec::with_capacity(n);
    let mut log_likelihoods = Vec::with_capacity(n);
    for i in 0..n {
        let pred = ekf_predict(&ens.beliefs[i], u, &ens.particles[i], model)?;
        let (post, diag) = ekf_update(&pred, y, &ens.particles[i], model)?;
        predictive_means.push(diag.predicted_measurement);
        predictive_covs.push(diag.innovation_cov);
        log_likelihoods.push(diag.log_likelihood);
        ens.beliefs[i] = post;
    }
    Ok(EkfPass {
        prev_beliefs,
        predictive_means,
        predictive_covs,
        log_likelihoods,
    })
}

/// Innovation-likelihood gradients for a set of particle positions, each
/// differentiated from its own pre-update belief.
pub(crate) fn likelihood_grads_at(
    points: &[DVector<f64>],
    transform: &[crate::theta::SlotTransform],
    prev_beliefs: &[GaussianBelief],
    y: &DVector<f64>,
    u: &DVector<f64>,
    model: &dyn StateSpaceModel,
) -> Result<Vec<DVector<f64>>> {
    let mut grads = Vec::with_capacity(points.len());
    for (i, v) in points.iter().enumerate() {
        let theta = ThetaVector::new(v.clone(), transform.to_vec())?;
        grads.push(likelihood_grad(&theta, y, u, &prev_beliefs[i], model)?);
    }
    Ok(grads)
}

/// One RBSGD filter step: per-particle EKF predict + update with the
/// current particles, then M SVGD rounds moving the particles along the
/// step's posterior score. Weights stay uniform.
pub fn rbsgd_step(
    ens: &mut ParticleEnsemble,
    y: &DVector<f64>,
    u: &DVector<f64>,
    model: &dyn StateSpaceModel,
    config: &SvgdConfig,
) -> Result<StepInfo> {
    ens.step_index += 1;
    let n = ens.len();
    let pass = ekf_pass(ens, y, u, model)?;

    let transform = model.theta_transform();
    let mut values: Vec<DVector<f64>> =
        ens.particles.iter().map(|p| p.values.clone()).collect();
    let prior = if config.use_prior && n >= 2 {
        Some(GaussianPriorFit::fit(&values)?)
    } else {
        None
    };

    svgd_iterate(
        &mut values,
        |pts| {
            let mut scores = likelihood_grads_at(pts, &transform, &pass.prev_beliefs, y, u, model)?;
            if let Some(fit) = &prior {
                for (s, v) in scores.iter_mut().zip(pts) {
                    *s += fit.score(v);
                }
            }
            Ok(scores)
        },
        config.epsilon,
        config.iterations,
        config.step_adaptation,
    )?;

    for (p, v) in ens.particles.iter_mut().zip(values) {
        p.values = v;
    }
    let weight = 1.0 / n as f64;
    Ok(StepInfo {
        ess: n as f64,
        resampled: false,
        predictive_means: pass.predictive_means,
        predictive_covs: pass.predictive_covs,
        predictive_weights: alloc::vec![weight; n],
        log_likelihoods: pass.log_likelihoods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::StateSpaceModel;
    use crate::systems::linear::Ar1Model;

    #[test]
    fn rbf_at_zero_distance() {
        let a = DVector::from_row_slice(&[0.3, -0.7]);
        let k = rbf_kernel(&a, &a, 1.5);
        assert_eq!(k.value, 1.0);
        assert_eq!(k.grad_wrt_first.norm(), 0.0);
    }

    #[test]
    fn rbf_is_symmetric_in_value() {
        let a = DVector::from_row_slice(&[0.2, 1.0]);
        let b = DVector::from_row_slice(&[-0.4, 0.1]);
        assert_eq!(rbf_kernel(&a, &b, 0.7).value, rbf_kernel(&b, &a, 0.7).value);
    }

    #[test]
    fn rbf_reference_point() {
        let a = DVector::from_row_slice(&[1.0, 0.0]);
        let b = DVector::zeros(2);
        let k = rbf_kernel(&a, &b, 2.0);
        let expected = libm::exp(-0.5);
        assert!((k.value - expected).abs() < 1e-15);
        assert!((k.grad_wrt_first[0] + expected).abs() < 1e-15);
        assert_eq!(k.grad_wrt_first[1], 0.0);
    }

    #[test]
    fn median_bandwidth_two_points() {
        let pts = [DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
        let h = median_bandwidth(&pts);
        assert!((h - 1.0 / libm::log(3.0)).abs() < 1e-12);
    }

    #[test]
    fn median_bandwidth_degenerate_cloud() {
        let pts = alloc::vec![DVector::from_element(2, 0.4); 5];
        assert_eq!(median_bandwidth(&pts), 1.0);
    }

    #[test]
    fn median_bandwidth_scales_quadratically() {
        let pts: Vec<DVector<f64>> = (0..6)
            .map(|i| DVector::from_element(1, libm::sin(i as f64)))
            .collect();
        let scaled: Vec<DVector<f64>> = pts.iter().map(|p| p * 3.0).collect();
        let h = median_bandwidth(&pts);
        let hs = median_bandwidth(&scaled);
        assert!((hs / h - 9.0).abs() < 1e-10);
    }

    #[test]
    fn phi_hat_single_particle_is_the_score() {
        let pts = alloc::vec![DVector::from_row_slice(&[0.5, -1.0])];
        let scores = alloc::vec![DVector::from_row_slice(&[2.0, 3.0])];
        let dirs = phi_hat(&pts, &scores, |a, b| rbf_kernel(a, b, 1.0));
        assert!((&dirs[0] - &scores[0]).norm() < 1e-15);
    }

    #[test]
    fn phi_hat_with_zero_scores_repels() {
        let pts = alloc::vec![
            DVector::from_element(1, -0.5),
            DVector::from_element(1, 0.5)
        ];
        let scores = alloc::vec![DVector::zeros(1), DVector::zeros(1)];
        let dirs = phi_hat(&pts, &scores, |a, b| rbf_kernel(a, b, 1.0));
        assert!(dirs[0][0] < 0.0, "left particle should move left");
        assert!(dirs[1][0] > 0.0, "right particle should move right");
    }

    #[test]
    fn phi_hat_matches_naive_double_loop() {
        let pts: Vec<DVector<f64>> = (0..3)
            .map(|i| DVector::from_element(1, i as f64 - 1.0))
            .collect();
        // Standard normal target: score(x) = -x.
        let scores: Vec<DVector<f64>> = pts.iter().map(|p| -p.clone()).collect();
        let h = 0.8;
        let dirs = phi_hat(&pts, &scores, |a, b| rbf_kernel(a, b, h));

        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                let d: f64 = pts[j][0] - pts[i][0];
                let k = libm::exp(-d * d / h);
                acc += k * scores[j][0] + (-2.0 / h) * d * k;
            }
            acc /= 3.0;
            assert!((dirs[i][0] - acc).abs() < 1e-12, "particle {i}");
        }
    }

    #[test]
    fn phi_hat_is_translation_equivariant() {
        let pts: Vec<DVector<f64>> = (0..4)
            .map(|i| DVector::from_element(1, 0.3 * i as f64))
            .collect();
        let target_mean = 1.0;
        let scores: Vec<DVector<f64>> = pts
            .iter()
            .map(|p| DVector::from_element(1, target_mean - p[0]))
            .collect();
        let h = median_bandwidth(&pts);
        let dirs = phi_hat(&pts, &scores, |a, b| rbf_kernel(a, b, h));

        let shift = 7.5;
        let pts_shifted: Vec<DVector<f64>> =
            pts.iter().map(|p| p.add_scalar(shift)).collect();
        let scores_shifted: Vec<DVector<f64>> = pts_shifted
            .iter()
            .map(|p| DVector::from_element(1, target_mean + shift - p[0]))
            .collect();
        let h2 = median_bandwidth(&pts_shifted);
        let dirs2 = phi_hat(&pts_shifted, &scores_shifted, |a, b| rbf_kernel(a, b, h2));
        for (d, d2) in dirs.iter().zip(&dirs2) {
            assert!((d - d2).norm() < 1e-12);
        }
    }

    #[test]
    fn svgd_zero_iterations_is_identity() {
        let mut pts = alloc::vec![DVector::from_element(1, 2.0)];
        svgd_iterate(&mut pts, |_| Ok(alloc::vec![DVector::zeros(1)]), 0.1, 0, false).unwrap();
        assert_eq!(pts[0][0], 2.0);
    }

    #[test]
    fn svgd_reaches_standard_normal_moments() {
        // Deterministic spread-out start far from the target.
        let n = 50;
        let mut pts: Vec<DVector<f64>> = (0..n)
            .map(|i| DVector::from_element(1, 2.0 + 2.0 * (i as f64 / (n - 1) as f64)))
            .collect();
        svgd_iterate(
            &mut pts,
            |p| Ok(p.iter().map(|x| -x.clone()).collect()),
            0.1,
            500,
            false,
        )
        .unwrap();
        let mean: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let var: f64 = pts.iter().map(|p| (p[0] - mean) * (p[0] - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((libm::sqrt(var) - 1.0).abs() < 0.1, "std {}", libm::sqrt(var));
    }

    #[test]
    fn svgd_reports_divergence_with_iteration() {
        let mut pts = alloc::vec![
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0)
        ];
        let err = svgd_iterate(
            &mut pts,
            |p| Ok(p.iter().map(|x| x * 1e308).collect()),
            1e3,
            5,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ParticleDiverged { iteration: 1, .. }));
    }

    // Measurement reads theta directly: y ~ N(theta, 1) regardless of the
    // state, so the step log-likelihood is exactly quadratic in theta.
    #[derive(Clone)]
    struct QuadraticLikelihoodModel;

    impl StateSpaceModel for QuadraticLikelihoodModel {
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
            _t: &DVector<f64>,
        ) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
        fn measurement(&self, _x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, theta[0]))
        }
        fn process_cov(&self, _t: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn measurement_cov(&self, _t: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
        fn measurement_jacobian(
            &self,
            _x: &DVector<f64>,
            _t: &DVector<f64>,
        ) -> Result<Option<DMatrix<f64>>> {
            Ok(Some(DMatrix::zeros(1, 1)))
        }
    }

    #[test]
    fn likelihood_grad_matches_quadratic_oracle() {
        let model = QuadraticLikelihoodModel;
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::zeros(1, 1));
        let y = DVector::from_element(1, 1.7);
        let u = DVector::zeros(0);
        for theta_val in [-1.0, 0.0, 0.4, 2.5] {
            let theta = ThetaVector::identity(DVector::from_element(1, theta_val));
            let g = likelihood_grad(&theta, &y, &u, &belief, &model).unwrap();
            // d/dtheta of -(y-theta)^2/2 is (y - theta); exact for central FD.
            assert!((g[0] - (1.7 - theta_val)).abs() < 1e-6, "at {theta_val}");
        }
    }

    #[test]
    fn likelihood_grad_vanishes_at_the_maximum() {
        let model = QuadraticLikelihoodModel;
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::zeros(1, 1));
        let y = DVector::from_element(1, 0.9);
        let theta = ThetaVector::identity(DVector::from_element(1, 0.9));
        let g = likelihood_grad(&theta, &y, &DVector::zeros(0), &belief, &model).unwrap();
        assert!(g.norm() <= 1e-3);
    }

    #[test]
    fn likelihood_grad_sign_tracks_the_innovation() {
        let model = Ar1Model { q: 0.05, r: 0.1 };
        let belief = GaussianBelief::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 0.01),
        );
        let u = DVector::zeros(0);
        let theta = ThetaVector::identity(DVector::from_element(1, 0.8));
        // Prediction is 0.8; y above it wants larger theta, below wants smaller.
        let g_hi = likelihood_grad(
            &theta,
            &DVector::from_element(1, 1.5),
            &u,
            &belief,
            &model,
        )
        .unwrap();
        let g_lo = likelihood_grad(
            &theta,
            &DVector::from_element(1, 0.1),
            &u,
            &belief,
            &model,
        )
        .unwrap();
        assert!(g_hi[0] > 0.0);
        assert!(g_lo[0] < 0.0);
    }

    // Negative measurement variance defeats the jitter ladder on purpose.
    #[derive(Clone)]
    struct BrokenCovModel;

    impl StateSpaceModel for BrokenCovModel {
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
            _t: &DVector<f64>,
        ) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
        fn measurement(&self, x: &DVector<f64>, _t: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
        fn process_cov(&self, _t: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn measurement_cov(&self, _t: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, -1.0)
        }
    }

    #[test]
    fn gradient_unavailable_when_all_probes_fail() {
        let model = BrokenCovModel;
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::zeros(1, 1));
        let theta = ThetaVector::identity(DVector::from_element(1, 0.5));
        let err = likelihood_grad(
            &theta,
            &DVector::from_element(1, 0.2),
            &DVector::zeros(0),
            &belief,
            &model,
        )
        .unwrap_err();
        assert!(matches!(err, Error::GradientUnavailable { coordinate: 0 }));
    }

    #[test]
    fn posterior_score_composes_prior_and_likelihood() {
        let pts: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_element(1, i as f64 * 0.1))
            .collect();
        let fit = GaussianPriorFit::fit(&pts).unwrap();
        // At the fitted mean the prior score vanishes.
        assert!(fit.score(&fit.mean.clone()).norm() < 1e-12);
        // Away from the mean it points back toward it.
        let above = fit.mean.add_scalar(0.5);
        assert!(fit.score(&above)[0] < 0.0);

        let lik: Vec<DVector<f64>> = pts
            .iter()
            .map(|_| DVector::from_element(1, 2.0))
            .collect();
        let cache = ScoreCache::build(&pts, lik, Some(fit));
        let s = posterior_score(&cache, 2);
        assert!(
            (s[0] - (2.0 + cache.prior_grads[2][0])).abs() < 1e-14,
            "likelihood and prior contributions should add"
        );
    }

    #[test]
    fn conjugate_gaussian_posterior_score() {
        // Prior fit to particles with sample mean mu, sample var v; quadratic
        // likelihood model gives d/dtheta loglik = y - theta. The composed
        // score must equal -(theta-mu)/(v+1e-6) + (y-theta).
        let pts: Vec<DVector<f64>> = [0.2_f64, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let mu = 0.6;
        let var = pts
            .iter()
            .map(|p| (p[0] - mu) * (p[0] - mu))
            .sum::<f64>()
            / 5.0;
        let model = QuadraticLikelihoodModel;
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::zeros(1, 1));
        let y = DVector::from_element(1, 1.3);
        let u = DVector::zeros(0);

        let fit = GaussianPriorFit::fit(&pts).unwrap();
        let lik: Vec<DVector<f64>> = pts
            .iter()
            .map(|p| {
                likelihood_grad(
                    &ThetaVector::identity(p.clone()),
                    &y,
                    &u,
                    &belief,
                    &model,
                )
                .unwrap()
            })
            .collect();
        let cache = ScoreCache::build(&pts, lik, Some(fit));
        for (i, p) in pts.iter().enumerate() {
            let analytic = -(p[0] - mu) / (var + 1e-6) + (1.3 - p[0]);
            let got = posterior_score(&cache, i)[0];
            assert!((got - analytic).abs() < 1e-5, "particle {i}: {got} vs {analytic}");
        }
    }

    #[test]
    fn rbsgd_with_zero_step_is_a_bank_of_ekfs() {
        let model = Ar1Model { q: 0.05, r: 0.1 };
        let sys = crate::sim::SimSystem::Ar1 {
            theta: 0.9,
            q: 0.05,
            r: 0.1,
            x0: 1.0,
        };
        let traj = crate::sim::simulate(&sys, 30, 1.0, 4).unwrap();
        let particles: Vec<ThetaVector> = [0.7, 0.9, 1.1]
            .iter()
            .map(|&v| ThetaVector::identity(DVector::from_element(1, v)))
            .collect();
        let belief0 = GaussianBelief::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 0.5),
        );
        let mut ens = ParticleEnsemble::init(particles.clone(), belief0.clone(), 4);
        let config = SvgdConfig {
            epsilon: 0.0,
            iterations: 3,
            ..Default::default()
        };
        let u = DVector::zeros(0);
        let mut references: Vec<GaussianBelief> = alloc::vec![belief0; 3];
        for y in &traj.measurements {
            rbsgd_step(&mut ens, y, &u, &model, &config).unwrap();
            for (i, reference) in references.iter_mut().enumerate() {
                let pred = ekf_predict(reference, &u, &particles[i], &model).unwrap();
                let (post, _) = ekf_update(&pred, y, &particles[i], &model).unwrap();
                *reference = post;
                assert!((&ens.beliefs[i].mean - &reference.mean).amax() < 1e-12);
                assert!((ens.particles[i].values[0] - particles[i].values[0]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rbsgd_single_particle_climbs_the_likelihood() {
        // N=1 drops both repulsion and prior: pure gradient ascent on the
        // step likelihood. Prediction under theta=0.5 from x=1 is 0.5; the
        // observation sits higher, so theta must increase.
        let model = Ar1Model { q: 0.01, r: 0.05 };
        let belief0 = GaussianBelief::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 0.01),
        );
        let mut ens = ParticleEnsemble::init(
            alloc::vec![ThetaVector::identity(DVector::from_element(1, 0.5))],
            belief0,
            8,
        );
        let config = SvgdConfig {
            epsilon: 1e-3,
            iterations: 5,
            ..Default::default()
        };
        let y = DVector::from_element(1, 0.9);
        let before = ens.particles[0].values[0];
        rbsgd_step(&mut ens, &y, &DVector::zeros(0), &model, &config).unwrap();
        assert!(ens.particles[0].values[0] > before);
    }
}


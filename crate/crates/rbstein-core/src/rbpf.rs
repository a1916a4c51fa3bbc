//! Rao-Blackwellized particle filter baseline.
//!
//! Parameter particles follow a Gaussian random walk; each carries its own
//! EKF state belief. Importance weights absorb the innovation likelihoods
//! (the proposal is the transition model, so the proposal/transition ratio
//! is one), are normalized in log space, and systematic resampling fires
//! when the effective sample size drops below the configured threshold.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::ekf::{ekf_predict, ekf_update, GaussianBelief};
use crate::error::{Error, Result};
use crate::fisher::AdamState;
use crate::linalg::psd_factor;
use crate::model::StateSpaceModel;
use crate::theta::ThetaVector;

/// Particle cloud over theta with per-particle state beliefs.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub particles: Vec<ThetaVector>,
    /// Normalized importance weights (uniform for the Stein filters).
    pub weights: Vec<f64>,
    pub beliefs: Vec<GaussianBelief>,
    /// Per-particle Adam moments, used only by the Fisher-preconditioned
    /// filter; None elsewhere.
    pub optimizer_state: Option<Vec<AdamState>>,
    /// Master seed from which per-step noise streams are derived.
    pub seed: u64,
    /// Count of filter steps taken so far.
    pub step_index: u64,
}

impl ParticleEnsemble {
    /// All particles start with the same belief and uniform weights.
    pub fn init(particles: Vec<ThetaVector>, belief: GaussianBelief, seed: u64) -> Self {
        let n = particles.len();
        debug_assert!(n >= 1);
        Self {
            particles,
            weights: alloc::vec![1.0 / n as f64; n],
            beliefs: alloc::vec![belief; n],
            optimizer_state: None,
            seed,
            step_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weighted mean of the particles in unconstrained space.
    pub fn theta_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.particles[0].len());
        for (w, p) in self.weights.iter().zip(&self.particles) {
            m += &p.values * *w;
        }
        m
    }
}

/// Random-walk and resampling settings for the baseline filter.
#[derive(Debug, Clone)]
pub struct RbpfConfig {
    /// Random-walk covariance in unconstrained theta space (PSD, may be 0).
    pub sigma_theta: DMatrix<f64>,
    /// Resample when ESS falls below this (between 1 and N).
    pub ess_threshold: f64,
}

/// Per-step diagnostics shared by all three filters.
///
/// The predictive triple describes the one-step-ahead measurement mixture:
/// component i is N(predictive_means[i], predictive_covs[i]) weighted by
/// predictive_weights[i] (the pre-update weights). Particles whose EKF pass
/// failed keep a degenerate fallback entry and zero posterior weight.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub ess: f64,
    pub resampled: bool,
    pub predictive_means: Vec<DVector<f64>>,
    pub predictive_covs: Vec<DMatrix<f64>>,
    pub predictive_weights: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-step stream derived from the master seed.
pub fn step_rng(seed: u64, step: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ step))
}

/// Random-walk move theta += L z with L L^T = sigma_theta, z ~ N(0, I),
/// applied in unconstrained space.
pub fn propagate_particles(
    ens: &mut ParticleEnsemble,
    sigma_theta: &DMatrix<f64>,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let factor = psd_factor(sigma_theta)?;
    let n_theta = factor.ncols();
    for p in &mut ens.particles {
        let z = DVector::from_fn(n_theta, |_, _| rng.sample::<f64, _>(StandardNormal));
        p.values += &factor * z;
    }
    Ok(())
}

/// Effective sample size 1 / sum(w^2) of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / sum_sq
}

/// Systematic resampling: one uniform offset, N evenly spaced positions.
/// Beliefs (and Adam moments, if any) travel with their particles; weights
/// reset to 1/N.
pub fn systematic_resample(ens: &mut ParticleEnsemble, rng: &mut ChaCha12Rng) {
    let n = ens.len();
    let offset: f64 = rng.gen::<f64>();
    let mut indices = Vec::with_capacity(n);
    let mut cumulative = ens.weights[0];
    let mut j = 0usize;
    for i in 0..n {
        let position = (i as f64 + offset) / n as f64;
        while position > cumulative && j + 1 < n {
            j += 1;
            cumulative += ens.weights[j];
        }
        indices.push(j);
    }
    ens.particles = indices.iter().map(|&k| ens.particles[k].clone()).collect();
    ens.beliefs = indices.iter().map(|&k| ens.beliefs[k].clone()).collect();
    if let Some(adam) = &ens.optimizer_state {
        ens.optimizer_state = Some(indices.iter().map(|&k| adam[k].clone()).collect());
    }
    ens.weights = alloc::vec![1.0 / n as f64; n];
}

/// One filter step: propagate, per-particle EKF predict/weight/update,
/// log-sum-exp normalization, ESS-triggered resampling.
pub fn rbpf_step(
    ens: &mut ParticleEnsemble,
    y: &DVector<f64>,
    u: &DVector<f64>,
    model: &dyn StateSpaceModel,
    config: &RbpfConfig,
) -> Result<StepInfo> {
    ens.step_index += 1;
    let mut rng = step_rng(ens.seed, ens.step_index);
    let n = ens.len();

    let prior_weights = ens.weights.clone();
    propagate_particles(ens, &config.sigma_theta, &mut rng)?;

    let mut log_weights = alloc::vec![f64::NEG_INFINITY; n];
    let mut log_likelihoods = alloc::vec![f64::NEG_INFINITY; n];
    let mut predictive_means = Vec::with_capacity(n);
    let mut predictive_covs = Vec::with_capacity(n);
    let mut max_raw = f64::NEG_INFINITY;

    for i in 0..n {
        let theta = &ens.particles[i];
        let outcome = ekf_predict(&ens.beliefs[i], u, theta, model).and_then(|pred| {
            ekf_update(&pred, y, theta, model).map(|(post, diag)| (post, diag))
        });
        match outcome {
            Ok((post, diag)) => {
                predictive_means.push(diag.predicted_measurement.clone());
                predictive_covs.push(diag.innovation_cov.clone());
                log_likelihoods[i] = diag.log_likelihood;
                let raw = libm::log(prior_weights[i].max(f64::MIN_POSITIVE)) + diag.log_likelihood;
                log_weights[i] = raw;
                if raw > max_raw {
                    max_raw = raw;
                }
                ens.beliefs[i] = post;
            }
            Err(_) => {
                // Degenerate particle: zero weight, belief frozen, fallback
                // predictive entry keeps the diagnostics arrays aligned.
                let theta_c = theta.constrained();
                let fallback_mean = model
                    .measurement(&ens.beliefs[i].mean, &theta_c)
                    .unwrap_or_else(|_| DVector::zeros(model.output_dim()));
                predictive_means.push(fallback_mean);
                predictive_covs.push(model.measurement_cov(&theta_c));
            }
        }
    }

    if !max_raw.is_finite() {
        return Err(Error::WeightCollapse {
            max_log_weight: max_raw,
        });
    }

    let mut sum = 0.0;
    for lw in &mut log_weights {
        *lw = libm::exp(*lw - max_raw);
        sum += *lw;
    }
    for (w, lw) in ens.weights.iter_mut().zip(&log_weights) {
        *w = lw / sum;
    }

    let ess_value = ess(&ens.weights);
    let resampled = ess_value < config.ess_threshold;
    if resampled {
        systematic_resample(ens, &mut rng);
    }

    Ok(StepInfo {
        ess: ess_value,
        resampled,
        predictive_means,
        predictive_covs,
        predictive_weights: prior_weights,
        log_likelihoods,
    })
}

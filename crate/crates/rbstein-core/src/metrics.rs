//! Posterior summaries and scoring.
//!
//! Every filter here leaves the state posterior as a weighted bank of
//! Gaussians, so the per-coordinate marginal is a 1D Gaussian mixture with
//! closed-form CRPS. The continuous ranked probability score of a forecast
//! CDF F at outcome y is integral (F(z) - 1{z >= y})^2 dz.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::rbpf::ParticleEnsemble;
use crate::theta::ThetaVector;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const SQRT_2PI: f64 = 2.5066282746310002;
/// 1/sqrt(pi), the CRPS entropy term of a standard normal.
const FRAC_1_SQRT_PI: f64 = 0.5641895835477563;

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    libm::exp(-0.5 * z * z) / (std * SQRT_2PI)
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Weighted sum of K Gaussians on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianMixture1D {
    pub fn new(means: Vec<f64>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mix = Self {
            means,
            stds,
            weights,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 {
            return Err(Error::Shape {
                what: "mixture components",
                expected: 1,
                got: 0,
            });
        }
        if self.stds.len() != k || self.weights.len() != k {
            return Err(Error::Shape {
                what: "mixture component arrays",
                expected: k,
                got: self.stds.len().min(self.weights.len()),
            });
        }
        let mut total = 0.0;
        for (&s, &w) in self.stds.iter().zip(&self.weights) {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Domain {
                    what: "mixture component std",
                    value: s,
                });
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Domain {
                    what: "mixture component weight",
                    value: w,
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain {
                what: "mixture weight sum",
                value: total,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * normal_pdf(x, self.means[i], self.stds[i]);
        }
        acc
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * normal_cdf(x, self.means[i], self.stds[i]);
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| m * w)
            .sum()
    }
}

/// Marginal of one state coordinate under the ensemble: component i is
/// the i-th belief's Gaussian marginal carrying that particle's weight.
pub fn state_marginal(ens: &ParticleEnsemble, coordinate: usize) -> Result<GaussianMixture1D> {
    let n = ens.len();
    let mut means = Vec::with_capacity(n);
    let mut stds = Vec::with_capacity(n);
    for belief in &ens.beliefs {
        if coordinate >= belief.mean.len() {
            return Err(Error::Shape {
                what: "marginal coordinate",
                expected: belief.mean.len(),
                got: coordinate,
            });
        }
        let var = belief.cov[(coordinate, coordinate)];
        if !(var >= 0.0) || !var.is_finite() {
            return Err(Error::BeliefInvalid {
                what: "negative or non-finite marginal variance",
            });
        }
        means.push(belief.mean[coordinate]);
        // Zero filtered variance is legitimate (exact observation); the
        // mixture type demands std > 0, so floor far below noise scales.
        stds.push(libm::sqrt(var).max(1e-154));
    }
    GaussianMixture1D::new(means, stds, ens.weights.clone())
}

/// Joint MAP over the particle bank: the mixture density evaluated at each
/// component's own mean is w_i (2 pi)^{-n/2} |P_i|^{-1/2}; the argmax
/// component's mean and particle are returned, ties by lowest index.
pub fn map_estimate(ens: &ParticleEnsemble) -> (DVector<f64>, ThetaVector) {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..ens.len() {
        let det = ens.beliefs[i].cov.determinant().max(0.0);
        // Height comparison only needs w / sqrt(det); the (2 pi)^{-n/2}
        // factor is shared. det -> 0 means an exactly observed state,
        // which dominates everything else.
        let score = if det > 0.0 {
            ens.weights[i] / libm::sqrt(det)
        } else if ens.weights[i] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    (ens.beliefs[best].mean.clone(), ens.particles[best].clone())
}

/// Closed-form CRPS of a single Gaussian: sigma [z(2 Phi(z) - 1)
/// + 2 phi(z) - 1/sqrt(pi)] with z = (y - mu)/sigma.
pub fn crps_gaussian(mean: f64, std: f64, y: f64) -> Result<f64> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Domain {
            what: "crps std",
            value: std,
        });
    }
    let z = (y - mean) / std;
    Ok(std * (z * (2.0 * normal_cdf(z, 0.0, 1.0) - 1.0) + 2.0 * normal_pdf(z, 0.0, 1.0)
        - FRAC_1_SQRT_PI))
}

/// E|X - d| for X ~ N(0, s^2): the pairwise building block of the
/// mixture CRPS.
fn expected_abs_gaussian(d: f64, s: f64) -> f64 {
    if s == 0.0 {
        return d.abs();
    }
    d * (2.0 * normal_cdf(d / s, 0.0, 1.0) - 1.0) + 2.0 * s * normal_pdf(d / s, 0.0, 1.0)
}

/// Closed-form CRPS of a Gaussian mixture via the kernel representation
/// CRPS = E|X - y| - (1/2) E|X - X'|, all pairwise terms analytic.
pub fn crps_mixture(mix: &GaussianMixture1D, y: f64) -> Result<f64> {
    mix.validate()?;
    let k = mix.len();
    let mut first = 0.0;
    for i in 0..k {
        first += mix.weights[i] * expected_abs_gaussian(y - mix.means[i], mix.stds[i]);
    }
    let mut second = 0.0;
    for i in 0..k {
        for j in 0..k {
            let s = libm::sqrt(mix.stds[i] * mix.stds[i] + mix.stds[j] * mix.stds[j]);
            second += mix.weights[i]
                * mix.weights[j]
                * expected_abs_gaussian(mix.means[i] - mix.means[j], s);
        }
    }
    Ok(first - 0.5 * second)
}

/// Root mean squared error per coordinate plus the aggregate over all
/// coordinates and entries.
pub fn rmse(estimates: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<(DVector<f64>, f64)> {
    if estimates.len() != truth.len() {
        return Err(Error::Shape {
            what: "rmse series length",
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::Shape {
            what: "rmse series length",
            expected: 1,
            got: 0,
        });
    }
    let dim = truth[0].len();
    let mut acc = DVector::<f64>::zeros(dim);
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != dim || t.len() != dim {
            return Err(Error::Shape {
                what: "rmse coordinate count",
                expected: dim,
                got: e.len().min(t.len()),
            });
        }
        let d = e - t;
        for c in 0..dim {
            acc[c] += d[c] * d[c];
        }
    }
    let n = estimates.len() as f64;
    let aggregate = libm::sqrt(acc.sum() / (n * dim as f64));
    let per_coord = acc.map(|v| libm::sqrt(v / n));
    Ok((per_coord, aggregate))
}

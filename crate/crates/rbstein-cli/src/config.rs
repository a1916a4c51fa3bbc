//! Study configuration: TOML file plus per-model defaults.
//!
//! Every field has a default so a bare command line works; a `--config`
//! file overrides the defaults and explicit flags override the file.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Bioreactor,
    NnBenchmark,
    Ar1,
    DampedIntegrator,
}

impl ModelId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "bioreactor" => Self::Bioreactor,
            "nn-benchmark" => Self::NnBenchmark,
            "ar1" => Self::Ar1,
            "damped-integrator" => Self::DampedIntegrator,
            other => bail!("unknown model id '{other}' (expected bioreactor, nn-benchmark, ar1, damped-integrator)"),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bioreactor => "bioreactor",
            Self::NnBenchmark => "nn-benchmark",
            Self::Ar1 => "ar1",
            Self::DampedIntegrator => "damped-integrator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterId {
    Ekf,
    Rbpf,
    Rbsgd,
    Rbfsgd,
}

impl FilterId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ekf" => Self::Ekf,
            "rbpf" => Self::Rbpf,
            "rbsgd" => Self::Rbsgd,
            "rbfsgd" => Self::Rbfsgd,
            other => bail!("unknown filter id '{other}' (expected ekf, rbpf, rbsgd, rbfsgd)"),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ekf => "ekf",
            Self::Rbpf => "rbpf",
            Self::Rbsgd => "rbsgd",
            Self::Rbfsgd => "rbfsgd",
        }
    }
}

/// Batch-reactor study settings: the true plant constants, the simulation
/// noise, and what the filters are told about all of it.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BioreactorConfig {
    pub mu_max: f64,
    pub ks: f64,
    pub ki: f64,
    pub y_xs: f64,
    pub y_px: f64,
    pub eta0: f64,
    pub eta_f: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Std of the per-step mixing-efficiency draw around its sigmoid mean.
    pub sigma_eta: f64,
    /// True process noise variance (per state coordinate).
    pub q: f64,
    /// True measurement noise variance.
    pub r: f64,
    pub x0: Vec<f64>,
    /// Process variance assumed by the filters. Inflated above `q` because
    /// the filter model treats eta as constant within a step while the
    /// plant redraws it, which shows up as extra state noise.
    pub filter_q: f64,
    pub filter_r: f64,
    /// Diagonal of the filters' initial state covariance.
    pub init_state_var: f64,
    /// Gaussian cloud for the initial eta particles.
    pub theta_prior_mean: f64,
    pub theta_prior_std: f64,
    /// Fixed eta used when running the plain EKF on this model.
    pub ekf_theta: f64,
}

impl Default for BioreactorConfig {
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
            sigma_eta: 0.01,
            q: 1e-6,
            r: 1e-6,
            // Small inoculum: biomass is still growing through the whole
            // horizon, so the mixing-efficiency transition stays observable.
            // Larger seeds exhaust the substrate within a few hours and the
            // parameter signal dies with it.
            x0: vec![0.002, 5.0, 0.0],
            filter_q: 1e-3,
            filter_r: 1e-4,
            init_state_var: 1e-4,
            theta_prior_mean: 0.8,
            theta_prior_std: 0.15,
            ekf_theta: 1.0,
        }
    }
}

/// Online network-training study settings.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnStudyConfig {
    /// True process noise variance.
    pub q: f64,
    /// True measurement noise variance.
    pub r: f64,
    pub x0: Vec<f64>,
    /// Process variance assumed by the augmented model.
    pub filter_q: f64,
    /// Baseline EKF process variance on the first two states.
    pub baseline_q: f64,
    /// Baseline EKF process variance on the third state, inflated to stand
    /// in for the dropped nonlinear term.
    pub baseline_q3: f64,
    /// Measurement variance given to the baseline EKF.
    pub baseline_r: f64,
    pub init_state_var: f64,
    /// Std of the initial network-weight cloud.
    pub weight_init_std: f64,
    /// Initial log measurement variance (0 = variance 1.0) and cloud std.
    pub log_r_init: f64,
    pub log_r_init_std: f64,
}

impl Default for NnStudyConfig {
    fn default() -> Self {
        Self {
            q: 1e-4,
            r: 0.1,
            x0: vec![0.0, 0.0, 0.0],
            filter_q: 1e-4,
            baseline_q: 1e-4,
            baseline_q3: 1e-2,
            baseline_r: 0.1,
            init_state_var: 0.1,
            weight_init_std: 0.3,
            log_r_init: 0.0,
            log_r_init_std: 0.3,
        }
    }
}

/// Scalar AR(1) sanity model.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ar1Config {
    pub theta: f64,
    pub q: f64,
    pub r: f64,
    pub x0: f64,
    pub init_mean: f64,
    pub init_var: f64,
    pub theta_prior_mean: f64,
    pub theta_prior_std: f64,
    pub ekf_theta: f64,
}

impl Default for Ar1Config {
    fn default() -> Self {
        Self {
            theta: 0.8,
            q: 0.05,
            r: 0.05,
            x0: 0.3,
            init_mean: 0.0,
            init_var: 1.0,
            theta_prior_mean: 0.7,
            theta_prior_std: 0.15,
            ekf_theta: 0.8,
        }
    }
}

/// Two-state linear model used for Kalman cross-checks.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampedIntegratorConfig {
    pub theta: f64,
    pub q: f64,
    pub r: f64,
    pub x0: Vec<f64>,
    pub init_var: f64,
    pub theta_prior_mean: f64,
    pub theta_prior_std: f64,
    pub ekf_theta: f64,
}

impl Default for DampedIntegratorConfig {
    fn default() -> Self {
        Self {
            theta: 0.9,
            q: 0.02,
            r: 0.04,
            x0: vec![1.0, 0.5],
            init_var: 1.0,
            theta_prior_mean: 0.85,
            theta_prior_std: 0.1,
            ekf_theta: 0.9,
        }
    }
}

/// Everything a study run needs besides the seed and the output directory.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: String,
    pub filter: String,
    pub horizon: usize,
    pub ts: f64,
    pub n_particles: usize,
    /// Inner transport iterations M per filter step (Stein filters).
    pub iterations: usize,
    pub epsilon: f64,
    /// Diagonal random-walk variance for the weighted baseline filter,
    /// applied in unconstrained parameter space.
    pub sigma_theta: f64,
    /// Resample when ESS drops below this fraction of N.
    pub ess_fraction: f64,
    pub use_prior: bool,
    /// Adam step adaptation for the plain Stein filter (optional there;
    /// the Fisher filter always uses its preconditioned update).
    pub step_adaptation: bool,
    /// Start the Fisher-Adam moments from zero at every filter step. The
    /// update's bias correction indexes by inner iteration, which assumes
    /// exactly this.
    pub reset_moments_each_step: bool,
    /// Recompute the transport Fisher matrix every inner iteration instead
    /// of freezing the step-initial one. Required when the particle count
    /// is below the parameter dimension: the frozen matrix is rank-deficient
    /// and later iterations leave its column space, where the ridge turns
    /// the preconditioner into a large-gain amplifier.
    pub refresh_fims_each_iteration: bool,
    /// Worker threads for the Monte Carlo study; 0 = one per core.
    pub n_threads: usize,
    /// Monte Carlo realization count.
    pub runs: usize,
    pub bioreactor: BioreactorConfig,
    pub nn: NnStudyConfig,
    pub ar1: Ar1Config,
    pub damped_integrator: DampedIntegratorConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: "bioreactor".into(),
            filter: "rbfsgd".into(),
            horizon: 200,
            ts: 0.2,
            n_particles: 5,
            iterations: 1,
            epsilon: 1e-3,
            sigma_theta: 1e-4,
            ess_fraction: 0.5,
            use_prior: true,
            step_adaptation: false,
            reset_moments_each_step: true,
            refresh_fims_each_iteration: false,
            n_threads: 0,
            runs: 50,
            bioreactor: BioreactorConfig::default(),
            nn: NnStudyConfig::default(),
            ar1: Ar1Config::default(),
            damped_integrator: DampedIntegratorConfig::default(),
        }
    }
}

impl Config {
    /// Defaults for the online network-training study: longer horizon at a
    /// faster sampling rate, a larger ensemble, and more transport
    /// iterations per measurement than the reactor study uses. Ten particles
    /// carry 42 parameters, so the transport Fisher must be refreshed per
    /// iteration (see the field note).
    pub fn nn_study_defaults() -> Self {
        Self {
            model: "nn-benchmark".into(),
            filter: "rbfsgd".into(),
            horizon: 1000,
            ts: 0.01,
            n_particles: 10,
            iterations: 15,
            epsilon: 2e-2,
            refresh_fims_each_iteration: true,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_over(path, Self::default())
    }

    /// Parse `path` as a partial config layered over `base`: fields the
    /// file sets win, everything else keeps the base value. Unknown keys
    /// are still rejected by the typed pass.
    pub fn load_over(path: &Path, base: Self) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: toml::Value = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let mut merged = toml::Value::try_from(&base).context("encoding defaults")?;
        merge_value(&mut merged, file);
        let cfg: Config = merged
            .try_into()
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_id(&self) -> Result<ModelId> {
        ModelId::parse(&self.model)
    }

    pub fn filter_id(&self) -> Result<FilterId> {
        FilterId::parse(&self.filter)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_id()?;
        self.filter_id()?;
        if self.horizon == 0 {
            bail!("horizon must be at least 1");
        }
        if !(self.ts > 0.0) {
            bail!("ts must be positive");
        }
        if self.n_particles == 0 {
            bail!("n_particles must be at least 1");
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            bail!("epsilon must be finite and non-negative");
        }
        if !(self.sigma_theta >= 0.0) {
            bail!("sigma_theta must be non-negative");
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            bail!("ess_fraction must lie in (0, 1]");
        }
        if self.bioreactor.x0.len() != 3 {
            bail!("bioreactor x0 must have 3 entries");
        }
        if self.nn.x0.len() != 3 {
            bail!("nn x0 must have 3 entries");
        }
        if self.damped_integrator.x0.len() != 2 {
            bail!("damped-integrator x0 must have 2 entries");
        }
        Ok(())
    }
}

/// Table entries from `from` replace or extend `into`; everything else
/// replaces wholesale (arrays included).
fn merge_value(into: &mut toml::Value, from: toml::Value) {
    match (into, from) {
        (toml::Value::Table(base), toml::Value::Table(file)) => {
            for (key, value) in file {
                match base.get_mut(&key) {
                    Some(slot) => merge_value(slot, value),
                    None => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg: Config = toml::from_str(
            "filter = \"rbpf\"\nhorizon = 50\n[bioreactor]\nsigma_eta = 0.02\n",
        )
        .unwrap();
        assert_eq!(cfg.filter, "rbpf");
        assert_eq!(cfg.horizon, 50);
        assert!((cfg.bioreactor.sigma_eta - 0.02).abs() < 1e-15);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.n_particles, 5);
        assert!((cfg.bioreactor.q - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("no_such_key = 1\n").is_err());
    }

    #[test]
    fn bad_ids_are_rejected() {
        let mut cfg = Config::default();
        cfg.model = "reactor".into();
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.filter = "ukf".into();
        assert!(cfg.validate().is_err());
    }
}

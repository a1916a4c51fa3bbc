//! Stream a trajectory through one filter and collect per-step records.
//!
//! The three particle filters share a driver parameterized by the step
//! function; the plain EKF gets its own, since it carries a single belief
//! and a fixed parameter vector instead of an ensemble.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use rbstein_core::ekf::{ekf_predict, ekf_update, GaussianBelief};
use rbstein_core::fisher::{rbfsgd_step, FisherConfig};
use rbstein_core::metrics::{crps_gaussian, crps_mixture, state_marginal};
use rbstein_core::model::StateSpaceModel;
use rbstein_core::rbpf::{rbpf_step, ParticleEnsemble, RbpfConfig, StepInfo};
use rbstein_core::sim::Trajectory;
use rbstein_core::svgd::{rbsgd_step, SvgdConfig};
use rbstein_core::theta::ThetaVector;

use crate::csvio::{numbered, Table};

/// Which transport rule moves the parameter particles.
#[derive(Debug, Clone)]
pub enum FilterChoice {
    Rbpf(RbpfConfig),
    Rbsgd(SvgdConfig),
    Rbfsgd(FisherConfig),
}

impl FilterChoice {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Rbpf(_) => "rbpf",
            Self::Rbsgd(_) => "rbsgd",
            Self::Rbfsgd(_) => "rbfsgd",
        }
    }
}

/// Shared starting point: one state belief and one parameter cloud, so
/// competing filters in a study are seeded identically.
#[derive(Debug, Clone)]
pub struct ParticleInit {
    pub belief: GaussianBelief,
    pub cloud: Vec<ThetaVector>,
}

/// Gaussian cloud in unconstrained space around `center`.
pub fn gaussian_cloud(
    center: &DVector<f64>,
    std: &DVector<f64>,
    n: usize,
    transform: Vec<rbstein_core::theta::SlotTransform>,
    rng: &mut ChaCha12Rng,
) -> Vec<ThetaVector> {
    (0..n)
        .map(|_| {
            let values = DVector::from_fn(center.len(), |i, _| {
                center[i] + std[i] * rng.sample::<f64, _>(StandardNormal)
            });
            // Transform tags were validated by the model; values are free.
            ThetaVector::new(values, transform.clone()).expect("cloud shape")
        })
        .collect()
}

/// One row of a filter run record.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub t: f64,
    pub x_true: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub theta_std: Vec<f64>,
    pub crps: Vec<f64>,
    pub ess: f64,
}

/// A finished (or interrupted) run with its per-step wall clock kept out
/// of the record table so reruns stay byte-identical.
#[derive(Debug, Clone)]
pub struct DriveOutcome {
    pub records: Vec<RunRecord>,
    pub wall_seconds: Vec<f64>,
    /// 1-based step index and message of the first failure, if any.
    pub diverged: Option<(usize, String)>,
}

impl DriveOutcome {
    pub fn steps_completed(&self) -> usize {
        self.records.len()
    }

    /// Time-averaged CRPS per tracked coordinate over completed steps.
    pub fn time_avg_crps(&self) -> Vec<f64> {
        if self.records.is_empty() {
            return Vec::new();
        }
        let dim = self.records[0].crps.len();
        let mut acc = vec![0.0; dim];
        for r in &self.records {
            for (a, c) in acc.iter_mut().zip(&r.crps) {
                *a += c;
            }
        }
        let n = self.records.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Constrained parameter mean at the last completed step.
    pub fn final_theta(&self) -> Vec<f64> {
        self.records
            .last()
            .map(|r| r.theta_mean.clone())
            .unwrap_or_default()
    }

    /// Record table with a stable, dimension-derived schema.
    pub fn to_table(&self) -> Table {
        let (nx, ntt, ntp) = self
            .records
            .first()
            .map(|r| (r.x_true.len(), r.theta_true.len(), r.theta_mean.len()))
            .unwrap_or((0, 0, 0));
        let mut cols = vec!["t".to_owned()];
        cols.extend(numbered("x_true", nx));
        cols.extend(numbered("theta_true", ntt));
        cols.extend(numbered("x_mean", nx));
        cols.extend(numbered("x_std", nx));
        cols.extend(numbered("theta_mean", ntp));
        cols.extend(numbered("theta_std", ntp));
        cols.extend(numbered("crps", nx));
        cols.push("ess".to_owned());
        let mut table = Table::new(cols);
        for r in &self.records {
            let mut row = vec![r.t];
            row.extend_from_slice(&r.x_true);
            row.extend_from_slice(&r.theta_true);
            row.extend_from_slice(&r.x_mean);
            row.extend_from_slice(&r.x_std);
            row.extend_from_slice(&r.theta_mean);
            row.extend_from_slice(&r.theta_std);
            row.extend_from_slice(&r.crps);
            row.push(r.ess);
            table.push(row);
        }
        table
    }
}

/// Weighted mean and std of each constrained parameter coordinate.
fn constrained_moments(ens: &ParticleEnsemble) -> (Vec<f64>, Vec<f64>) {
    let dim = ens.particles[0].len();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for (w, p) in ens.weights.iter().zip(&ens.particles) {
        let c = p.constrained();
        for i in 0..dim {
            mean[i] += w * c[i];
            sq[i] += w * c[i] * c[i];
        }
    }
    let std = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| (s - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

/// Mixture mean and std of each state coordinate (law of total variance).
fn state_moments(ens: &ParticleEnsemble) -> (Vec<f64>, Vec<f64>) {
    let dim = ens.beliefs[0].mean.len();
    let mut mean = vec![0.0; dim];
    let mut second = vec![0.0; dim];
    for (w, b) in ens.weights.iter().zip(&ens.beliefs) {
        for i in 0..dim {
            mean[i] += w * b.mean[i];
            second[i] += w * (b.cov[(i, i)] + b.mean[i] * b.mean[i]);
        }
    }
    let std = mean
        .iter()
        .zip(&second)
        .map(|(m, s)| (s - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

fn ensemble_record(
    ens: &ParticleEnsemble,
    traj: &Trajectory,
    k: usize,
    info: &StepInfo,
) -> Result<RunRecord, rbstein_core::Error> {
    let (x_mean, x_std) = state_moments(ens);
    let (theta_mean, theta_std) = constrained_moments(ens);
    let nx = x_mean.len();
    let mut crps = Vec::with_capacity(nx);
    for c in 0..nx {
        let marginal = state_marginal(ens, c)?;
        crps.push(crps_mixture(&marginal, traj.states[k][c])?);
    }
    Ok(RunRecord {
        t: traj.times[k],
        x_true: traj.states[k].as_slice().to_vec(),
        theta_true: traj.true_params[k].as_slice().to_vec(),
        x_mean,
        x_std,
        theta_mean,
        theta_std,
        crps,
        ess: info.ess,
    })
}

/// Run one particle filter over the whole trajectory. Failures stop the
/// run; everything recorded up to that point is kept.
pub fn drive_particle_filter(
    model: &dyn StateSpaceModel,
    traj: &Trajectory,
    init: &ParticleInit,
    choice: &FilterChoice,
    seed: u64,
) -> DriveOutcome {
    let mut ens = ParticleEnsemble::init(init.cloud.clone(), init.belief.clone(), seed);
    let mut out = DriveOutcome {
        records: Vec::with_capacity(traj.len()),
        wall_seconds: Vec::with_capacity(traj.len()),
        diverged: None,
    };
    for k in 0..traj.len() {
        let y = &traj.measurements[k];
        let u = &traj.inputs[k];
        let started = Instant::now();
        let stepped = match choice {
            FilterChoice::Rbpf(cfg) => rbpf_step(&mut ens, y, u, model, cfg),
            FilterChoice::Rbsgd(cfg) => rbsgd_step(&mut ens, y, u, model, cfg),
            FilterChoice::Rbfsgd(cfg) => rbfsgd_step(&mut ens, y, u, model, cfg),
        };
        let info = match stepped {
            Ok(info) => info,
            Err(e) => {
                out.diverged = Some((k + 1, e.to_string()));
                break;
            }
        };
        let wall = started.elapsed().as_secs_f64();
        match ensemble_record(&ens, traj, k, &info) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                out.diverged = Some((k + 1, e.to_string()));
                break;
            }
        }
        out.wall_seconds.push(wall);
    }
    out
}

/// Run a plain EKF with a fixed parameter vector over the trajectory.
/// `theta` may be empty for models without parameters.
pub fn drive_ekf(
    model: &dyn StateSpaceModel,
    traj: &Trajectory,
    belief0: &GaussianBelief,
    theta: &ThetaVector,
) -> DriveOutcome {
    let theta_c = theta.constrained();
    let ntp = theta_c.len();
    let mut belief = belief0.clone();
    let mut out = DriveOutcome {
        records: Vec::with_capacity(traj.len()),
        wall_seconds: Vec::with_capacity(traj.len()),
        diverged: None,
    };
    for k in 0..traj.len() {
        let started = Instant::now();
        let stepped = ekf_predict(&belief, &traj.inputs[k], theta, model)
            .and_then(|pred| ekf_update(&pred, &traj.measurements[k], theta, model));
        let (updated, _) = match stepped {
            Ok(v) => v,
            Err(e) => {
                out.diverged = Some((k + 1, e.to_string()));
                break;
            }
        };
        belief = updated;
        let wall = started.elapsed().as_secs_f64();

        let nx = belief.mean.len();
        let mut x_std = Vec::with_capacity(nx);
        let mut crps = Vec::with_capacity(nx);
        let mut failed = None;
        for c in 0..nx {
            // Zero filtered variance is legitimate; the scoring rule needs
            // std > 0, so floor far below any noise scale.
            let std = belief.cov[(c, c)].max(0.0).sqrt().max(1e-154);
            x_std.push(std);
            match crps_gaussian(belief.mean[c], std, traj.states[k][c]) {
                Ok(v) => crps.push(v),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            out.diverged = Some((k + 1, e.to_string()));
            break;
        }
        out.records.push(RunRecord {
            t: traj.times[k],
            x_true: traj.states[k].as_slice().to_vec(),
            theta_true: traj.true_params[k].as_slice().to_vec(),
            x_mean: belief.mean.as_slice().to_vec(),
            x_std,
            theta_mean: theta_c.as_slice().to_vec(),
            theta_std: vec![0.0; ntp],
            crps,
            ess: 1.0,
        });
        out.wall_seconds.push(wall);
    }
    out
}

/// Diagonal covariance helper.
pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rbstein_core::rbpf::step_rng;
    use rbstein_core::sim::{simulate, SimSystem};
    use rbstein_core::systems::Ar1Model;
    use rbstein_core::theta::SlotTransform;

    fn ar1_traj(seed: u64) -> Trajectory {
        let sys = SimSystem::Ar1 {
            theta: 0.8,
            q: 0.05,
            r: 0.05,
            x0: 0.3,
        };
        simulate(&sys, 30, 1.0, seed).unwrap()
    }

    fn ar1_init(n: usize, seed: u64) -> ParticleInit {
        let mut rng = step_rng(seed, u64::MAX);
        let cloud = gaussian_cloud(
            &DVector::from_element(1, 0.7),
            &DVector::from_element(1, 0.15),
            n,
            vec![SlotTransform::Identity],
            &mut rng,
        );
        ParticleInit {
            belief: GaussianBelief {
                mean: DVector::zeros(1),
                cov: DMatrix::identity(1, 1),
            },
            cloud,
        }
    }

    #[test]
    fn cloud_is_seed_deterministic() {
        let a = ar1_init(5, 9).cloud;
        let b = ar1_init(5, 9).cloud;
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn particle_driver_records_every_step() {
        let traj = ar1_traj(3);
        let model = Ar1Model { q: 0.05, r: 0.05 };
        let init = ar1_init(8, 3);
        let out = drive_particle_filter(
            &model,
            &traj,
            &init,
            &FilterChoice::Rbsgd(SvgdConfig::default()),
            3,
        );
        assert!(out.diverged.is_none());
        assert_eq!(out.records.len(), 30);
        assert_eq!(out.wall_seconds.len(), 30);
        let r = &out.records[10];
        assert_eq!(r.x_true.len(), 1);
        assert_eq!(r.crps.len(), 1);
        assert!(r.crps[0] >= 0.0);
        assert!(r.x_std[0] > 0.0);
        assert_eq!(r.ess, 8.0);
    }

    #[test]
    fn ekf_driver_matches_single_particle_zero_step_stein() {
        // With one particle and epsilon = 0 the Stein filter is exactly one
        // EKF, so the drivers must agree on every recorded moment.
        let traj = ar1_traj(11);
        let model = Ar1Model { q: 0.05, r: 0.05 };
        let theta = ThetaVector::identity(DVector::from_element(1, 0.73));
        let belief = GaussianBelief {
            mean: DVector::zeros(1),
            cov: DMatrix::identity(1, 1),
        };
        let init = ParticleInit {
            belief: belief.clone(),
            cloud: vec![theta.clone()],
        };
        let cfg = SvgdConfig {
            epsilon: 0.0,
            iterations: 1,
            use_prior: false,
            step_adaptation: false,
        };
        let stein = drive_particle_filter(&model, &traj, &init, &FilterChoice::Rbsgd(cfg), 1);
        let ekf = drive_ekf(&model, &traj, &belief, &theta);
        assert!(stein.diverged.is_none() && ekf.diverged.is_none());
        for (a, b) in stein.records.iter().zip(&ekf.records) {
            assert!((a.x_mean[0] - b.x_mean[0]).abs() < 1e-12);
            assert!((a.x_std[0] - b.x_std[0]).abs() < 1e-12);
            assert!((a.crps[0] - b.crps[0]).abs() < 1e-12);
            assert_eq!(a.theta_mean, b.theta_mean);
        }
    }

    #[test]
    fn table_schema_is_dimension_derived() {
        let traj = ar1_traj(5);
        let model = Ar1Model { q: 0.05, r: 0.05 };
        let init = ar1_init(4, 5);
        let out = drive_particle_filter(
            &model,
            &traj,
            &init,
            &FilterChoice::Rbpf(RbpfConfig {
                sigma_theta: DMatrix::from_element(1, 1, 1e-4),
                ess_threshold: 2.0,
            }),
            5,
        );
        let table = out.to_table();
        assert_eq!(
            table.columns,
            vec![
                "t",
                "x_true_1",
                "theta_true_1",
                "x_mean_1",
                "x_std_1",
                "theta_mean_1",
                "theta_std_1",
                "crps_1",
                "ess"
            ]
        );
        assert_eq!(table.rows.len(), out.records.len());
    }

    #[test]
    fn identical_runs_produce_identical_tables() {
        let traj = ar1_traj(7);
        let model = Ar1Model { q: 0.05, r: 0.05 };
        let choice = FilterChoice::Rbpf(RbpfConfig {
            sigma_theta: DMatrix::from_element(1, 1, 1e-4),
            ess_threshold: 3.0,
        });
        let a = drive_particle_filter(&model, &traj, &ar1_init(6, 7), &choice, 7);
        let b = drive_particle_filter(&model, &traj, &ar1_init(6, 7), &choice, 7);
        assert_eq!(a.to_table().to_csv(), b.to_table().to_csv());
    }

    #[test]
    fn summary_quantities() {
        let traj = ar1_traj(13);
        let model = Ar1Model { q: 0.05, r: 0.05 };
        let out = drive_particle_filter(
            &model,
            &traj,
            &ar1_init(5, 13),
            &FilterChoice::Rbfsgd(FisherConfig::default()),
            13,
        );
        let avg = out.time_avg_crps();
        assert_eq!(avg.len(), 1);
        let manual: f64 =
            out.records.iter().map(|r| r.crps[0]).sum::<f64>() / out.records.len() as f64;
        assert!((avg[0] - manual).abs() < 1e-15);
        assert_eq!(out.final_theta(), out.records.last().unwrap().theta_mean);
        assert_eq!(out.steps_completed(), 30);
    }

    #[test]
    fn gaussian_cloud_respects_transform_tags() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let cloud = gaussian_cloud(
            &DVector::from_row_slice(&[0.0, -1.0]),
            &DVector::from_row_slice(&[0.1, 0.2]),
            3,
            vec![SlotTransform::Identity, SlotTransform::LogVariance],
            &mut rng,
        );
        for p in &cloud {
            let c = p.constrained();
            assert_eq!(c[0], p.values[0]);
            assert!(c[1] > 0.0);
        }
    }
}

//! The benchmark studies behind the CLI subcommands: trajectory
//! generation, single filter runs, the paired Monte Carlo comparison, and
//! the online network-training study.
//!
//! Every output lands under one directory with `{study}_{filter}_{seed}`
//! naming. Record CSVs are byte-deterministic in (config, seed); wall
//! clocks go to `.walltime.txt` sidecars so timing never touches them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

use rbstein_core::ekf::GaussianBelief;
use rbstein_core::fisher::FisherConfig;
use rbstein_core::model::StateSpaceModel;
use rbstein_core::rbpf::{step_rng, RbpfConfig};
use rbstein_core::sim::{simulate, SimSystem, Trajectory};
use rbstein_core::svgd::SvgdConfig;
use rbstein_core::systems::{
    BioreactorModel, BioreactorParams, DampedIntegratorModel, NnAugmentedModel, NnLinearBaseline,
    nn_nonlinear_term, Ar1Model,
};
use rbstein_core::theta::{SlotTransform, ThetaVector};

use crate::config::{Config, FilterId, ModelId};
use crate::csvio::{numbered, Table};
use crate::driver::{
    drive_ekf, drive_particle_filter, gaussian_cloud, DriveOutcome, FilterChoice, ParticleInit,
};

/// Build the ground-truth system declared by the config.
pub fn build_system(cfg: &Config) -> Result<SimSystem> {
    Ok(match cfg.model_id()? {
        ModelId::Bioreactor => {
            let b = &cfg.bioreactor;
            SimSystem::Bioreactor {
                params: bioreactor_params(cfg),
                sigma_eta: b.sigma_eta,
                q: b.q,
                r: b.r,
                x0: DVector::from_row_slice(&b.x0),
            }
        }
        ModelId::NnBenchmark => SimSystem::NnBenchmark {
            q: cfg.nn.q,
            r: cfg.nn.r,
            x0: DVector::from_row_slice(&cfg.nn.x0),
        },
        ModelId::Ar1 => SimSystem::Ar1 {
            theta: cfg.ar1.theta,
            q: cfg.ar1.q,
            r: cfg.ar1.r,
            x0: cfg.ar1.x0,
        },
        ModelId::DampedIntegrator => SimSystem::DampedIntegrator {
            theta: cfg.damped_integrator.theta,
            q: cfg.damped_integrator.q,
            r: cfg.damped_integrator.r,
            x0: DVector::from_row_slice(&cfg.damped_integrator.x0),
        },
    })
}

fn bioreactor_params(cfg: &Config) -> BioreactorParams {
    let b = &cfg.bioreactor;
    BioreactorParams {
        mu_max: b.mu_max,
        ks: b.ks,
        ki: b.ki,
        y_xs: b.y_xs,
        y_px: b.y_px,
        eta0: b.eta0,
        eta_f: b.eta_f,
        alpha: b.alpha,
        beta: b.beta,
    }
}

/// The model handed to the filter. The plain EKF on the network benchmark
/// gets the linear baseline (the nonlinearity is left to process noise);
/// every other combination sees the parameterized model.
pub fn build_filter_model(cfg: &Config, filter: FilterId) -> Result<Box<dyn StateSpaceModel>> {
    Ok(match cfg.model_id()? {
        ModelId::Bioreactor => {
            let b = &cfg.bioreactor;
            Box::new(BioreactorModel::new(
                bioreactor_params(cfg),
                cfg.ts,
                b.filter_q,
                b.filter_r,
            ))
        }
        ModelId::NnBenchmark => {
            if filter == FilterId::Ekf {
                let n = &cfg.nn;
                let mut base = NnLinearBaseline::new(cfg.ts, n.baseline_q, n.baseline_r);
                base.process_cov[(2, 2)] = n.baseline_q3;
                Box::new(base)
            } else {
                Box::new(NnAugmentedModel::new(cfg.ts, cfg.nn.filter_q))
            }
        }
        ModelId::Ar1 => Box::new(Ar1Model {
            q: cfg.ar1.q,
            r: cfg.ar1.r,
        }),
        ModelId::DampedIntegrator => Box::new(DampedIntegratorModel {
            ts: cfg.ts,
            q: cfg.damped_integrator.q,
            r: cfg.damped_integrator.r,
        }),
    })
}

/// Initial belief and parameter cloud for the chosen model. The cloud is
/// drawn from a stream reserved off the run seed, so competing filters on
/// the same seed start from the identical ensemble.
pub fn build_init(cfg: &Config, seed: u64) -> Result<ParticleInit> {
    let mut rng = step_rng(seed, u64::MAX);
    let n = cfg.n_particles;
    Ok(match cfg.model_id()? {
        ModelId::Bioreactor => {
            let b = &cfg.bioreactor;
            ParticleInit {
                belief: GaussianBelief {
                    mean: DVector::from_row_slice(&b.x0),
                    cov: DMatrix::identity(3, 3) * b.init_state_var,
                },
                cloud: gaussian_cloud(
                    &DVector::from_element(1, b.theta_prior_mean),
                    &DVector::from_element(1, b.theta_prior_std),
                    n,
                    vec![SlotTransform::Identity],
                    &mut rng,
                ),
            }
        }
        ModelId::NnBenchmark => {
            let c = &cfg.nn;
            let dim = 42;
            let mut center = DVector::zeros(dim);
            center[dim - 1] = c.log_r_init;
            let mut std = DVector::from_element(dim, c.weight_init_std);
            std[dim - 1] = c.log_r_init_std;
            let mut transform = vec![SlotTransform::Identity; dim - 1];
            transform.push(SlotTransform::LogVariance);
            ParticleInit {
                belief: GaussianBelief {
                    mean: DVector::from_row_slice(&c.x0),
                    cov: DMatrix::identity(3, 3) * c.init_state_var,
                },
                cloud: gaussian_cloud(&center, &std, n, transform, &mut rng),
            }
        }
        ModelId::Ar1 => {
            let a = &cfg.ar1;
            ParticleInit {
                belief: GaussianBelief {
                    mean: DVector::from_element(1, a.init_mean),
                    cov: DMatrix::from_element(1, 1, a.init_var),
                },
                cloud: gaussian_cloud(
                    &DVector::from_element(1, a.theta_prior_mean),
                    &DVector::from_element(1, a.theta_prior_std),
                    n,
                    vec![SlotTransform::Identity],
                    &mut rng,
                ),
            }
        }
        ModelId::DampedIntegrator => {
            let d = &cfg.damped_integrator;
            ParticleInit {
                belief: GaussianBelief {
                    mean: DVector::from_row_slice(&d.x0),
                    cov: DMatrix::identity(2, 2) * d.init_var,
                },
                cloud: gaussian_cloud(
                    &DVector::from_element(1, d.theta_prior_mean),
                    &DVector::from_element(1, d.theta_prior_std),
                    n,
                    vec![SlotTransform::Identity],
                    &mut rng,
                ),
            }
        }
    })
}

/// Map the config onto one of the particle transport rules.
pub fn build_filter_choice(cfg: &Config, filter: FilterId, param_dim: usize) -> Result<FilterChoice> {
    Ok(match filter {
        FilterId::Ekf => bail!("the plain EKF is not a particle filter"),
        FilterId::Rbpf => FilterChoice::Rbpf(RbpfConfig {
            sigma_theta: DMatrix::identity(param_dim, param_dim) * cfg.sigma_theta,
            ess_threshold: cfg.ess_fraction * cfg.n_particles as f64,
        }),
        FilterId::Rbsgd => FilterChoice::Rbsgd(SvgdConfig {
            epsilon: cfg.epsilon,
            iterations: cfg.iterations,
            use_prior: cfg.use_prior,
            step_adaptation: cfg.step_adaptation,
        }),
        FilterId::Rbfsgd => FilterChoice::Rbfsgd(FisherConfig {
            epsilon: cfg.epsilon,
            iterations: cfg.iterations,
            use_prior: cfg.use_prior,
            reset_moments_each_step: cfg.reset_moments_each_step,
            refresh_fims_each_iteration: cfg.refresh_fims_each_iteration,
            ..FisherConfig::default()
        }),
    })
}

/// Fixed parameter vector for plain-EKF runs.
pub fn ekf_theta(cfg: &Config) -> Result<ThetaVector> {
    Ok(match cfg.model_id()? {
        ModelId::Bioreactor => {
            ThetaVector::identity(DVector::from_element(1, cfg.bioreactor.ekf_theta))
        }
        // The baseline model carries no parameters at all.
        ModelId::NnBenchmark => ThetaVector::identity(DVector::zeros(0)),
        ModelId::Ar1 => ThetaVector::identity(DVector::from_element(1, cfg.ar1.ekf_theta)),
        ModelId::DampedIntegrator => {
            ThetaVector::identity(DVector::from_element(1, cfg.damped_integrator.ekf_theta))
        }
    })
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Columns `base1..basen` (the trajectory header style).
fn bare(base: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{base}{i}")).collect()
}

/// Write a trajectory as `t,x1..,y1..,u1..,theta1..` plus a metadata sidecar.
pub fn write_trajectory(traj: &Trajectory, model: ModelId, path: &Path) -> Result<()> {
    let (nx, ny, nu, nt) = (
        traj.states.first().map_or(0, |v| v.len()),
        traj.measurements.first().map_or(0, |v| v.len()),
        traj.inputs.first().map_or(0, |v| v.len()),
        traj.true_params.first().map_or(0, |v| v.len()),
    );
    let mut cols = vec!["t".to_owned()];
    cols.extend(bare("x", nx));
    cols.extend(bare("y", ny));
    cols.extend(bare("u", nu));
    cols.extend(bare("theta", nt));
    let mut table = Table::new(cols);
    for k in 0..traj.len() {
        let mut row = vec![traj.times[k]];
        row.extend_from_slice(traj.states[k].as_slice());
        row.extend_from_slice(traj.measurements[k].as_slice());
        row.extend_from_slice(traj.inputs[k].as_slice());
        row.extend_from_slice(traj.true_params[k].as_slice());
        table.push(row);
    }
    table.write(path)?;
    let meta = format!(
        "model: {}\nseed: {}\nts: {}\nhorizon: {}\n",
        model.as_str(),
        traj.seed,
        traj.ts,
        traj.len()
    );
    fs::write(sidecar(path, "meta.txt"), meta)?;
    Ok(())
}

/// Read a trajectory CSV written by [`write_trajectory`].
pub fn read_trajectory(path: &Path, ts: f64, seed: u64) -> Result<Trajectory> {
    let table = Table::read(path)?;
    let count = |base: &str| {
        table
            .columns
            .iter()
            .filter(|c| {
                c.strip_prefix(base)
                    .is_some_and(|s| !s.is_empty() && s.chars().all(|ch| ch.is_ascii_digit()))
            })
            .count()
    };
    let (nx, ny, nu, nt) = (count("x"), count("y"), count("u"), count("theta"));
    if nx == 0 || ny == 0 {
        bail!("trajectory file lacks state or measurement columns");
    }
    let t_idx = table.col("t")?;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        measurements: Vec::new(),
        inputs: Vec::new(),
        true_params: Vec::new(),
        initial_state: DVector::zeros(nx),
        ts,
        seed,
    };
    let slice = |row: &[f64], start: usize, len: usize| {
        DVector::from_row_slice(&row[start..start + len])
    };
    for row in &table.rows {
        traj.times.push(row[t_idx]);
        let mut at = t_idx + 1;
        traj.states.push(slice(row, at, nx));
        at += nx;
        traj.measurements.push(slice(row, at, ny));
        at += ny;
        traj.inputs.push(slice(row, at, nu));
        at += nu;
        traj.true_params.push(slice(row, at, nt));
    }
    Ok(traj)
}

fn sidecar(csv_path: &Path, ext: &str) -> PathBuf {
    csv_path.with_extension(ext)
}

fn write_walltime(path: &Path, wall: &[f64]) -> Result<()> {
    let mut text = String::new();
    let total: f64 = wall.iter().sum();
    let _ = writeln!(text, "total_seconds: {total}");
    for (i, w) in wall.iter().enumerate() {
        let _ = writeln!(text, "step {} {w}", i + 1);
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_run_summary(path: &Path, cfg: &Config, filter: &str, seed: u64, out: &DriveOutcome) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "model: {}", cfg.model);
    let _ = writeln!(text, "filter: {filter}");
    let _ = writeln!(text, "seed: {seed}");
    let _ = writeln!(text, "steps_completed: {}", out.steps_completed());
    match &out.diverged {
        Some((step, msg)) => {
            let _ = writeln!(text, "diverged_at: {step}");
            let _ = writeln!(text, "diverged_error: {msg}");
        }
        None => {
            let _ = writeln!(text, "diverged_at: none");
        }
    }
    for (i, v) in out.time_avg_crps().iter().enumerate() {
        let _ = writeln!(text, "time_avg_crps_{}: {v}", i + 1);
    }
    for (i, v) in out.final_theta().iter().enumerate() {
        let _ = writeln!(text, "final_theta_{}: {v}", i + 1);
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `simulate`: roll out the configured system and persist the trajectory.
pub fn cmd_simulate(cfg: &Config, seed: u64, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let model = cfg.model_id()?;
    let system = build_system(cfg)?;
    let traj = simulate(&system, cfg.horizon, cfg.ts, seed)?;
    let path = out.join(format!("{}_trajectory_{seed}.csv", model.as_str()));
    write_trajectory(&traj, model, &path)?;
    Ok(path)
}

/// Everything `run-filter` leaves on disk, plus the in-memory outcome for
/// callers that keep going (tests, studies).
pub struct RunFilterOutput {
    pub record_path: PathBuf,
    pub outcome: DriveOutcome,
}

/// `run-filter`: simulate (or reuse) a trajectory, stream it through the
/// configured filter, and persist record + summary + wall-clock sidecar.
pub fn cmd_run_filter(
    cfg: &Config,
    seed: u64,
    out: &Path,
    trajectory: Option<&Path>,
) -> Result<RunFilterOutput> {
    ensure_dir(out)?;
    let model_id = cfg.model_id()?;
    let filter_id = cfg.filter_id()?;
    let traj = match trajectory {
        Some(path) => read_trajectory(path, cfg.ts, seed)?,
        None => simulate(&build_system(cfg)?, cfg.horizon, cfg.ts, seed)?,
    };
    let model = build_filter_model(cfg, filter_id)?;
    let outcome = if filter_id == FilterId::Ekf {
        let init = build_init(cfg, seed)?;
        drive_ekf(model.as_ref(), &traj, &init.belief, &ekf_theta(cfg)?)
    } else {
        let init = build_init(cfg, seed)?;
        let choice = build_filter_choice(cfg, filter_id, model.param_dim())?;
        drive_particle_filter(model.as_ref(), &traj, &init, &choice, seed)
    };
    let stem = format!("{}_{}_{seed}", model_id.as_str(), filter_id.as_str());
    let record_path = out.join(format!("{stem}.csv"));
    outcome.to_table().write(&record_path)?;
    write_run_summary(
        &sidecar(&record_path, "summary.txt"),
        cfg,
        filter_id.as_str(),
        seed,
        &outcome,
    )?;
    write_walltime(&sidecar(&record_path, "walltime.txt"), &outcome.wall_seconds)?;
    Ok(RunFilterOutput {
        record_path,
        outcome,
    })
}

/// Per-run result inside the Monte Carlo study.
#[derive(Debug, Clone)]
pub struct McRun {
    pub seed: u64,
    /// Time-averaged CRPS per state coordinate; empty if the run failed.
    pub crps: Vec<f64>,
    pub diverged_at: Option<usize>,
}

impl McRun {
    /// Scalar score: CRPS averaged over coordinates.
    pub fn score(&self) -> Option<f64> {
        if self.diverged_at.is_some() || self.crps.is_empty() {
            None
        } else {
            Some(self.crps.iter().sum::<f64>() / self.crps.len() as f64)
        }
    }
}

#[derive(Debug, Clone)]
pub struct McFilterSummary {
    pub filter: FilterId,
    pub runs: Vec<McRun>,
}

impl McFilterSummary {
    pub fn scores(&self) -> Vec<f64> {
        self.runs.iter().filter_map(McRun::score).collect()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.diverged_at.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct McOutcome {
    pub filters: Vec<McFilterSummary>,
    pub quartiles_path: PathBuf,
    pub summary_path: PathBuf,
}

impl McOutcome {
    pub fn by_filter(&self, id: FilterId) -> &McFilterSummary {
        self.filters
            .iter()
            .find(|f| f.filter == id)
            .expect("all three filters present")
    }

    /// Fraction of paired runs where `a` scored strictly below `b`.
    pub fn win_rate(&self, a: FilterId, b: FilterId) -> f64 {
        let fa = self.by_filter(a);
        let fb = self.by_filter(b);
        let mut wins = 0usize;
        let mut pairs = 0usize;
        for (ra, rb) in fa.runs.iter().zip(&fb.runs) {
            if let (Some(sa), Some(sb)) = (ra.score(), rb.score()) {
                pairs += 1;
                if sa < sb {
                    wins += 1;
                }
            }
        }
        if pairs == 0 {
            0.0
        } else {
            wins as f64 / pairs as f64
        }
    }
}

/// Median of already-sorted data by linear interpolation.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
    quantile(&v, 0.5)
}

const MC_FILTERS: [FilterId; 3] = [FilterId::Rbpf, FilterId::Rbsgd, FilterId::Rbfsgd];

/// `monte-carlo`: R paired realizations of the configured system, each
/// streamed through all three particle filters from identical ensembles.
/// Per-run failures are recorded and the study keeps going.
pub fn cmd_monte_carlo(cfg: &Config, master_seed: u64, out: &Path) -> Result<McOutcome> {
    if cfg.runs < 2 {
        bail!("monte-carlo needs at least 2 runs");
    }
    ensure_dir(out)?;
    let model_id = cfg.model_id()?;

    // Reserve one seed per realization up front so the assignment does not
    // depend on scheduling.
    let mut seeder = ChaCha12Rng::seed_from_u64(master_seed);
    let run_seeds: Vec<u64> = (0..cfg.runs).map(|_| seeder.next_u64()).collect();

    let worker = |seed: u64| -> Result<Vec<McRun>> {
        let system = build_system(cfg)?;
        let traj = simulate(&system, cfg.horizon, cfg.ts, seed)?;
        let init = build_init(cfg, seed)?;
        let mut per_filter = Vec::with_capacity(MC_FILTERS.len());
        for id in MC_FILTERS {
            let model = build_filter_model(cfg, id)?;
            let choice = build_filter_choice(cfg, id, model.param_dim())?;
            let outcome = drive_particle_filter(model.as_ref(), &traj, &init, &choice, seed);
            per_filter.push(McRun {
                seed,
                crps: outcome.time_avg_crps(),
                diverged_at: outcome.diverged.as_ref().map(|(s, _)| *s),
            });
        }
        Ok(per_filter)
    };

    let results: Vec<Vec<McRun>> = if cfg.n_threads == 1 {
        run_seeds.iter().map(|&s| worker(s)).collect::<Result<_>>()?
    } else {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if cfg.n_threads > 0 {
            pool = pool.num_threads(cfg.n_threads);
        }
        let pool = pool.build().context("building worker pool")?;
        pool.install(|| {
            use rayon::prelude::*;
            run_seeds
                .par_iter()
                .map(|&s| worker(s))
                .collect::<Result<Vec<_>>>()
        })?
    };

    // A simulation failure poisons the whole study (it is a config
    // problem); filter failures were already captured per run.
    let mut filters: Vec<McFilterSummary> = MC_FILTERS
        .iter()
        .map(|&filter| McFilterSummary {
            filter,
            runs: Vec::with_capacity(cfg.runs),
        })
        .collect();
    for per_filter in results {
        for (slot, run) in filters.iter_mut().zip(per_filter) {
            slot.runs.push(run);
        }
    }

    // Per-filter per-run CRPS tables.
    let nx = filters[0]
        .runs
        .iter()
        .find_map(|r| (!r.crps.is_empty()).then_some(r.crps.len()))
        .unwrap_or(0);
    for f in &filters {
        let mut cols = vec!["run".to_owned(), "seed".to_owned()];
        cols.extend(numbered("crps", nx));
        cols.push("crps_mean".to_owned());
        cols.push("diverged_at".to_owned());
        let mut table = Table::new(cols);
        for (i, run) in f.runs.iter().enumerate() {
            let mut row = vec![i as f64, run.seed as f64];
            if run.crps.len() == nx {
                row.extend_from_slice(&run.crps);
            } else {
                row.extend(std::iter::repeat(f64::NAN).take(nx));
            }
            row.push(run.score().unwrap_or(f64::NAN));
            row.push(run.diverged_at.map_or(-1.0, |s| s as f64));
            table.push(row);
        }
        table.write(&out.join(format!(
            "{}-mc_{}_{master_seed}.csv",
            model_id.as_str(),
            f.filter.as_str()
        )))?;
    }

    // Cross-run quartiles per filter and coordinate for the boxplots.
    // filter_id follows MC_FILTERS order: 0 = rbpf, 1 = rbsgd, 2 = rbfsgd.
    let quartiles_path = out.join(format!("{}-mc_quartiles_{master_seed}.csv", model_id.as_str()));
    let mut qt = Table::new(
        ["filter_id", "coord", "min", "q1", "median", "q3", "max"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (fi, f) in filters.iter().enumerate() {
        for c in 0..=nx {
            // coord 1..nx are the state coordinates, coord 0 the mean score.
            let mut vals: Vec<f64> = f
                .runs
                .iter()
                .filter_map(|r| {
                    if c == 0 {
                        r.score()
                    } else {
                        (r.diverged_at.is_none() && r.crps.len() == nx).then(|| r.crps[c - 1])
                    }
                })
                .collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite crps"));
            qt.push(vec![
                fi as f64,
                c as f64,
                vals[0],
                quantile(&vals, 0.25),
                quantile(&vals, 0.5),
                quantile(&vals, 0.75),
                vals[vals.len() - 1],
            ]);
        }
    }
    qt.write(&quartiles_path)?;

    // Study-level structured text summary.
    let summary_path = out.join(format!("{}-mc_summary_{master_seed}.txt", model_id.as_str()));
    let mut text = String::new();
    let _ = writeln!(text, "study: monte-carlo");
    let _ = writeln!(text, "model: {}", cfg.model);
    let _ = writeln!(text, "master_seed: {master_seed}");
    let _ = writeln!(text, "runs: {}", cfg.runs);
    let _ = writeln!(text, "filters: rbpf rbsgd rbfsgd");
    let outcome = McOutcome {
        filters,
        quartiles_path: quartiles_path.clone(),
        summary_path: summary_path.clone(),
    };
    for f in &outcome.filters {
        let scores = f.scores();
        let _ = writeln!(
            text,
            "median_crps_{}: {}",
            f.filter.as_str(),
            if scores.is_empty() {
                f64::NAN
            } else {
                median(&scores)
            }
        );
        let _ = writeln!(text, "failures_{}: {}", f.filter.as_str(), f.failures());
    }
    let _ = writeln!(
        text,
        "win_rate_rbfsgd_vs_rbsgd: {}",
        outcome.win_rate(FilterId::Rbfsgd, FilterId::Rbsgd)
    );
    let _ = writeln!(
        text,
        "win_rate_rbsgd_vs_rbpf: {}",
        outcome.win_rate(FilterId::Rbsgd, FilterId::Rbpf)
    );
    fs::write(&summary_path, text)?;
    Ok(outcome)
}

/// Outputs of the online network-training study.
pub struct NnStudyOutcome {
    pub rbfsgd: DriveOutcome,
    pub ekf: DriveOutcome,
    pub rbfsgd_path: PathBuf,
    pub ekf_path: PathBuf,
    pub fnl_path: PathBuf,
    /// Final estimate of the measurement variance.
    pub final_r_hat: Option<f64>,
}

impl NnStudyOutcome {
    /// Time-averaged CRPS over coordinates for both filters.
    pub fn scores(&self) -> (Option<f64>, Option<f64>) {
        let avg = |o: &DriveOutcome| {
            let v = o.time_avg_crps();
            (o.diverged.is_none() && !v.is_empty())
                .then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        (avg(&self.rbfsgd), avg(&self.ekf))
    }
}

/// `nn-study`: joint state and network-weight estimation on the nonlinear
/// benchmark, with the linear-model EKF as the baseline on the same data.
/// Also logs the network's reconstruction of the hidden nonlinearity along
/// the true trajectory together with the running noise-variance estimate.
pub fn cmd_nn_study(cfg: &Config, seed: u64, out: &Path) -> Result<NnStudyOutcome> {
    ensure_dir(out)?;
    if cfg.model_id()? != ModelId::NnBenchmark {
        bail!("nn-study runs on the nn-benchmark model");
    }
    let system = build_system(cfg)?;
    let traj = simulate(&system, cfg.horizon, cfg.ts, seed)?;

    let aug = NnAugmentedModel::new(cfg.ts, cfg.nn.filter_q);
    let init = build_init(cfg, seed)?;
    let choice = build_filter_choice(cfg, FilterId::Rbfsgd, aug.param_dim())?;
    let rbfsgd = drive_particle_filter(&aug, &traj, &init, &choice, seed);

    let baseline = build_filter_model(cfg, FilterId::Ekf)?;
    let ekf = drive_ekf(
        baseline.as_ref(),
        &traj,
        &init.belief,
        &ThetaVector::identity(DVector::zeros(0)),
    );

    let rbfsgd_path = out.join(format!("nn_rbfsgd_{seed}.csv"));
    rbfsgd.to_table().write(&rbfsgd_path)?;
    write_run_summary(&sidecar(&rbfsgd_path, "summary.txt"), cfg, "rbfsgd", seed, &rbfsgd)?;
    write_walltime(&sidecar(&rbfsgd_path, "walltime.txt"), &rbfsgd.wall_seconds)?;

    let ekf_path = out.join(format!("nn_ekf_{seed}.csv"));
    ekf.to_table().write(&ekf_path)?;
    write_run_summary(&sidecar(&ekf_path, "summary.txt"), cfg, "ekf", seed, &ekf)?;
    write_walltime(&sidecar(&ekf_path, "walltime.txt"), &ekf.wall_seconds)?;

    // Reconstruction log: the ensemble-mean network evaluated at the true
    // state against the true nonlinearity, plus the variance estimate.
    let weight_count = aug.mlp.weight_count();
    let fnl_path = out.join(format!("nn_fnl_{seed}.csv"));
    let mut table = Table::new(
        ["t", "fnl_true", "fnl_pred", "r_hat"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut final_r_hat = None;
    for (k, rec) in rbfsgd.records.iter().enumerate() {
        let x = &traj.states[k];
        let weights = &rec.theta_mean[..weight_count];
        let pred = aug.mlp.forward(weights, x)?[0];
        let r_hat = rec.theta_mean[weight_count];
        final_r_hat = Some(r_hat);
        table.push(vec![rec.t, nn_nonlinear_term(x), pred, r_hat]);
    }
    table.write(&fnl_path)?;

    Ok(NnStudyOutcome {
        rbfsgd,
        ekf,
        rbfsgd_path,
        ekf_path,
        fnl_path,
        final_r_hat,
    })
}

/// Derive the per-run seeds a master seed expands into (exposed for tests).
pub fn derive_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    let mut seeder = ChaCha12Rng::seed_from_u64(master_seed);
    (0..count).map(|_| seeder.next_u64()).collect()
}

//! Benchmark CLI for joint state and parameter filtering.
//!
//! Every stochastic subcommand requires `--seed`; together with the
//! resolved config it determines every CSV byte the run writes. Exit
//! codes: 0 success, 1 numerical failure or a failed check, 2 usage.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use rbstein::config::Config;
use rbstein::plot::cmd_plot;
use rbstein::studies::{cmd_monte_carlo, cmd_nn_study, cmd_run_filter, cmd_simulate};
use rbstein::theorycmd::{cmd_theory_check, TheoryCheck};

#[derive(Parser)]
#[command(
    name = "rbstein",
    version,
    about = "Joint state and parameter filtering benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory from the configured system.
    Simulate(StudyArgs),
    /// Stream a trajectory through the configured filter.
    RunFilter(RunFilterArgs),
    /// Paired multi-run CRPS comparison of the three particle filters.
    MonteCarlo(StudyArgs),
    /// Joint state and network-weight estimation with an EKF baseline.
    NnStudy(StudyArgs),
    /// Empirical verification of the transport guarantees.
    TheoryCheck(TheoryArgs),
    /// Render SVG figures from CSV records.
    Plot(PlotArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed. Outputs are a pure function of (config, seed).
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// System: bioreactor | nn-benchmark | ar1 | damped-integrator.
    #[arg(long)]
    model: Option<String>,
    /// Filter: ekf | rbpf | rbsgd | rbfsgd.
    #[arg(long)]
    filter: Option<String>,
    /// Particle count.
    #[arg(long, short = 'n')]
    n: Option<usize>,
    /// Inner transport iterations per measurement.
    #[arg(long, short = 'm')]
    m: Option<usize>,
    /// Transport step size.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Random-walk variance for the baseline particle filter.
    #[arg(long)]
    sigma_theta: Option<f64>,
    /// Number of filter steps.
    #[arg(long)]
    horizon: Option<usize>,
    /// Sampling interval.
    #[arg(long)]
    ts: Option<f64>,
    /// Monte Carlo realization count.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads for multi-run studies (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunFilterArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Reuse an existing trajectory CSV instead of simulating one.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// Which check: prop1 | prop2 | prop3 | ksd | all.
    #[arg(default_value = "all")]
    which: String,
    /// RNG seed for particle initializations and synthetic data.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// CSV records to render (routing by file name).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl StudyArgs {
    /// defaults -> config file -> flags, then validate.
    fn resolve(&self) -> Result<Config> {
        self.resolve_from(Config::default())
    }

    /// Like `resolve` but with a caller-chosen default config underneath
    /// the file and flag layers (the network study starts from its own
    /// settings rather than the reactor ones).
    fn resolve_from(&self, base: Config) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load_over(path, base)?,
            None => base,
        };
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = &self.filter {
            cfg.filter = v.clone();
        }
        if let Some(v) = self.n {
            cfg.n_particles = v;
        }
        if let Some(v) = self.m {
            cfg.iterations = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.sigma_theta {
            cfg.sigma_theta = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.ts {
            cfg.ts = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.threads {
            cfg.n_threads = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn usage_exit(err: anyhow::Error) -> ExitCode {
    eprintln!("usage error: {err:#}");
    ExitCode::from(EXIT_USAGE)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = match args.resolve() {
                Ok(c) => c,
                Err(e) => return Ok(usage_exit(e)),
            };
            let path = cmd_simulate(&cfg, args.seed, &args.out)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::RunFilter(args) => {
            let cfg = match args.study.resolve() {
                Ok(c) => c,
                Err(e) => return Ok(usage_exit(e)),
            };
            let out = cmd_run_filter(&cfg, args.study.seed, &args.study.out, args.trajectory.as_deref())?;
            println!("wrote {}", out.record_path.display());
            if let Some((step, msg)) = &out.outcome.diverged {
                eprintln!("filter diverged at step {step}: {msg}");
                return Ok(ExitCode::from(EXIT_FAILURE));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::MonteCarlo(args) => {
            let cfg = match args.resolve() {
                Ok(c) => c,
                Err(e) => return Ok(usage_exit(e)),
            };
            let mc = cmd_monte_carlo(&cfg, args.seed, &args.out)?;
            print!("{}", std::fs::read_to_string(&mc.summary_path)?);
            println!("wrote {}", mc.summary_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::NnStudy(args) => {
            let cfg = match args.resolve_from(Config::nn_study_defaults()) {
                Ok(c) => c,
                Err(e) => return Ok(usage_exit(e)),
            };
            let study = cmd_nn_study(&cfg, args.seed, &args.out)?;
            let (rbfsgd, ekf) = study.scores();
            println!(
                "rbfsgd crps: {}  ekf crps: {}  final R estimate: {}",
                rbfsgd.map_or("diverged".into(), |v| v.to_string()),
                ekf.map_or("diverged".into(), |v| v.to_string()),
                study.final_r_hat.map_or("n/a".into(), |v| v.to_string()),
            );
            println!("wrote {}", study.fnl_path.display());
            if study.rbfsgd.diverged.is_some() || study.ekf.diverged.is_some() {
                return Ok(ExitCode::from(EXIT_FAILURE));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::TheoryCheck(args) => {
            let which = match TheoryCheck::parse(&args.which) {
                Ok(w) => w,
                Err(e) => return Ok(usage_exit(e)),
            };
            let outcome = cmd_theory_check(which, args.seed, &args.out)?;
            print!("{}", std::fs::read_to_string(&outcome.report_path)?);
            if !outcome.all_pass() {
                return Ok(ExitCode::from(EXIT_FAILURE));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot(args) => {
            let outputs = cmd_plot(&args.inputs, &args.out)?;
            for p in outputs {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

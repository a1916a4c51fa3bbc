//! `theory-check`: drive the empirical verification harness for the
//! transport guarantees (KL descent, the Pinsker-type state bound, the
//! monotone bound tightening, and the Stein-discrepancy diagnostics) and
//! persist both a structured report and per-check traces for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use rbstein_core::metrics::normal_pdf;
use rbstein_core::theory::{
    check_prop1, ksd, run_prop2_check, run_prop3_check, Grid1D, Prop2Config, Prop3Config,
};

use crate::csvio::Table;

/// Which verification to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryCheck {
    Prop1,
    Prop2,
    Prop3,
    Ksd,
    All,
}

impl TheoryCheck {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "prop1" => Self::Prop1,
            "prop2" => Self::Prop2,
            "prop3" => Self::Prop3,
            "ksd" => Self::Ksd,
            "all" => Self::All,
            other => bail!("unknown theory check '{other}' (prop1|prop2|prop3|ksd|all)"),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Prop1 => "prop1",
            Self::Prop2 => "prop2",
            Self::Prop3 => "prop3",
            Self::Ksd => "ksd",
            Self::All => "all",
        }
    }
}

/// One check's verdict plus the lines that go into the report.
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub lines: Vec<String>,
}

pub struct TheoryOutcome {
    pub checks: Vec<CheckResult>,
    pub report_path: PathBuf,
}

impl TheoryOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// KL descent on a displaced cloud against unimodal and bimodal grid
/// targets, at the reference setting N=200, eps=1e-2, M=200.
fn run_prop1(seed: u64, out: &Path) -> Result<CheckResult> {
    let n = 200;
    let epsilon = 1e-2;
    let iterations = 200;
    let tolerance = 1e-3;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let unimodal = Grid1D::from_fn(-9.0, 9.0, 1801, |x| normal_pdf(x, 0.0, 1.0))?.normalized()?;
    let init_uni: Vec<f64> = (0..n)
        .map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let rep_uni = check_prop1(&unimodal, |x| -x, &init_uni, epsilon, iterations, tolerance)?;

    let pdf = |x: f64| 0.5 * normal_pdf(x, -2.0, 0.5) + 0.5 * normal_pdf(x, 2.0, 0.5);
    let score = |x: f64| {
        let a = 0.5 * normal_pdf(x, -2.0, 0.5);
        let b = 0.5 * normal_pdf(x, 2.0, 0.5);
        (a * (-(x + 2.0) / 0.25) + b * (-(x - 2.0) / 0.25)) / (a + b)
    };
    let bimodal = Grid1D::from_fn(-6.0, 6.0, 1201, pdf)?.normalized()?;
    let init_bi: Vec<f64> = (0..n)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let rep_bi = check_prop1(&bimodal, score, &init_bi, epsilon, iterations, tolerance)?;

    let mut table = Table::new(
        ["iteration", "kl_unimodal", "ksd_unimodal", "kl_bimodal", "ksd_bimodal"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for m in 0..rep_uni.kl.len().max(rep_bi.kl.len()) {
        let get = |v: &[f64]| v.get(m).copied().unwrap_or(f64::NAN);
        table.push(vec![
            m as f64,
            get(&rep_uni.kl),
            get(&rep_uni.ksd),
            get(&rep_bi.kl),
            get(&rep_bi.ksd),
        ]);
    }
    table.write(&out.join(format!("theory_prop1_{seed}.csv")))?;

    Ok(CheckResult {
        name: "prop1",
        pass: rep_uni.pass && rep_bi.pass,
        lines: vec![format!("unimodal: {rep_uni}"), format!("bimodal: {rep_bi}")],
    })
}

/// State-marginal L1 against the sqrt(2 KL) bound along a filter run.
fn run_prop2(seed: u64, out: &Path) -> Result<CheckResult> {
    let report = run_prop2_check(&Prop2Config::default(), seed)?;
    let mut table = Table::new(
        ["time", "state_l1", "theta_l1", "bound", "pass"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for p in &report.points {
        table.push(vec![
            p.time as f64,
            p.state_l1,
            p.theta_l1,
            p.bound,
            if p.pass { 1.0 } else { 0.0 },
        ]);
    }
    table.write(&out.join(format!("theory_prop2_{seed}.csv")))?;
    Ok(CheckResult {
        name: "prop2",
        pass: report.pass,
        lines: format!("{report}").lines().map(String::from).collect(),
    })
}

/// Monotone tightening of the bound across inner iterations at a fixed step.
fn run_prop3(seed: u64, out: &Path) -> Result<CheckResult> {
    let report = run_prop3_check(&Prop3Config::default(), seed)?;
    let mut table = Table::new(
        ["iteration", "bound"].iter().map(|s| s.to_string()).collect(),
    );
    for (m, b) in report.bounds.iter().enumerate() {
        table.push(vec![m as f64, *b]);
    }
    table.write(&out.join(format!("theory_prop3_{seed}.csv")))?;
    Ok(CheckResult {
        name: "prop3",
        pass: report.pass,
        lines: vec![format!("{report}")],
    })
}

/// Stein discrepancy sanity: shrinks with sample size on matched draws
/// and flags a mismatched target by a wide margin.
fn run_ksd(seed: u64, out: &Path) -> Result<CheckResult> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let score = |p: &DVector<f64>| -p.clone();
    let sizes = [100usize, 1000, 10000];
    let mut values = Vec::with_capacity(sizes.len());
    let mut table = Table::new(
        ["n", "ksd_matched"].iter().map(|s| s.to_string()).collect(),
    );
    for &n in &sizes {
        let cloud: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let v = ksd(&cloud, score, Some(1.0));
        table.push(vec![n as f64, v]);
        values.push(v);
    }
    table.write(&out.join(format!("theory_ksd_{seed}.csv")))?;
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);

    let matched: Vec<DVector<f64>> = (0..1000)
        .map(|_| DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let shifted: Vec<DVector<f64>> = matched.iter().map(|p| p.add_scalar(3.0)).collect();
    let low = ksd(&matched, score, Some(1.0));
    let high = ksd(&shifted, score, Some(1.0));
    let separated = high >= 10.0 * low;

    Ok(CheckResult {
        name: "ksd",
        pass: decreasing && separated,
        lines: vec![
            format!(
                "matched draws: n={:?} ksd={:?} decreasing={decreasing}",
                sizes, values
            ),
            format!("mismatch: matched={low:.6} shifted={high:.6} ratio>=10: {separated}"),
        ],
    })
}

/// Run the requested checks, write their traces and the report, and hand
/// back the verdicts. A FAIL is data, not an error; callers map it to a
/// nonzero exit.
pub fn cmd_theory_check(which: TheoryCheck, seed: u64, out: &Path) -> Result<TheoryOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut checks = Vec::new();
    let want = |c: TheoryCheck| which == TheoryCheck::All || which == c;
    if want(TheoryCheck::Prop1) {
        checks.push(run_prop1(seed, out)?);
    }
    if want(TheoryCheck::Prop2) {
        checks.push(run_prop2(seed, out)?);
    }
    if want(TheoryCheck::Prop3) {
        checks.push(run_prop3(seed, out)?);
    }
    if want(TheoryCheck::Ksd) {
        checks.push(run_ksd(seed, out)?);
    }

    let report_path = out.join(format!("theory_{}_{seed}.txt", which.as_str()));
    let mut text = String::new();
    let _ = writeln!(text, "study: theory-check");
    let _ = writeln!(text, "seed: {seed}");
    for c in &checks {
        let _ = writeln!(text, "{}: {}", c.name, if c.pass { "PASS" } else { "FAIL" });
        for line in &c.lines {
            let _ = writeln!(text, "  {line}");
        }
    }
    let outcome = TheoryOutcome {
        checks,
        report_path: report_path.clone(),
    };
    let _ = writeln!(
        text,
        "overall: {}",
        if outcome.all_pass() { "PASS" } else { "FAIL" }
    );
    fs::write(&report_path, text)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outdir(tag: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("rbstein-theory-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&p);
        p
    }

    #[test]
    fn parse_accepts_known_names_only() {
        assert_eq!(TheoryCheck::parse("prop2").unwrap(), TheoryCheck::Prop2);
        assert_eq!(TheoryCheck::parse("all").unwrap(), TheoryCheck::All);
        assert!(TheoryCheck::parse("prop9").is_err());
    }

    #[test]
    fn prop3_check_writes_trace_and_report() {
        let dir = outdir("p3");
        let outcome = cmd_theory_check(TheoryCheck::Prop3, 17, &dir).unwrap();
        assert_eq!(outcome.checks.len(), 1);
        assert!(outcome.checks[0].pass);
        let t = Table::read(&dir.join("theory_prop3_17.csv")).unwrap();
        assert_eq!(t.columns, vec!["iteration", "bound"]);
        assert_eq!(t.rows.len(), 21);
        let report = std::fs::read_to_string(&outcome.report_path).unwrap();
        assert!(report.contains("prop3: PASS"));
        assert!(report.contains("overall: PASS"));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn ksd_check_flags_mismatch_and_shrinks() {
        let dir = outdir("ksd");
        let outcome = cmd_theory_check(TheoryCheck::Ksd, 5, &dir).unwrap();
        assert!(outcome.all_pass());
        let t = Table::read(&dir.join("theory_ksd_5.csv")).unwrap();
        let v = t.column("ksd_matched").unwrap();
        assert!(v[2] < v[0]);
        let _ = std::fs::remove_dir_all(&dir);
    }
}

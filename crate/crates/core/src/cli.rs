//! Command-line front end: `run`, `sweep`, `verify-gains`, `selftest`.
//!
//! Exit codes: 0 success, 1 selftest or I/O failure, 2 bad configuration or
//! arguments, 3 network assumptions violated, 4 blow-up during a run,
//! 5 gain verification failed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, GainReport, VerifyOptions};
use crate::config::{Resolved, ScenarioFile};
use crate::error::{Error, Result};
use crate::graph::LTildeMode;
use crate::selftest::{self, SelftestOptions, SelftestReport};
use crate::simulator::{self, RunMetadata, RunMetrics, SweepParam, SweepResult, TrajectoryLog};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_BLOW_UP: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

pub const TRAJECTORY_HEADER: &str = "t,agent,mu,x,ref,err";
pub const SWEEP_HEADER: &str = "param,value,mu,steady_state_err";

#[derive(Debug, Parser)]
#[command(name = "dred", version, about = "Distributed robust exact differentiator simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write trajectory.csv, metrics.json, gains.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print metrics as JSON on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Re-run a scenario over dt or eps values and fit the error exponents.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `dt` or `eps`.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values, at least three.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma-separated noise seeds to average over (default: the config's).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check the gains against the stability conditions.
    VerifyGains {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for verify_gains.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the built-in property suite.
    Selftest {
        #[arg(long, default_value_t = SelftestOptions::default().seed)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Shape(_) => EXIT_CONFIG,
        Error::Validation(_) => EXIT_VALIDATION,
        Error::BlowUp { .. } => EXIT_BLOW_UP,
        Error::Hypothesis(_) => EXIT_VERIFY,
        Error::NotSpd { .. } | Error::NoConvergence(_) | Error::Io(_) => EXIT_FAILURE,
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

/// Parses `args` (including the program name) and executes the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, out, json } => cmd_run(&config, &out, json),
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            out,
            json,
        } => cmd_sweep(&config, param, &values, &seeds, &out, json),
        Command::VerifyGains {
            config,
            samples,
            seed,
            out,
            json,
        } => cmd_verify_gains(&config, samples, seed, out.as_deref(), json),
        Command::Selftest { seed, json } => cmd_selftest(seed, json),
    }
}

fn load(config: &Path) -> Result<Resolved> {
    ScenarioFile::load(config)?.resolve()
}

#[derive(Debug, Serialize)]
struct MetricsArtifact<'a> {
    metrics: &'a RunMetrics,
    metadata: &'a RunMetadata,
    scenario: &'a ScenarioFile,
    version: &'static str,
}

#[derive(Debug, Serialize)]
struct GainsArtifact<'a> {
    m: usize,
    k: &'a [f64],
    k_tilde: &'a [f64],
    l_tilde: f64,
    l_tilde_mode: LTildeMode,
    deriv_bound: f64,
    from_recursion: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    declared_tilde: Option<&'a [f64]>,
    sigma_max_hinvb: f64,
    rho_hinvb: f64,
}

fn gains_artifact(r: &Resolved) -> GainsArtifact<'_> {
    let g = &r.scenario.gains;
    GainsArtifact {
        m: g.m,
        k: &g.k,
        k_tilde: &g.k_tilde,
        l_tilde: g.l_tilde,
        l_tilde_mode: r.spectra.l_tilde_mode,
        deriv_bound: r.deriv_bound,
        from_recursion: g.from_recursion,
        declared_tilde: r.declared_tilde.as_deref(),
        sigma_max_hinvb: r.spectra.sigma_max_hinvb,
        rho_hinvb: r.spectra.rho_hinvb,
    }
}

pub fn cmd_run(config: &Path, out: &Path, json: bool) -> i32 {
    match run_impl(config, out) {
        Ok(text) => {
            if json {
                println!("{text}");
            }
            EXIT_OK
        }
        Err(e) => report_error(&e),
    }
}

fn run_impl(config: &Path, out: &Path) -> Result<String> {
    let resolved = load(config)?;
    let log = simulator::run(&resolved.scenario)?;
    let metrics = simulator::default_metrics(&log)?;
    let artifact = MetricsArtifact {
        metrics: &metrics,
        metadata: &log.metadata,
        scenario: &resolved.file,
        version: env!("CARGO_PKG_VERSION"),
    };
    let metrics_json = to_json(&artifact)?;
    let gains_json = to_json(&gains_artifact(&resolved))?;
    let mut batch = AtomicBatch::new(out)?;
    batch.write_with("trajectory.csv", |w| write_trajectory_csv(&log, w))?;
    batch.write("metrics.json", metrics_json.as_bytes())?;
    batch.write("gains.json", gains_json.as_bytes())?;
    batch.commit()?;
    eprintln!(
        "steady-state error per order: {}",
        format_list(&metrics.steady_state_err)
    );
    Ok(metrics_json)
}

fn format_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// One row per `(time, agent, mu)`, agents 1-based, floats with 17
/// significant digits. `err` is `|x - ref|`.
pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, w: &mut W) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    if !log.has_states() {
        return Err(Error::Parameter("trajectory log has no agent states".into()));
    }
    for k in 0..log.len() {
        let t = log.times()[k];
        let refs = log.refs(k);
        let x = log.state(k).expect("states recorded");
        for i in 0..x.n_agents() {
            for (mu, r) in refs.iter().enumerate() {
                let v = x.get(i, mu);
                writeln!(w, "{t:.16e},{},{mu},{v:.16e},{r:.16e},{:.16e}", i + 1, (v - r).abs())?;
            }
        }
    }
    Ok(())
}

pub fn cmd_sweep(config: &Path, param: SweepParam, values: &[f64], seeds: &[u64], out: &Path, json: bool) -> i32 {
    match sweep_impl(config, param, values, seeds, out) {
        Ok(text) => {
            if json {
                println!("{text}");
            }
            EXIT_OK
        }
        Err(e) => report_error(&e),
    }
}

fn sweep_impl(config: &Path, param: SweepParam, values: &[f64], seeds: &[u64], out: &Path) -> Result<String> {
    let resolved = load(config)?;
    let base = &resolved.scenario;
    let result = if seeds.is_empty() {
        simulator::sweep(base, param, values)?
    } else {
        simulator::sweep_seeds(base, param, values, seeds)?
    };
    let scaling = to_json(&result)?;
    let mut batch = AtomicBatch::new(out)?;
    batch.write_with("sweep.csv", |w| write_sweep_csv(&result, w))?;
    batch.write("scaling.json", scaling.as_bytes())?;
    batch.commit()?;
    for f in &result.fits {
        eprintln!(
            "mu = {}: exponent {:.3} (predicted {:.3}), r^2 = {:.4}",
            f.mu, f.exponent, f.predicted, f.r_squared
        );
    }
    Ok(scaling)
}

pub fn write_sweep_csv<W: Write>(result: &SweepResult, w: &mut W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for (v, errs) in result.values.iter().zip(&result.steady_state_err) {
        for (mu, e) in errs.iter().enumerate() {
            writeln!(w, "{},{v:.16e},{mu},{e:.16e}", result.param.name())?;
        }
    }
    Ok(())
}

pub fn cmd_verify_gains(config: &Path, samples: usize, seed: u64, out: Option<&Path>, json: bool) -> i32 {
    match verify_impl(config, samples, seed, out) {
        Ok(report) => {
            if json {
                match to_json(&report) {
                    Ok(text) => println!("{text}"),
                    Err(e) => return report_error(&e),
                }
            } else {
                print_report(&report);
            }
            if report.passed {
                EXIT_OK
            } else {
                EXIT_VERIFY
            }
        }
        Err(e) => report_error(&e),
    }
}

fn verify_impl(config: &Path, samples: usize, seed: u64, out: Option<&Path>) -> Result<GainReport> {
    let resolved = load(config)?;
    let opts = VerifyOptions {
        samples,
        seed,
        ..VerifyOptions::default()
    };
    let report = analysis::verify_gains(
        &resolved.spectra,
        &resolved.scenario.gains,
        resolved.declared_tilde.as_deref(),
        &opts,
    )?;
    if let Some(dir) = out {
        let mut batch = AtomicBatch::new(dir)?;
        batch.write("verify_gains.json", to_json(&report)?.as_bytes())?;
        batch.commit()?;
    }
    Ok(report)
}

fn print_report(r: &GainReport) {
    println!("mode: {}", r.mode);
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    println!("h (chosen): {}", opt(r.h));
    println!("h* estimate: {}", opt(r.h_star));
    println!("k0* estimate: {}", opt(r.k0_star));
    println!("M(h) margin: {}", opt(r.m_margin));
    if let Some(k0) = r.k0_required_fixed_k1 {
        println!("k0 needed with k1 fixed: {k0:.6}");
    }
    if let Some(detail) = &r.recursion_detail {
        println!("recursion: {detail}");
    }
    for c in &r.conditions {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        if let Some(w) = &c.witness {
            println!("    witness: {w:?}");
        }
    }
    println!("{}", if r.passed { "PASS" } else { "FAIL" });
}

pub fn cmd_selftest(seed: u64, json: bool) -> i32 {
    let report = selftest::run_selftest(&SelftestOptions {
        seed,
        ..SelftestOptions::default()
    });
    if json {
        match to_json(&report) {
            Ok(text) => println!("{text}"),
            Err(e) => return report_error(&e),
        }
    } else {
        for c in &report.checks {
            println!(
                "[{}] {}: {}/{} ({} = {:e})",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.trials - c.failures,
                c.trials,
                c.detail,
                c.worst
            );
        }
        println!("{}/{} checks passed", report.passed_count(), report.checks.len());
    }
    selftest_exit_code(&report)
}

pub fn selftest_exit_code(report: &SelftestReport) -> i32 {
    if report.passed {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

/// Files written to temporaries in the target directory and renamed into
/// place only once all of them succeeded.
struct AtomicBatch {
    dir: PathBuf,
    pending: Vec<(PathBuf, PathBuf)>,
}

impl AtomicBatch {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            pending: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_with(name, |w| Ok(w.write_all(bytes)?))
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let result = (|| {
            let mut w = BufWriter::new(File::create(&tmp)?);
            f(&mut w)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            Ok(())
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        self.pending.push((tmp, self.dir.join(name)));
        Ok(())
    }

    fn commit(mut self) -> Result<()> {
        for (tmp, dest) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &dest)?;
        }
        Ok(())
    }
}

impl Drop for AtomicBatch {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}

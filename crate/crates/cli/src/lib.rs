//! Command implementations behind the `msp-perf` binary.
//!
//! Every command returns an [`Exit`] and reports problems on stderr, so
//! the binary only maps arguments and exit codes.

pub mod output;
pub mod sweep;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use msp_core::{build_report, fixed_point_solve, ConfigError, PerformanceReport, SystemConfig};
use msp_sim::{run_simulation, validate_against_analytic, SimConfig};
use thiserror::Error;

use output::{output_paths, write_json, write_report_csv, write_sim_csv, SimulationOutput};
use sweep::{run_sweep, write_sweep_csv, SweepSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] msp_core::ModelError),
    #[error(transparent)]
    Sim(#[from] msp_sim::SimError),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

/// Process outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    /// Converged, and for `validate` every metric within tolerance.
    Success,
    /// Bad input, I/O failure, or a failed validation verdict.
    Failure,
    /// The fixed point did not converge; output is still written.
    NotConverged,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Success => 0,
            Exit::Failure => 1,
            Exit::NotConverged => 2,
        }
    }
}

/// Arguments shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub spec: Option<PathBuf>,
    /// Output stem; `.csv` and `.json` are written next to it. Without
    /// it, CSV goes to stdout.
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub jobs: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    SystemConfig::parse(text)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_config(path: &Path) -> Result<SystemConfig, CliError> {
    let text = read(path)?;
    parse_config(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        Some(n) => {
            if n == 0 {
                return Err(CliError::Usage("--jobs must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes CSV to `<stem>.csv` and JSON to `<stem>.json`, or CSV to
/// `stdout` when there is no stem.
fn emit(
    out: Option<&Path>,
    stdout: &mut dyn Write,
    csv: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
    json: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match out {
        Some(stem) => {
            let (c, j) = output_paths(stem);
            let mut f = create(&c)?;
            csv(&mut f)?;
            f.flush()?;
            let mut f = create(&j)?;
            json(&mut f)?;
            f.flush()?;
            log::info!("wrote {} and {}", c.display(), j.display());
            Ok(())
        }
        None => csv(stdout),
    }
}

fn finish(r: Result<Exit, CliError>) -> Exit {
    r.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        Exit::Failure
    })
}

fn solve(cfg: &SystemConfig) -> Result<PerformanceReport, CliError> {
    let sol = fixed_point_solve(cfg, &cfg.solver)?;
    log::info!(
        "fixed point: converged={} outer={} max_inner={}",
        sol.converged,
        sol.outer_iterations,
        sol.max_inner_iterations()
    );
    for rec in &sol.trace {
        log::debug!("{rec:?}");
    }
    Ok(build_report(&sol, cfg))
}

pub fn cmd_solve(opts: &Options, stdout: &mut dyn Write) -> Exit {
    finish((|| {
        let cfg = load_config(&opts.config)?;
        let report = solve(&cfg)?;
        emit(
            opts.out.as_deref(),
            stdout,
            |w| write_report_csv(w, &report),
            |w| write_json(w, &report),
        )?;
        if report.micro.degenerate_load || report.infra.degenerate_load {
            log::warn!("a layer carries no traffic; its delay metrics are degenerate");
        }
        Ok(if report.provenance.converged {
            Exit::Success
        } else {
            eprintln!("warning: fixed point did not converge");
            Exit::NotConverged
        })
    })())
}

pub fn cmd_sweep(opts: &Options, stdout: &mut dyn Write) -> Exit {
    finish((|| {
        let cfg = load_config(&opts.config)?;
        let spec_path = opts
            .spec
            .as_deref()
            .ok_or_else(|| CliError::Usage("sweep needs --spec".into()))?;
        let spec = SweepSpec::parse(&read(spec_path)?, cfg.time_unit)
            .map_err(|e| CliError::Format(format!("{}: {e}", spec_path.display())))?;
        log::info!("sweeping {} points", spec.grid().len());
        let rows = with_jobs(opts.jobs, || run_sweep(&cfg, &spec))?;
        let mut failed = 0;
        for r in &rows {
            if let Some(e) = &r.error {
                eprintln!("warning: point {:?} failed: {e}", r.point);
            }
            failed += !r.converged as usize;
        }
        emit(
            opts.out.as_deref(),
            stdout,
            |w| write_sweep_csv(w, &spec, &rows),
            |w| {
                let json: Vec<_> = rows
                    .iter()
                    .map(|r| {
                        let mut m = serde_json::Map::new();
                        for (a, v) in spec.axes.iter().zip(&r.point) {
                            m.insert(a.key.into(), (*v).into());
                        }
                        m.insert("converged".into(), r.converged.into());
                        m.insert("outer_iterations".into(), r.outer_iterations.into());
                        m.insert("max_inner_iterations".into(), r.max_inner_iterations.into());
                        for (n, v) in spec.metrics.iter().zip(&r.values) {
                            m.insert(n.to_string(), (*v).into());
                        }
                        if let Some(e) = &r.error {
                            m.insert("error".into(), e.clone().into());
                        }
                        m
                    })
                    .collect();
                write_json(w, &json)
            },
        )?;
        Ok(if failed == 0 {
            Exit::Success
        } else {
            eprintln!("warning: {failed} of {} points did not converge", rows.len());
            Exit::NotConverged
        })
    })())
}

fn sim_config(cfg: &SystemConfig, opts: &Options) -> SimConfig {
    let mut s = SimConfig::from_system(cfg);
    if let Some(seed) = opts.seed {
        s.seed = seed;
    }
    s
}

pub fn cmd_simulate(opts: &Options, stdout: &mut dyn Write) -> Exit {
    finish((|| {
        let cfg = load_config(&opts.config)?;
        let sc = sim_config(&cfg, opts);
        log::info!("simulating {} replications, seed {}", sc.replications, sc.seed);
        let stats = with_jobs(opts.jobs, || run_simulation(&sc))??;
        let out = SimulationOutput {
            config_hash: cfg.hash(),
            time_unit: cfg.time_unit.to_string(),
            seed: sc.seed,
            horizon: sc.horizon,
            replications: sc.replications,
            stats: &stats,
        };
        emit(
            opts.out.as_deref(),
            stdout,
            |w| write_sim_csv(w, &stats),
            |w| write_json(w, &out),
        )?;
        Ok(Exit::Success)
    })())
}

pub fn cmd_validate(opts: &Options, stdout: &mut dyn Write) -> Exit {
    finish((|| {
        let cfg = load_config(&opts.config)?;
        let tol = opts.tol.unwrap_or(cfg.sim.tol);
        if !(tol >= 0.0) {
            return Err(CliError::Usage("--tol must be >= 0".into()));
        }
        let report = solve(&cfg)?;
        let sc = sim_config(&cfg, opts);
        let stats = with_jobs(opts.jobs, || run_simulation(&sc))??;
        let verdict = validate_against_analytic(&report, &stats, tol);

        writeln!(
            stdout,
            "{:<22} {:>14} {:>14} {:>10} {:>12}  result",
            "metric", "analytic", "simulated", "rel_err", "allowed"
        )?;
        for f in &verdict.fields {
            writeln!(
                stdout,
                "{:<22} {:>14.6} {:>14.6} {:>10.4} {:>12.6}  {}",
                f.name,
                f.actual,
                f.reference,
                f.rel_error,
                f.allowed,
                if f.pass { "pass" } else { "FAIL" }
            )?;
        }
        writeln!(stdout, "verdict: {}", if verdict.pass { "pass" } else { "FAIL" })?;

        if let Some(stem) = opts.out.as_deref() {
            let (c, j) = output_paths(stem);
            let mut w = csv::Writer::from_writer(create(&c)?);
            w.write_record(["metric", "analytic", "simulated", "rel_error", "allowed", "pass"])?;
            for f in &verdict.fields {
                w.write_record([
                    f.name.clone(),
                    output::num(f.actual),
                    output::num(f.reference),
                    output::num(f.rel_error),
                    output::num(f.allowed),
                    f.pass.to_string(),
                ])?;
            }
            w.flush()?;
            let mut jf = create(&j)?;
            write_json(&mut jf, &verdict)?;
            jf.flush()?;
        }

        Ok(if !report.provenance.converged {
            eprintln!("warning: fixed point did not converge");
            Exit::NotConverged
        } else if verdict.pass {
            Exit::Success
        } else {
            Exit::Failure
        })
    })())
}

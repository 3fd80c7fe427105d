//! CSV and JSON writers.
//!
//! Report CSV: one header line and one row per solve. Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `config_hash` | SHA-256 of the normalised config |
//! | `solver_version` | crate version of the analytic model |
//! | `time_unit` | base unit every delay and rate is expressed in |
//! | `converged` | `true` when the fixed point met its tolerance |
//! | `outer_iterations`, `max_inner_iterations` | loop counts |
//! | `damped_retry_used` | `true` if the damped retry was needed |
//! | `micro.degenerate_load`, `macro.degenerate_load` | layer saw no traffic |
//! | `micro.*`, `macro.*` | the metrics of [`PerformanceReport::metrics`] |
//!
//! Floats are written in shortest round-trip form, so reading a row back
//! reproduces the report exactly.

use std::io::{self, Write};

use msp_core::report::{MacroMetrics, MicroMetrics, Provenance};
use msp_core::PerformanceReport;
use msp_sim::SimStats;
use serde::Serialize;

use crate::CliError;

/// Shortest round-trip form, exponent notation for very large or small values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

const LEADING: [&str; 8] = [
    "config_hash",
    "solver_version",
    "time_unit",
    "converged",
    "outer_iterations",
    "max_inner_iterations",
    "damped_retry_used",
    "micro.degenerate_load",
];

/// Column names of the report CSV.
pub fn report_header() -> Vec<String> {
    let mut h: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
    h.push("macro.degenerate_load".into());
    h.extend(metric_names().iter().map(|s| s.to_string()));
    h
}

/// Numeric metric names in report order.
pub fn metric_names() -> Vec<&'static str> {
    placeholder_report().metrics().into_iter().map(|(n, _)| n).collect()
}

fn placeholder_report() -> PerformanceReport {
    PerformanceReport {
        micro: MicroMetrics {
            rejection: 0.0,
            wait: 0.0,
            total_delay: 0.0,
            p_immediate: 0.0,
            mean_vms: 0.0,
            mean_containers: 0.0,
            mean_util: 0.0,
            util_ratio_of_means: 0.0,
            degenerate_load: false,
        },
        infra: MacroMetrics {
            p_reject: 0.0,
            bp_q: 0.0,
            bp_r: 0.0,
            total_delay: 0.0,
            queue_wait: 0.0,
            lookup_delay: 0.0,
            pm_wait: 0.0,
            provisioning_time: 0.0,
            naive_provisioning_time: 0.0,
            p_immediate: 0.0,
            p_s: 0.0,
            degenerate_load: false,
        },
        provenance: Provenance {
            config_hash: String::new(),
            solver_version: String::new(),
            time_unit: String::new(),
            converged: false,
            outer_iterations: 0,
            max_inner_iterations: 0,
            damped_retry_used: false,
        },
    }
}

pub fn report_row(r: &PerformanceReport) -> Vec<String> {
    let p = &r.provenance;
    let mut row = vec![
        p.config_hash.clone(),
        p.solver_version.clone(),
        p.time_unit.clone(),
        p.converged.to_string(),
        p.outer_iterations.to_string(),
        p.max_inner_iterations.to_string(),
        p.damped_retry_used.to_string(),
        r.micro.degenerate_load.to_string(),
        r.infra.degenerate_load.to_string(),
    ];
    row.extend(r.metrics().into_iter().map(|(_, v)| num(v)));
    row
}

pub fn write_report_csv<W: Write>(w: W, r: &PerformanceReport) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(report_header())?;
    out.write_record(report_row(r))?;
    out.flush()?;
    Ok(())
}

/// Reads back a report written by [`write_report_csv`].
pub fn read_report_csv<R: io::Read>(r: R) -> Result<PerformanceReport, CliError> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let row = rd
        .records()
        .next()
        .ok_or_else(|| CliError::Format("report CSV has no data row".into()))??;
    let get = |name: &str| -> Result<&str, CliError> {
        header
            .iter()
            .position(|h| h == name)
            .and_then(|i| row.get(i))
            .ok_or_else(|| CliError::Format(format!("missing column {name}")))
    };
    let num = |name: &str| -> Result<f64, CliError> {
        get(name)?
            .parse()
            .map_err(|_| CliError::Format(format!("bad number in column {name}")))
    };
    let flag = |name: &str| -> Result<bool, CliError> {
        get(name)?
            .parse()
            .map_err(|_| CliError::Format(format!("bad flag in column {name}")))
    };
    let count = |name: &str| -> Result<usize, CliError> {
        get(name)?
            .parse()
            .map_err(|_| CliError::Format(format!("bad count in column {name}")))
    };
    Ok(PerformanceReport {
        micro: MicroMetrics {
            rejection: num("micro.rejection")?,
            wait: num("micro.wait")?,
            total_delay: num("micro.total_delay")?,
            p_immediate: num("micro.p_immediate")?,
            mean_vms: num("micro.mean_vms")?,
            mean_containers: num("micro.mean_containers")?,
            mean_util: num("micro.mean_util")?,
            util_ratio_of_means: num("micro.util_ratio_of_means")?,
            degenerate_load: flag("micro.degenerate_load")?,
        },
        infra: MacroMetrics {
            p_reject: num("macro.p_reject")?,
            bp_q: num("macro.bp_q")?,
            bp_r: num("macro.bp_r")?,
            total_delay: num("macro.total_delay")?,
            queue_wait: num("macro.queue_wait")?,
            lookup_delay: num("macro.lookup_delay")?,
            pm_wait: num("macro.pm_wait")?,
            provisioning_time: num("macro.provisioning_time")?,
            naive_provisioning_time: num("macro.naive_provisioning_time")?,
            p_immediate: num("macro.p_immediate")?,
            p_s: num("macro.p_s")?,
            degenerate_load: flag("macro.degenerate_load")?,
        },
        provenance: Provenance {
            config_hash: get("config_hash")?.to_string(),
            solver_version: get("solver_version")?.to_string(),
            time_unit: get("time_unit")?.to_string(),
            converged: flag("converged")?,
            outer_iterations: count("outer_iterations")?,
            max_inner_iterations: count("max_inner_iterations")?,
            damped_retry_used: flag("damped_retry_used")?,
        },
    })
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Simulation output: config identity plus the per-metric summaries and
/// per-replication details.
#[derive(Debug, Serialize)]
pub struct SimulationOutput<'a> {
    pub config_hash: String,
    pub time_unit: String,
    pub seed: u64,
    pub horizon: f64,
    pub replications: usize,
    pub stats: &'a SimStats,
}

/// Simulation CSV: `metric,mean,variance,half_width,low,high`, one row
/// per simulator metric.
pub fn write_sim_csv<W: Write>(w: W, stats: &SimStats) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "mean", "variance", "half_width", "low", "high"])?;
    for m in &stats.metrics {
        out.write_record([
            m.name.to_string(),
            num(m.mean),
            num(m.variance),
            num(m.half_width),
            num(m.low),
            num(m.high),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Creates `<stem>.csv` and `<stem>.json`, replacing any extension.
pub fn output_paths(stem: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    (stem.with_extension("csv"), stem.with_extension("json"))
}

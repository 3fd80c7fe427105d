//! What-if sweeps over one or two config parameters.
//!
//! Spec files use the config syntax:
//!
//! ```text
//! axis.micro.container_lifetime = 4 min .. 20 min, 5
//! axis.micro.max_vms = 4 .. 7, 4
//! set.micro.containers_per_vm = 4
//! metrics = micro.rejection, micro.total_delay
//! ```
//!
//! `axis.<key> = <min> .. <max>, <steps>` spaces `steps` points evenly,
//! endpoints included. `set.<key>` fixes a parameter for every point.
//! `metrics` restricts the output columns; all metrics by default.

use std::io::Write;

use msp_core::config::{canonical_key, key_kind, parse_value, ValueKind};
use msp_core::{build_report, fixed_point_solve, ConfigError, SystemConfig, TimeUnit};
use rayon::prelude::*;

use crate::output::{metric_names, num};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: &'static str,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
    integral: bool,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|n| {
                let v = self.min + (self.max - self.min) * n as f64 / (self.steps - 1) as f64;
                if self.integral {
                    v.round()
                } else {
                    v
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    pub fixed: Vec<(&'static str, f64)>,
    pub metrics: Vec<&'static str>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Parse {
        line,
        msg: msg.into(),
    })
}

fn resolve_key(k: &str, line: usize) -> Result<(&'static str, ValueKind), CliError> {
    let key = canonical_key(k).ok_or_else(|| parse_err(line, format!("unknown parameter '{k}'")))?;
    Ok((key, key_kind(key).expect("canonical keys have a kind")))
}

fn parse_axis(key: &str, v: &str, base: TimeUnit, line: usize) -> Result<Axis, CliError> {
    let (key, kind) = resolve_key(key, line)?;
    let (range, steps) = v
        .rsplit_once(',')
        .ok_or_else(|| parse_err(line, "expected '<min> .. <max>, <steps>'"))?;
    let (lo, hi) = range
        .split_once("..")
        .ok_or_else(|| parse_err(line, "expected '<min> .. <max>, <steps>'"))?;
    let steps: usize = steps
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid step count '{}'", steps.trim())))?;
    if steps < 2 {
        return Err(parse_err(line, "an axis needs at least 2 steps"));
    }
    if kind == ValueKind::Flag {
        return Err(parse_err(line, format!("'{key}' is a flag and cannot be swept")));
    }
    let axis = Axis {
        key,
        min: parse_value(lo, kind, base, line)?,
        max: parse_value(hi, kind, base, line)?,
        steps,
        integral: kind == ValueKind::Count,
    };
    if axis.integral {
        let span = axis.max - axis.min;
        let stride = span / (steps - 1) as f64;
        if stride.fract() != 0.0 {
            return Err(parse_err(
                line,
                format!("integer axis '{key}' from {} to {} cannot take {steps} evenly spaced whole values", axis.min, axis.max),
            ));
        }
    }
    Ok(axis)
}

impl SweepSpec {
    /// Parses a spec; durations and rates are normalised to `base`.
    pub fn parse(text: &str, base: TimeUnit) -> Result<Self, CliError> {
        let mut spec = SweepSpec {
            axes: Vec::new(),
            fixed: Vec::new(),
            metrics: Vec::new(),
        };
        let mut explicit_metrics = false;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, format!("expected 'key = value', got '{body}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(key) = k.strip_prefix("axis.") {
                let axis = parse_axis(key, v, base, line_no)?;
                if spec.axes.iter().any(|a| a.key == axis.key) {
                    return Err(parse_err(line_no, format!("'{}' is swept twice", axis.key)));
                }
                spec.axes.push(axis);
                if spec.axes.len() > 2 {
                    return Err(parse_err(line_no, "at most 2 axes are supported"));
                }
            } else if let Some(key) = k.strip_prefix("set.") {
                let (key, kind) = resolve_key(key, line_no)?;
                spec.fixed.push((key, parse_value(v, kind, base, line_no)?));
            } else if k == "metrics" {
                let names = metric_names();
                for m in v.split(',').map(str::trim).filter(|m| !m.is_empty()) {
                    let name = names
                        .iter()
                        .find(|n| **n == m)
                        .ok_or_else(|| parse_err(line_no, format!("unknown metric '{m}'")))?;
                    spec.metrics.push(name);
                }
                explicit_metrics = true;
            } else {
                return Err(parse_err(line_no, format!("unknown sweep key '{k}'")));
            }
        }
        if spec.axes.is_empty() {
            return Err(parse_err(0, "a sweep needs at least one axis"));
        }
        if spec.fixed.iter().any(|(k, _)| spec.axes.iter().any(|a| a.key == *k)) {
            return Err(parse_err(0, "a parameter cannot be both fixed and swept"));
        }
        if !explicit_metrics {
            spec.metrics = metric_names();
        }
        Ok(spec)
    }

    /// Grid points in row-major order, first axis outermost.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &self.axes {
            let vals = axis.values();
            points = points
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.axes.iter().map(|a| a.key.to_string()).collect();
        h.extend(["converged", "outer_iterations", "max_inner_iterations"].map(String::from));
        h.extend(self.metrics.iter().map(|m| m.to_string()));
        h.push("error".into());
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Selected metrics, empty when the point failed.
    pub values: Vec<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn record(&self, width: usize) -> Vec<String> {
        let mut r: Vec<String> = self.point.iter().map(|v| num(*v)).collect();
        r.push(self.converged.to_string());
        r.push(self.outer_iterations.to_string());
        r.push(self.max_inner_iterations.to_string());
        if self.values.is_empty() {
            r.extend(std::iter::repeat_n(String::new(), width));
        } else {
            r.extend(self.values.iter().map(|v| num(*v)));
        }
        r.push(self.error.clone().unwrap_or_default());
        r
    }
}

fn evaluate(base: &SystemConfig, spec: &SweepSpec, point: &[f64]) -> SweepRow {
    let failed = |e: String| SweepRow {
        point: point.to_vec(),
        converged: false,
        outer_iterations: 0,
        max_inner_iterations: 0,
        values: Vec::new(),
        error: Some(e),
    };
    let mut cfg = base.clone();
    let settings = spec
        .fixed
        .iter()
        .copied()
        .chain(spec.axes.iter().map(|a| a.key).zip(point.iter().copied()));
    for (k, v) in settings {
        match cfg.with_value(k, v) {
            Ok(c) => cfg = c,
            Err(e) => return failed(e.to_string()),
        }
    }
    match fixed_point_solve(&cfg, &cfg.solver) {
        Ok(sol) => {
            let r = build_report(&sol, &cfg);
            SweepRow {
                point: point.to_vec(),
                converged: sol.converged,
                outer_iterations: sol.outer_iterations,
                max_inner_iterations: sol.max_inner_iterations(),
                values: spec
                    .metrics
                    .iter()
                    .map(|m| r.metric(m).expect("metric names come from the report"))
                    .collect(),
                error: None,
            }
        }
        Err(e) => failed(e.to_string()),
    }
}

/// Solves every grid point in parallel; rows come back in grid order.
pub fn run_sweep(base: &SystemConfig, spec: &SweepSpec) -> Vec<SweepRow> {
    let grid = spec.grid();
    grid.par_iter()
        .map(|p| {
            let row = evaluate(base, spec, p);
            log::debug!("sweep point {p:?}: converged={}", row.converged);
            row
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, spec: &SweepSpec, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(spec.header())?;
    for row in rows {
        out.write_record(row.record(spec.metrics.len()))?;
    }
    out.flush()?;
    Ok(())
}

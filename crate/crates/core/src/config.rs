//! System configuration and its flat `section.key = value` text format.
//!
//! ```text
//! time_unit = second
//! micro.arrival_rate = 1/min
//! micro.container_lifetime = 12 min
//! macro.vm_lifetime = 2 day
//! ```
//!
//! Rates accept `x/unit` or `x per unit`, durations `x unit`; bare
//! numbers are taken in the declared base unit. Every value is
//! normalised to the base unit while parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ctmc::SolverOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Unit { line: usize, msg: String },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
}

fn validation(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Millisecond,
    Second,
    Minute,
    Hour,
    Day,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Millisecond => 1e-3,
            TimeUnit::Second => 1.0,
            TimeUnit::Minute => 60.0,
            TimeUnit::Hour => 3600.0,
            TimeUnit::Day => 86400.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeUnit::Millisecond => "millisecond",
            TimeUnit::Second => "second",
            TimeUnit::Minute => "minute",
            TimeUnit::Hour => "hour",
            TimeUnit::Day => "day",
        }
    }
}

impl FromStr for TimeUnit {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "ms" | "msec" | "millisecond" | "milliseconds" => TimeUnit::Millisecond,
            "s" | "sec" | "secs" | "second" | "seconds" => TimeUnit::Second,
            "m" | "min" | "mins" | "minute" | "minutes" => TimeUnit::Minute,
            "h" | "hr" | "hrs" | "hour" | "hours" => TimeUnit::Hour,
            "d" | "day" | "days" => TimeUnit::Day,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a key's value is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    /// Events per time.
    Rate,
    /// A span of time.
    Duration,
    /// Non-negative integer.
    Count,
    /// Plain real number.
    Real,
    /// `true` / `false`.
    Flag,
}

struct KeySpec {
    key: &'static str,
    aliases: &'static [&'static str],
    kind: ValueKind,
    /// Keys in the same group set the same model field.
    group: &'static str,
}

const KEYS: &[KeySpec] = &[
    KeySpec { key: "micro.users", aliases: &["micro.n_users"], kind: ValueKind::Count, group: "micro.users" },
    KeySpec { key: "micro.arrival_rate", aliases: &[], kind: ValueKind::Rate, group: "micro.arrival" },
    KeySpec { key: "micro.container_startup", aliases: &[], kind: ValueKind::Duration, group: "micro.phi" },
    KeySpec { key: "micro.container_rate", aliases: &[], kind: ValueKind::Rate, group: "micro.phi" },
    KeySpec { key: "micro.container_lifetime", aliases: &[], kind: ValueKind::Duration, group: "micro.mu" },
    KeySpec { key: "micro.completion_rate", aliases: &[], kind: ValueKind::Rate, group: "micro.mu" },
    KeySpec { key: "micro.min_vms", aliases: &["micro.s"], kind: ValueKind::Count, group: "micro.s" },
    KeySpec { key: "micro.max_vms", aliases: &["micro.S"], kind: ValueKind::Count, group: "micro.S" },
    KeySpec { key: "micro.containers_per_vm", aliases: &["micro.M"], kind: ValueKind::Count, group: "micro.M" },
    KeySpec { key: "micro.high_util", aliases: &[], kind: ValueKind::Real, group: "micro.high" },
    KeySpec { key: "micro.low_util", aliases: &[], kind: ValueKind::Real, group: "micro.low" },
    KeySpec { key: "macro.arrival_rate", aliases: &[], kind: ValueKind::Rate, group: "macro.arrival" },
    KeySpec { key: "macro.queue", aliases: &["macro.queue_size", "macro.L_Q"], kind: ValueKind::Count, group: "macro.queue" },
    KeySpec { key: "macro.lookup_rate", aliases: &[], kind: ValueKind::Rate, group: "macro.lookup" },
    KeySpec { key: "macro.lookup_time", aliases: &[], kind: ValueKind::Duration, group: "macro.lookup" },
    KeySpec { key: "macro.pms", aliases: &["macro.N"], kind: ValueKind::Count, group: "macro.N" },
    KeySpec { key: "macro.vms_per_pm", aliases: &["macro.m"], kind: ValueKind::Count, group: "macro.m" },
    KeySpec { key: "macro.vm_startup", aliases: &[], kind: ValueKind::Duration, group: "macro.delta" },
    KeySpec { key: "macro.vm_rate", aliases: &[], kind: ValueKind::Rate, group: "macro.delta" },
    KeySpec { key: "macro.vm_lifetime", aliases: &[], kind: ValueKind::Duration, group: "macro.eta" },
    KeySpec { key: "macro.vm_completion_rate", aliases: &[], kind: ValueKind::Rate, group: "macro.eta" },
    KeySpec { key: "solver.max_err", aliases: &[], kind: ValueKind::Real, group: "solver.max_err" },
    KeySpec { key: "solver.max_outer", aliases: &[], kind: ValueKind::Count, group: "solver.max_outer" },
    KeySpec { key: "solver.max_inner", aliases: &[], kind: ValueKind::Count, group: "solver.max_inner" },
    KeySpec { key: "solver.initial_success_prob", aliases: &[], kind: ValueKind::Real, group: "solver.ps0" },
    KeySpec { key: "solver.initial_vm_delay", aliases: &[], kind: ValueKind::Duration, group: "solver.td0" },
    KeySpec { key: "solver.residual_tol", aliases: &[], kind: ValueKind::Real, group: "solver.residual" },
    KeySpec { key: "solver.damped_retry", aliases: &[], kind: ValueKind::Flag, group: "solver.damped" },
    KeySpec { key: "sim.horizon", aliases: &[], kind: ValueKind::Duration, group: "sim.horizon" },
    KeySpec { key: "sim.warmup", aliases: &[], kind: ValueKind::Real, group: "sim.warmup" },
    KeySpec { key: "sim.replications", aliases: &[], kind: ValueKind::Count, group: "sim.reps" },
    KeySpec { key: "sim.seed", aliases: &[], kind: ValueKind::Count, group: "sim.seed" },
    KeySpec { key: "sim.immediate_threshold", aliases: &[], kind: ValueKind::Duration, group: "sim.imm" },
    KeySpec { key: "sim.tol", aliases: &[], kind: ValueKind::Real, group: "sim.tol" },
    KeySpec { key: "sim.consolidate", aliases: &[], kind: ValueKind::Flag, group: "sim.consolidate" },
];

fn lookup_key(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter()
        .find(|k| k.key == name || k.aliases.contains(&name))
}

/// Kind of value a key expects, if the key exists.
pub fn key_kind(name: &str) -> Option<ValueKind> {
    lookup_key(name).map(|k| k.kind)
}

/// Canonical spelling of a key or alias.
pub fn canonical_key(name: &str) -> Option<&'static str> {
    lookup_key(name).map(|k| k.key)
}

/// Parses one value of `kind`, normalised to `base`.
pub fn parse_value(raw: &str, kind: ValueKind, base: TimeUnit, line: usize) -> Result<f64, ConfigError> {
    let raw = raw.trim();
    let parse_err = |msg: String| ConfigError::Parse { line, msg };
    let unit_err = |msg: String| ConfigError::Unit { line, msg };
    let number = |s: &str| -> Result<f64, ConfigError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| parse_err(format!("invalid number '{}'", s.trim())))
    };
    match kind {
        ValueKind::Flag => match raw {
            "true" | "yes" | "1" => Ok(1.0),
            "false" | "no" | "0" => Ok(0.0),
            _ => Err(parse_err(format!("expected true/false, got '{raw}'"))),
        },
        ValueKind::Count => {
            if raw.contains('/') || raw.chars().any(|c| c.is_ascii_alphabetic() && c != 'e') {
                return Err(unit_err(format!("count value '{raw}' cannot carry a unit")));
            }
            let v = number(raw)?;
            if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
                return Err(parse_err(format!("expected a non-negative integer, got '{raw}'")));
            }
            Ok(v)
        }
        ValueKind::Real => {
            if raw.contains('/') {
                return Err(unit_err(format!("'{raw}' is dimensionless; no unit allowed")));
            }
            let (num, pct) = match raw.strip_suffix('%') {
                Some(n) => (n, true),
                None => (raw, false),
            };
            let v = number(num)?;
            Ok(if pct { v / 100.0 } else { v })
        }
        ValueKind::Rate => {
            let (num, unit) = if let Some((n, u)) = raw.split_once('/') {
                (n, Some(u))
            } else if let Some((n, u)) = raw.split_once(" per ") {
                (n, Some(u))
            } else {
                if split_number_unit(raw).1.is_some() {
                    return Err(unit_err(format!(
                        "'{raw}' looks like a duration; rates are written 'x/unit'"
                    )));
                }
                (raw, None)
            };
            let v = number(num)?;
            match unit {
                None => Ok(v),
                Some(u) => {
                    let u: TimeUnit = u
                        .trim()
                        .parse()
                        .map_err(|_| unit_err(format!("unknown time unit '{}'", u.trim())))?;
                    Ok(v / u.seconds() * base.seconds())
                }
            }
        }
        ValueKind::Duration => {
            if raw.contains('/') || raw.contains(" per ") {
                return Err(unit_err(format!(
                    "'{raw}' looks like a rate; durations are written 'x unit'"
                )));
            }
            let (num, unit) = split_number_unit(raw);
            let v = number(num)?;
            match unit {
                None => Ok(v),
                Some(u) => {
                    let u: TimeUnit = u
                        .parse()
                        .map_err(|_| unit_err(format!("unknown time unit '{u}'")))?;
                    Ok(v * u.seconds() / base.seconds())
                }
            }
        }
    }
}

/// Splits `"750ms"` / `"2 min"` into number and optional unit suffix.
fn split_number_unit(raw: &str) -> (&str, Option<&str>) {
    let raw = raw.trim();
    let pos = raw
        .char_indices()
        .find(|&(i, c)| {
            c.is_ascii_alphabetic() && !(matches!(c, 'e' | 'E') && is_exponent(raw, i))
        })
        .map(|(i, _)| i);
    match pos {
        Some(i) => (&raw[..i], Some(raw[i..].trim())),
        None => (raw, None),
    }
}

fn is_exponent(raw: &str, i: usize) -> bool {
    let before = raw[..i].chars().last().is_some_and(|c| c.is_ascii_digit() || c == '.');
    let after = raw[i + 1..]
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+');
    before && after
}

/// Parsed but not yet validated key/value pairs, normalised to the base
/// time unit and keyed by canonical key.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    pub time_unit: TimeUnit,
    values: BTreeMap<&'static str, f64>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut time_unit = None;
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                msg: format!("expected 'key = value', got '{body}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if v.is_empty() {
                return Err(ConfigError::Parse {
                    line: lineno,
                    msg: format!("missing value for '{k}'"),
                });
            }
            if k == "time_unit" {
                if time_unit.is_some() {
                    return Err(ConfigError::Parse {
                        line: lineno,
                        msg: "duplicate time_unit".into(),
                    });
                }
                let u: TimeUnit = v.parse().map_err(|_| ConfigError::Unit {
                    line: lineno,
                    msg: format!("unknown time unit '{v}'"),
                })?;
                time_unit = Some(u);
            } else {
                entries.push((lineno, k, v));
            }
        }
        let time_unit = time_unit.ok_or_else(|| validation("time_unit", "must be declared"))?;
        let mut raw = RawConfig {
            time_unit,
            values: BTreeMap::new(),
        };
        let mut seen_groups: BTreeMap<&str, usize> = BTreeMap::new();
        for (line, k, v) in entries {
            let spec = lookup_key(k).ok_or_else(|| ConfigError::Parse {
                line,
                msg: format!("unknown key '{k}'"),
            })?;
            if let Some(prev) = seen_groups.insert(spec.group, line) {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("'{k}' sets the same parameter as line {prev}"),
                });
            }
            let value = parse_value(v, spec.kind, time_unit, line)?;
            raw.values.insert(spec.key, value);
        }
        Ok(raw)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        canonical_key(key).and_then(|k| self.values.get(k).copied())
    }

    /// Sets `key` to `value` (already in base units), clearing any other
    /// key that addresses the same parameter.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        let spec = lookup_key(key).ok_or_else(|| validation(key, "unknown key"))?;
        let siblings: Vec<&'static str> = KEYS
            .iter()
            .filter(|s| s.group == spec.group)
            .map(|s| s.key)
            .collect();
        for s in siblings {
            self.values.remove(s);
        }
        self.values.insert(spec.key, value);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroConfig {
    pub users: usize,
    /// Per-user container request rate λ.
    pub arrival_rate: f64,
    /// Container instantiation rate φ.
    pub container_rate: f64,
    /// Container completion rate μ.
    pub completion_rate: f64,
    pub min_vms: usize,
    pub max_vms: usize,
    pub containers_per_vm: usize,
    pub high_util: f64,
    pub low_util: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfraConfig {
    /// External VM request rate λ_x.
    pub arrival_rate: f64,
    /// Global queue size L_Q.
    pub queue_size: usize,
    pub lookup_rate: f64,
    /// Number of PMs, N.
    pub pool_size: usize,
    /// VMs per PM, m.
    pub vms_per_pm: usize,
    /// VM instantiation rate δ.
    pub instantiation_rate: f64,
    /// VM completion rate η.
    pub completion_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingOptions {
    pub max_err: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_success_prob: f64,
    /// Initial guess for the VM acquisition/release time; the first CSM
    /// solve uses rates `1 / initial_vm_delay`.
    pub initial_vm_delay: f64,
    /// Retry a capped inner loop once with a damped `P_s` update.
    pub damped_retry: bool,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl CouplingOptions {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.max_err > 0.0) {
            return Err(validation("solver.max_err", "must be > 0"));
        }
        if self.max_outer < 1 || self.max_inner < 1 {
            return Err(validation("solver.max_outer", "iteration caps must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.initial_success_prob) {
            return Err(validation("solver.initial_success_prob", "must lie in [0,1]"));
        }
        if !(self.initial_vm_delay > 0.0) {
            return Err(validation("solver.initial_vm_delay", "must be > 0"));
        }
        if !(self.solver.residual_tol > 0.0) {
            return Err(validation("solver.residual_tol", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSettings {
    /// Simulated time per replication.
    pub horizon: f64,
    /// Fraction of the horizon discarded as warm-up.
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
    /// Requests whose queueing wait is at most this count as immediate.
    pub immediate_threshold: f64,
    /// Relative tolerance used by validation runs.
    pub tol: f64,
    /// Drain the least-loaded VM into the others before releasing it.
    pub consolidate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub time_unit: TimeUnit,
    pub micro: MicroConfig,
    #[serde(rename = "macro")]
    pub infra: InfraConfig,
    pub solver: CouplingOptions,
    pub sim: SimSettings,
    #[serde(skip)]
    raw: RawConfig,
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(validation(field, format!("must be > 0, got {v}")))
    }
}

impl SystemConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let req = |k: &str| raw.get(k).ok_or_else(|| validation(k, "required"));
        let opt = |k: &str, d: f64| raw.get(k).unwrap_or(d);
        // Either a rate key or its reciprocal duration key.
        let rate_or_time = |rate: &str, time: &str| -> Result<f64, ConfigError> {
            match (raw.get(rate), raw.get(time)) {
                (Some(r), _) => positive(rate, r),
                (None, Some(t)) => Ok(1.0 / positive(time, t)?),
                (None, None) => Err(validation(rate, format!("required (or {time})"))),
            }
        };
        let count = |k: &str| req(k).map(|v| v as usize);

        let micro = MicroConfig {
            users: opt("micro.users", 1.0) as usize,
            arrival_rate: req("micro.arrival_rate")?,
            container_rate: rate_or_time("micro.container_rate", "micro.container_startup")?,
            completion_rate: rate_or_time("micro.completion_rate", "micro.container_lifetime")?,
            min_vms: count("micro.min_vms")?,
            max_vms: count("micro.max_vms")?,
            containers_per_vm: count("micro.containers_per_vm")?,
            high_util: req("micro.high_util")?,
            low_util: req("micro.low_util")?,
        };
        if micro.users < 1 {
            return Err(validation("micro.users", "must be >= 1"));
        }
        if !(micro.arrival_rate >= 0.0 && micro.arrival_rate.is_finite()) {
            return Err(validation("micro.arrival_rate", "must be >= 0"));
        }
        if micro.min_vms < 1 || micro.min_vms > micro.max_vms {
            return Err(validation("micro.min_vms", "need 1 <= min_vms <= max_vms"));
        }
        if micro.containers_per_vm < 1 {
            return Err(validation("micro.containers_per_vm", "must be >= 1"));
        }
        if !(0.0 <= micro.low_util && micro.low_util < micro.high_util && micro.high_util <= 1.0) {
            return Err(validation(
                "micro.low_util",
                "need 0 <= low_util < high_util <= 1",
            ));
        }

        let infra = InfraConfig {
            arrival_rate: req("macro.arrival_rate")?,
            queue_size: count("macro.queue")?,
            lookup_rate: rate_or_time("macro.lookup_rate", "macro.lookup_time")?,
            pool_size: count("macro.pms")?,
            vms_per_pm: count("macro.vms_per_pm")?,
            instantiation_rate: rate_or_time("macro.vm_rate", "macro.vm_startup")?,
            completion_rate: rate_or_time("macro.vm_completion_rate", "macro.vm_lifetime")?,
        };
        if !(infra.arrival_rate >= 0.0 && infra.arrival_rate.is_finite()) {
            return Err(validation("macro.arrival_rate", "must be >= 0"));
        }
        for (k, v) in [
            ("macro.queue", infra.queue_size),
            ("macro.pms", infra.pool_size),
            ("macro.vms_per_pm", infra.vms_per_pm),
        ] {
            if v < 1 {
                return Err(validation(k, "must be >= 1"));
            }
        }

        let unit_s = raw.time_unit.seconds();
        let solver = CouplingOptions {
            max_err: opt("solver.max_err", 1e-6),
            max_outer: opt("solver.max_outer", 10.0) as usize,
            max_inner: opt("solver.max_inner", 10.0) as usize,
            initial_success_prob: opt("solver.initial_success_prob", 0.9),
            initial_vm_delay: opt("solver.initial_vm_delay", 120.0 / unit_s),
            damped_retry: opt("solver.damped_retry", 1.0) != 0.0,
            solver: SolverOptions {
                residual_tol: opt("solver.residual_tol", 1e-10),
                ..SolverOptions::default()
            },
        };
        solver.validate()?;

        let default_horizon = if micro.arrival_rate > 0.0 {
            1e5 / micro.arrival_rate
        } else {
            1e5 * solver.initial_vm_delay
        };
        let sim = SimSettings {
            horizon: opt("sim.horizon", default_horizon),
            warmup: opt("sim.warmup", 0.2),
            replications: opt("sim.replications", 10.0) as usize,
            seed: opt("sim.seed", 1.0) as u64,
            immediate_threshold: opt("sim.immediate_threshold", 0.0),
            tol: opt("sim.tol", 0.10),
            consolidate: opt("sim.consolidate", 1.0) != 0.0,
        };
        if !(sim.horizon > 0.0) {
            return Err(validation("sim.horizon", "must be > 0"));
        }
        if !(0.0..1.0).contains(&sim.warmup) {
            return Err(validation("sim.warmup", "must lie in [0,1)"));
        }
        if sim.replications < 1 {
            return Err(validation("sim.replications", "must be >= 1"));
        }
        if !(sim.tol >= 0.0) || !(sim.immediate_threshold >= 0.0) {
            return Err(validation("sim.tol", "must be >= 0"));
        }

        Ok(SystemConfig {
            time_unit: raw.time_unit,
            micro,
            infra,
            solver,
            sim,
            raw,
        })
    }

    pub fn raw(&self) -> &RawConfig {
        &self.raw
    }

    /// Returns a copy with one parameter replaced (value in base units).
    pub fn with_value(&self, key: &str, value: f64) -> Result<Self, ConfigError> {
        let mut raw = self.raw.clone();
        raw.set(key, value)?;
        Self::from_raw(raw)
    }

    /// Canonical text: one normalised `key = value` line per parameter.
    pub fn canonical_text(&self) -> String {
        let mut s = format!("time_unit = {}\n", self.time_unit);
        for (k, v) in self.raw.entries() {
            s.push_str(&format!("{k} = {v:?}\n"));
        }
        s
    }

    /// SHA-256 of [`Self::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

//! User-facing metric bundle built from a coupled solution, and
//! field-by-field report comparison.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::coupler::CoupledSolution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    /// Platform blocking probability bp_q.
    pub rejection: f64,
    /// Mean wait in the platform queue, wt_q.
    pub wait: f64,
    /// `wt_q + 1/φ`.
    pub total_delay: f64,
    pub p_immediate: f64,
    pub mean_vms: f64,
    pub mean_containers: f64,
    pub mean_util: f64,
    /// Ratio-of-means utilisation, a diagnostic next to `mean_util`.
    pub util_ratio_of_means: f64,
    pub degenerate_load: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    /// `BP_q + BP_r`.
    pub p_reject: f64,
    pub bp_q: f64,
    pub bp_r: f64,
    /// Total infrastructure delay td.
    pub total_delay: f64,
    pub queue_wait: f64,
    pub lookup_delay: f64,
    pub pm_wait: f64,
    pub provisioning_time: f64,
    /// `1/δ`, for comparison with the Little's-law provisioning time.
    pub naive_provisioning_time: f64,
    pub p_immediate: f64,
    pub p_s: f64,
    pub degenerate_load: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub solver_version: String,
    pub time_unit: String,
    pub converged: bool,
    pub outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub damped_retry_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub micro: MicroMetrics,
    #[serde(rename = "macro")]
    pub infra: MacroMetrics,
    pub provenance: Provenance,
}

pub fn build_report(sol: &CoupledSolution, cfg: &SystemConfig) -> PerformanceReport {
    let c = &sol.csm;
    let p = &sol.pmsm;
    let v = &sol.vmsm;
    PerformanceReport {
        micro: MicroMetrics {
            rejection: c.bp_q,
            wait: c.mean_wait,
            total_delay: c.total_delay,
            p_immediate: c.p_immediate,
            mean_vms: c.mean_vms,
            mean_containers: c.mean_containers,
            mean_util: c.mean_util,
            util_ratio_of_means: c.util_ratio_of_means,
            degenerate_load: c.degenerate_load,
        },
        infra: MacroMetrics {
            p_reject: p.p_reject,
            bp_q: p.bp_q,
            bp_r: p.bp_r,
            total_delay: sol.td,
            queue_wait: p.mean_wait,
            lookup_delay: p.lookup_delay,
            pm_wait: v.pm_wait,
            provisioning_time: v.provisioning_time,
            naive_provisioning_time: v.naive_provisioning_time,
            p_immediate: p.p_immediate,
            p_s: sol.p_s,
            degenerate_load: p.degenerate_load || v.degenerate_load,
        },
        provenance: Provenance {
            config_hash: cfg.hash(),
            solver_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            time_unit: cfg.time_unit.name().into(),
            converged: sol.converged,
            outer_iterations: sol.outer_iterations,
            max_inner_iterations: sol.max_inner_iterations(),
            damped_retry_used: sol.damped_retry_used,
        },
    }
}

impl PerformanceReport {
    /// Numeric metrics as `(name, value)` in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let m = &self.micro;
        let x = &self.infra;
        vec![
            ("micro.rejection", m.rejection),
            ("micro.wait", m.wait),
            ("micro.total_delay", m.total_delay),
            ("micro.p_immediate", m.p_immediate),
            ("micro.mean_vms", m.mean_vms),
            ("micro.mean_containers", m.mean_containers),
            ("micro.mean_util", m.mean_util),
            ("micro.util_ratio_of_means", m.util_ratio_of_means),
            ("macro.p_reject", x.p_reject),
            ("macro.bp_q", x.bp_q),
            ("macro.bp_r", x.bp_r),
            ("macro.total_delay", x.total_delay),
            ("macro.queue_wait", x.queue_wait),
            ("macro.lookup_delay", x.lookup_delay),
            ("macro.pm_wait", x.pm_wait),
            ("macro.provisioning_time", x.provisioning_time),
            ("macro.naive_provisioning_time", x.naive_provisioning_time),
            ("macro.p_immediate", x.p_immediate),
            ("macro.p_s", x.p_s),
        ]
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldCheck {
    pub name: String,
    pub actual: f64,
    pub reference: f64,
    /// Relative error against the reference value.
    pub rel_error: f64,
    /// Absolute deviation accepted for this field.
    pub allowed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonVerdict {
    pub fields: Vec<FieldCheck>,
    pub pass: bool,
}

impl ComparisonVerdict {
    pub fn from_fields(fields: Vec<FieldCheck>) -> Self {
        let pass = !fields.is_empty() && fields.iter().all(|f| f.pass);
        Self { fields, pass }
    }

    pub fn failures(&self) -> impl Iterator<Item = &FieldCheck> {
        self.fields.iter().filter(|f| !f.pass)
    }
}

pub fn relative_error(actual: f64, reference: f64) -> f64 {
    let d = (actual - reference).abs();
    if d == 0.0 {
        0.0
    } else if reference == 0.0 {
        f64::INFINITY
    } else {
        d / reference.abs()
    }
}

/// Tolerance lookup for [`compare_reports`].
#[derive(Debug, Clone, Default)]
pub struct Tolerances {
    pub default: f64,
    pub per_field: Vec<(String, f64)>,
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            default: tol,
            per_field: Vec::new(),
        }
    }

    pub fn with(mut self, field: &str, tol: f64) -> Self {
        self.per_field.push((field.to_string(), tol));
        self
    }

    fn get(&self, field: &str) -> f64 {
        self.per_field
            .iter()
            .rev()
            .find(|(f, _)| f == field)
            .map_or(self.default, |(_, t)| *t)
    }
}

/// Compares every metric of `a` against reference `b`. Reports for
/// different configurations are refused unless `allow_config_mismatch`.
pub fn compare_reports(
    a: &PerformanceReport,
    b: &PerformanceReport,
    tol: &Tolerances,
    allow_config_mismatch: bool,
) -> Option<ComparisonVerdict> {
    if !allow_config_mismatch && a.provenance.config_hash != b.provenance.config_hash {
        return None;
    }
    let fields = a
        .metrics()
        .into_iter()
        .zip(b.metrics())
        .map(|((name, x), (_, y))| {
            let t = tol.get(name);
            let rel = relative_error(x, y);
            FieldCheck {
                name: name.to_string(),
                actual: x,
                reference: y,
                rel_error: rel,
                allowed: t * y.abs(),
                pass: rel <= t,
            }
        })
        .collect();
    Some(ComparisonVerdict::from_fields(fields))
}

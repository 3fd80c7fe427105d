//! Discrete-event simulator of the container platform and the VM
//! infrastructure behind it, used as an independent check on the
//! analytic model.

mod model;
mod stats;

use msp_core::report::{ComparisonVerdict, FieldCheck, PerformanceReport};
use msp_core::SystemConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use model::Conservation;
pub use stats::{LittleCheck, MetricSummary, ReplicationSummary, SimStats, METRICS};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub system: SystemConfig,
    /// Simulated time per replication, in the config's base unit.
    pub horizon: f64,
    /// Fraction of the horizon discarded.
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
    /// Queueing wait at or below which a request counts as immediate.
    pub immediate_threshold: f64,
    /// Release a VM whenever the others can absorb its containers,
    /// draining it first; otherwise only already-empty VMs are released.
    pub consolidate: bool,
    /// Check capacity invariants after every event.
    pub audit: bool,
}

impl SimConfig {
    pub fn from_system(cfg: &SystemConfig) -> Self {
        let s = &cfg.sim;
        Self {
            system: cfg.clone(),
            horizon: s.horizon,
            warmup: s.warmup,
            replications: s.replications,
            seed: s.seed,
            immediate_threshold: s.immediate_threshold,
            consolidate: s.consolidate,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be > 0");
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad("warmup must lie in [0,1)");
        }
        if self.replications < 1 {
            return bad("replications must be >= 1");
        }
        if !(self.immediate_threshold >= 0.0) {
            return bad("immediate_threshold must be >= 0");
        }
        let m = &self.system.micro;
        let i = &self.system.infra;
        if m.users * m.min_vms > i.pool_size * i.vms_per_pm {
            return bad("the pool cannot host every minimum host group");
        }
        Ok(())
    }
}

/// Runs independent replications and summarises them.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimStats, SimError> {
    cfg.validate()?;
    let micro = &cfg.system.micro;
    let reps: Vec<ReplicationSummary> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r);
            let rep = model::Sim::new(cfg, rng).run();
            ReplicationSummary::new(rep, micro.users, micro.containers_per_vm, micro.container_rate)
        })
        .collect();
    Ok(SimStats::aggregate(reps))
}

/// Metrics both the analytic report and the simulator define the same way.
pub const SHARED_METRICS: [&str; 9] = [
    "micro.rejection",
    "micro.total_delay",
    "micro.p_immediate",
    "micro.mean_vms",
    "micro.mean_containers",
    "micro.mean_util",
    "macro.p_reject",
    "macro.total_delay",
    "macro.p_immediate",
];

/// Absolute slack for probability-valued metrics, where a relative
/// tolerance on a near-zero mean is meaningless.
pub const PROBABILITY_FLOOR: f64 = 0.005;

fn is_probability(name: &str) -> bool {
    matches!(
        name,
        "micro.rejection" | "micro.p_immediate" | "micro.mean_util" | "macro.p_reject" | "macro.p_immediate"
    )
}

/// Each shared metric passes when the analytic value lies within
/// `max(tol·|mean|, CI half-width)` of the simulated mean.
pub fn validate_against_analytic(report: &PerformanceReport, stats: &SimStats, tol: f64) -> ComparisonVerdict {
    let fields = SHARED_METRICS
        .iter()
        .map(|&name| {
            let actual = report.metric(name).unwrap_or(f64::NAN);
            let (reference, half) = stats
                .metric(name)
                .map_or((f64::NAN, 0.0), |m| (m.mean, m.half_width));
            let mut allowed = (tol * reference.abs()).max(half);
            if is_probability(name) && tol > 0.0 {
                allowed = allowed.max(PROBABILITY_FLOOR);
            }
            let dev = (actual - reference).abs();
            FieldCheck {
                name: name.to_string(),
                actual,
                reference,
                rel_error: msp_core::report::relative_error(actual, reference),
                allowed,
                pass: dev <= allowed,
            }
        })
        .collect();
    ComparisonVerdict::from_fields(fields)
}

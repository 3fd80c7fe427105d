use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{Replication, Tally};

/// Metric names reported by the simulator, in output order.
pub const METRICS: [&str; 17] = [
    "micro.rejection",
    "micro.wait",
    "micro.total_delay",
    "micro.p_immediate",
    "micro.mean_vms",
    "micro.mean_containers",
    "micro.mean_util",
    "micro.util_ratio_of_means",
    "macro.p_reject",
    "macro.bp_q",
    "macro.bp_r",
    "macro.total_delay",
    "macro.queue_wait",
    "macro.pm_wait",
    "macro.provisioning_time",
    "macro.p_immediate",
    "macro.p_s",
];

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub(crate) fn replication_metrics(t: &Tally, users: usize, m: usize, phi: f64) -> Vec<f64> {
    let obs = t.observed * users as f64;
    let wait = ratio(t.waits, t.waits_n as f64);
    let queued = ratio(t.queued, obs);
    let running = ratio(t.running, obs);
    let vms = ratio(t.vms, obs);
    let vm_arr = t.vm_arrivals as f64;
    vec![
        ratio(t.rejected as f64, t.arrivals as f64),
        wait,
        wait + 1.0 / phi,
        ratio(t.immediate as f64, t.arrivals as f64),
        vms,
        running,
        ratio(t.util, obs),
        ratio(queued + running, vms * m as f64),
        ratio((t.vm_full_queue + t.vm_no_capacity) as f64, vm_arr),
        ratio(t.vm_full_queue as f64, vm_arr),
        ratio(t.vm_no_capacity as f64, vm_arr),
        ratio(t.vm_total, t.vm_done as f64),
        ratio(t.vm_queue, t.vm_done as f64),
        ratio(t.vm_pm_wait, t.vm_done as f64),
        ratio(t.vm_provision, t.vm_done as f64),
        ratio(t.vm_immediate as f64, vm_arr),
        if t.lookups > 0 {
            t.lookup_hits as f64 / t.lookups as f64
        } else {
            1.0
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: &'static str,
    pub mean: f64,
    /// Sample variance across replications.
    pub variance: f64,
    /// Half-width of the 95% Student-t interval; zero with one replication.
    pub half_width: f64,
    pub low: f64,
    pub high: f64,
}

impl MetricSummary {
    pub fn from_samples(name: &'static str, xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let half_width = if n > 1 && variance > 0.0 {
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("degrees of freedom are positive")
                .inverse_cdf(0.975);
            t * (variance / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            name,
            mean,
            variance,
            half_width,
            low: mean - half_width,
            high: mean + half_width,
        }
    }
}

/// Micro-layer Little's-law ingredients for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LittleCheck {
    /// Time-average number of requests queued or instantiating.
    pub mean_queue: f64,
    /// Admitted requests per unit time.
    pub throughput: f64,
    /// Mean time from admission to running.
    pub mean_wait: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub metrics: Vec<f64>,
    pub little: LittleCheck,
    #[serde(skip)]
    pub conservation: crate::Conservation,
    pub capacity_violations: u64,
    pub events: u64,
    pub digest: u64,
}

impl ReplicationSummary {
    pub(crate) fn new(r: Replication, users: usize, m: usize, phi: f64) -> Self {
        let t = &r.tally;
        Self {
            metrics: replication_metrics(t, users, m, phi),
            little: LittleCheck {
                mean_queue: ratio(t.queued, t.observed),
                throughput: ratio(t.admitted as f64, t.observed),
                mean_wait: ratio(t.waits, t.waits_n as f64),
            },
            conservation: r.conservation,
            capacity_violations: r.capacity_violations,
            events: r.events,
            digest: r.digest,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimStats {
    pub metrics: Vec<MetricSummary>,
    pub replications: Vec<ReplicationSummary>,
}

impl SimStats {
    pub(crate) fn aggregate(replications: Vec<ReplicationSummary>) -> Self {
        let metrics = METRICS
            .iter()
            .enumerate()
            .map(|(n, name)| {
                let xs: Vec<f64> = replications.iter().map(|r| r.metrics[n]).collect();
                MetricSummary::from_samples(name, &xs)
            })
            .collect();
        Self {
            metrics,
            replications,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.mean)
    }

    pub fn capacity_violations(&self) -> u64 {
        self.replications.iter().map(|r| r.capacity_violations).sum()
    }
}

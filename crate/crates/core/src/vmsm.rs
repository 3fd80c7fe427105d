//! VM sub-model for one representative PM: a hypervisor queue, a
//! single provisioning unit and the VMs already deployed.
//!
//! State `(i, j, k)`: `i` queued requests, `j ∈ {0,1}` under
//! provisioning, `k` deployed VMs, with `i + j + k ≤ m`. The unit is
//! work-conserving, so `i > 0` implies `j = 1`.

use serde::Serialize;

use crate::ctmc::{
    build_generator, solve_steady_state, CtmcModel, ProbabilityVector, SolverOptions, StateSpace,
};
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VmsmParams {
    /// Per-PM arrival rate λ_h.
    pub arrival_rate: f64,
    /// VM instantiation rate δ.
    pub instantiation_rate: f64,
    /// Per-VM completion rate η.
    pub completion_rate: f64,
    /// Release rate imposed by the container platform, η_c.
    pub platform_release_rate: f64,
    /// Max VMs per PM (also the PM queue size), m.
    pub vms_per_pm: usize,
    /// Pool size N.
    pub pool_size: usize,
}

impl VmsmParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(ModelError::invalid("arrival_rate", "must be finite and >= 0"));
        }
        if !(self.instantiation_rate > 0.0 && self.instantiation_rate.is_finite()) {
            return Err(ModelError::invalid("instantiation_rate", "must be > 0"));
        }
        if !(self.completion_rate > 0.0 && self.completion_rate.is_finite()) {
            return Err(ModelError::invalid("completion_rate", "must be > 0"));
        }
        if !(self.platform_release_rate >= 0.0 && self.platform_release_rate.is_finite()) {
            return Err(ModelError::invalid("platform_release_rate", "must be >= 0"));
        }
        if self.vms_per_pm < 1 {
            return Err(ModelError::invalid("vms_per_pm", "must be >= 1"));
        }
        if self.pool_size < 1 {
            return Err(ModelError::invalid("pool_size", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VmsmState {
    pub queued: usize,
    pub provisioning: usize,
    pub deployed: usize,
}

impl VmsmState {
    pub const fn new(queued: usize, provisioning: usize, deployed: usize) -> Self {
        Self {
            queued,
            provisioning,
            deployed,
        }
    }

    fn occupancy(self) -> usize {
        self.queued + self.provisioning + self.deployed
    }
}

/// `λ_h = λ_a (1 − BP_q) / N`.
pub fn per_pm_arrival_rate(total_rate: f64, bp_q: f64, pool_size: usize) -> f64 {
    total_rate * (1.0 - bp_q) / pool_size as f64
}

/// State count by the recurrence `f(m) = 2f(m−1) − f(m−2) + 1` from
/// `f(1) = 3`, `f(2) = 6`.
pub fn vmsm_state_count(m: usize) -> usize {
    assert!(m >= 1, "vms_per_pm must be >= 1");
    let (mut prev, mut cur) = (3usize, 6usize);
    match m {
        1 => 3,
        2 => 6,
        _ => {
            for _ in 3..=m {
                let next = 2 * cur - prev + 1;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Reachable states in lexicographic `(i, j, k)` order.
pub fn enumerate_states(m: usize) -> Result<StateSpace<VmsmState>, ModelError> {
    let mut v = Vec::new();
    for i in 0..=m {
        for j in 0..=1 {
            if i > 0 && j == 0 {
                continue;
            }
            for k in 0..=(m.saturating_sub(i + j)) {
                if i + j + k <= m {
                    v.push(VmsmState::new(i, j, k));
                }
            }
        }
    }
    Ok(StateSpace::new(v)?)
}

pub fn build_vmsm(p: &VmsmParams) -> Result<CtmcModel<VmsmState>, ModelError> {
    p.validate()?;
    let m = p.vms_per_pm;
    let space = enumerate_states(m)?;
    let mut t = Vec::new();
    for &st in space.states() {
        let VmsmState {
            queued: i,
            provisioning: j,
            deployed: k,
        } = st;
        if st.occupancy() < m && p.arrival_rate > 0.0 {
            let to = if j == 0 {
                VmsmState::new(i, 1, k)
            } else {
                VmsmState::new(i + 1, j, k)
            };
            t.push((st, to, p.arrival_rate));
        }
        if j == 1 {
            let to = if i > 0 {
                VmsmState::new(i - 1, 1, k + 1)
            } else {
                VmsmState::new(0, 0, k + 1)
            };
            t.push((st, to, p.instantiation_rate));
        }
        if k >= 1 {
            let rate = k as f64 * p.completion_rate + p.platform_release_rate;
            // Promotion on departure only matters for (i>0, j=0), which
            // the work-conserving unit never reaches.
            let to = if j == 0 && i > 0 {
                VmsmState::new(i - 1, 1, k - 1)
            } else {
                VmsmState::new(i, j, k - 1)
            };
            t.push((st, to, rate));
        }
    }
    let generator = build_generator(&space, t)?;
    Ok(CtmcModel { space, generator })
}

#[derive(Debug, Clone, Serialize)]
pub struct VmsmSolution {
    #[serde(skip)]
    pub pi: ProbabilityVector,
    /// Probability a PM cannot admit a request.
    pub p_na: f64,
    /// Probability at least one of the N PMs can admit: `1 − P_na^N`.
    pub p_s: f64,
    pub arrival_rate: f64,
    /// Third delay: mean wait in the PM queue.
    pub pm_wait: f64,
    /// Fourth delay: mean provisioning time by Little's law.
    pub provisioning_time: f64,
    /// `1/δ`, the unconditional instantiation latency.
    pub naive_provisioning_time: f64,
    pub mean_deployed: f64,
    pub degenerate_load: bool,
}

pub fn vmsm_outputs(
    model: &CtmcModel<VmsmState>,
    pi: &ProbabilityVector,
    p: &VmsmParams,
) -> VmsmSolution {
    let st = |n: usize| *model.space.state(n);
    let p_na = pi.expectation(|n| (st(n).occupancy() == p.vms_per_pm) as u8 as f64);
    let p_s = 1.0 - p_na.powi(p.pool_size as i32);
    let throughput = p.arrival_rate * (1.0 - p_na);
    let degenerate_load = !(throughput > 0.0);
    let (pm_wait, provisioning_time) = if degenerate_load {
        (0.0, 0.0)
    } else {
        (
            pi.expectation(|n| st(n).queued as f64) / throughput,
            pi.expectation(|n| st(n).provisioning as f64) / throughput,
        )
    };
    VmsmSolution {
        pi: pi.clone(),
        p_na,
        p_s,
        arrival_rate: p.arrival_rate,
        pm_wait,
        provisioning_time,
        naive_provisioning_time: 1.0 / p.instantiation_rate,
        mean_deployed: pi.expectation(|n| st(n).deployed as f64),
        degenerate_load,
    }
}

pub fn solve_vmsm(p: &VmsmParams, opts: &SolverOptions) -> Result<VmsmSolution, ModelError> {
    let model = build_vmsm(p)?;
    let pi = solve_steady_state(&model.generator, opts)?;
    Ok(vmsm_outputs(&model, &pi, p))
}

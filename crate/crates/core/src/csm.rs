//! Container sub-model: one user's host group with a global request
//! queue, a single container-instantiation unit and threshold autoscaling.
//!
//! States are `(i, j, k)`: queued requests, running containers and
//! active VMs. The queue capacity is `S·M`, so an arrival is blocked
//! exactly when `i + j = S·M`.

use serde::Serialize;

use crate::ctmc::{
    build_generator, solve_steady_state, CtmcModel, ProbabilityVector, SolverOptions, StateSpace,
};
use crate::error::ModelError;

/// Default cap on enumerated states.
pub const DEFAULT_MAX_STATES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CsmParams {
    /// Container request arrival rate λ.
    pub arrival_rate: f64,
    /// Container instantiation rate φ.
    pub container_rate: f64,
    /// Per-container completion rate μ (1 / lifetime).
    pub completion_rate: f64,
    /// Minimum host-group size s.
    pub min_vms: usize,
    /// Maximum host-group size S.
    pub max_vms: usize,
    /// Containers per VM, M.
    pub containers_per_vm: usize,
    /// Scale up when utilisation is at or above this.
    pub high_util: f64,
    /// Scale down when utilisation is at or below this.
    pub low_util: f64,
    /// VM acquisition rate.
    pub acquire_rate: f64,
    /// VM release rate.
    pub release_rate: f64,
}

impl CsmParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let rate_ok = |r: f64| r.is_finite() && r > 0.0;
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(ModelError::invalid("arrival_rate", "must be finite and >= 0"));
        }
        for (name, r) in [
            ("container_rate", self.container_rate),
            ("completion_rate", self.completion_rate),
            ("acquire_rate", self.acquire_rate),
            ("release_rate", self.release_rate),
        ] {
            if !rate_ok(r) {
                return Err(ModelError::invalid(name, format!("must be > 0, got {r}")));
            }
        }
        if self.min_vms < 1 || self.min_vms > self.max_vms {
            return Err(ModelError::invalid("min_vms", "need 1 <= s <= S"));
        }
        if self.containers_per_vm < 1 {
            return Err(ModelError::invalid("containers_per_vm", "must be >= 1"));
        }
        if !(0.0 <= self.low_util && self.low_util < self.high_util && self.high_util <= 1.0) {
            return Err(ModelError::invalid(
                "low_util",
                "need 0 <= low_util < high_util <= 1",
            ));
        }
        Ok(())
    }

    /// Queue capacity `L_q = S·M`.
    pub fn queue_capacity(&self) -> usize {
        self.max_vms * self.containers_per_vm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CsmState {
    pub queued: usize,
    pub running: usize,
    pub vms: usize,
}

impl CsmState {
    pub const fn new(queued: usize, running: usize, vms: usize) -> Self {
        Self {
            queued,
            running,
            vms,
        }
    }
}

/// `(i + j) / (k·M)`.
pub fn utilization(state: CsmState, containers_per_vm: usize) -> f64 {
    (state.queued + state.running) as f64 / (state.vms * containers_per_vm) as f64
}

/// Closed-form count `M·S² − s·M·S`. It does not equal the enumerated
/// cardinality and is kept only for comparison.
pub fn closed_form_state_count(s: usize, big_s: usize, m: usize) -> usize {
    m * big_s * big_s - s * m * big_s
}

/// Number of states [`enumerate_states`] would produce.
pub fn state_count(p: &CsmParams) -> usize {
    let cap = p.queue_capacity();
    (p.min_vms..=p.max_vms)
        .map(|k| {
            let jmax = (k * p.containers_per_vm).min(cap);
            (0..=jmax).map(|j| cap - j + 1).sum::<usize>()
        })
        .sum()
}

pub fn enumerate_states(p: &CsmParams) -> Result<StateSpace<CsmState>, ModelError> {
    enumerate_states_bounded(p, DEFAULT_MAX_STATES)
}

/// All `(i, j, k)` with `s ≤ k ≤ S`, `j ≤ k·M` and `i + j ≤ S·M`,
/// ordered by `(k, j, i)`.
pub fn enumerate_states_bounded(
    p: &CsmParams,
    bound: usize,
) -> Result<StateSpace<CsmState>, ModelError> {
    p.validate()?;
    let states = state_count(p);
    if states > bound {
        return Err(ModelError::CapacityOverflow { states, bound });
    }
    let cap = p.queue_capacity();
    let mut out = Vec::with_capacity(states);
    for k in p.min_vms..=p.max_vms {
        for j in 0..=(k * p.containers_per_vm).min(cap) {
            for i in 0..=(cap - j) {
                out.push(CsmState::new(i, j, k));
            }
        }
    }
    Ok(StateSpace::new(out)?)
}

fn scales_up(p: &CsmParams, st: CsmState) -> bool {
    st.vms < p.max_vms && utilization(st, p.containers_per_vm) >= p.high_util
}

fn scales_down(p: &CsmParams, st: CsmState) -> bool {
    st.vms > p.min_vms && utilization(st, p.containers_per_vm) <= p.low_util
}

pub fn build_csm(p: &CsmParams) -> Result<CtmcModel<CsmState>, ModelError> {
    let space = enumerate_states(p)?;
    let cap = p.queue_capacity();
    let m = p.containers_per_vm;
    let mut t = Vec::with_capacity(space.len() * 4);
    for &st in space.states() {
        let CsmState {
            queued: i,
            running: j,
            vms: k,
        } = st;
        if i + j < cap && p.arrival_rate > 0.0 {
            t.push((st, CsmState::new(i + 1, j, k), p.arrival_rate));
        }
        if i > 0 && j < k * m {
            t.push((st, CsmState::new(i - 1, j + 1, k), p.container_rate));
        }
        if j > 0 {
            t.push((st, CsmState::new(i, j - 1, k), j as f64 * p.completion_rate));
        }
        if scales_up(p, st) {
            t.push((st, CsmState::new(i, j, k + 1), p.acquire_rate));
        }
        // An idle VM exists under binpack placement iff the remaining
        // k-1 VMs can hold every running container.
        if scales_down(p, st) && j <= (k - 1) * m {
            t.push((st, CsmState::new(i, j, k - 1), p.release_rate));
        }
    }
    let generator = build_generator(&space, t)?;
    Ok(CtmcModel { space, generator })
}

#[derive(Debug, Clone, Serialize)]
pub struct CsmSolution {
    #[serde(skip)]
    pub pi: ProbabilityVector,
    pub states: usize,
    /// Blocking probability in the platform queue.
    pub bp_q: f64,
    pub p_req: f64,
    pub p_rel: f64,
    /// VM request rate λ_c = λ·p_req.
    pub vm_request_rate: f64,
    /// VM release rate η_c = μ·p_rel.
    pub vm_release_rate: f64,
    pub mean_queue: f64,
    /// Mean wait in the platform queue (Little's law).
    pub mean_wait: f64,
    pub mean_containers: f64,
    pub mean_vms: f64,
    /// State-wise expected utilisation `E[u]`.
    pub mean_util: f64,
    /// `E[i + j] / (E[k]·M)`, reported as a diagnostic.
    pub util_ratio_of_means: f64,
    pub p_immediate: f64,
    /// `mean_wait + 1/φ`.
    pub total_delay: f64,
    /// Set when `λ(1 − bp_q) = 0`; the wait is then reported as zero.
    pub degenerate_load: bool,
}

pub fn csm_outputs(
    model: &CtmcModel<CsmState>,
    pi: &ProbabilityVector,
    p: &CsmParams,
) -> CsmSolution {
    let cap = p.queue_capacity();
    let m = p.containers_per_vm;
    let st = |n: usize| *model.space.state(n);
    let sum_where = |pred: &dyn Fn(CsmState) -> bool| pi.expectation(|n| pred(st(n)) as u8 as f64);

    let bp_q = sum_where(&|s| s.queued + s.running == cap);
    let p_req = sum_where(&|s| scales_up(p, s));
    let p_rel = sum_where(&|s| scales_down(p, s));
    let p_immediate = sum_where(&|s| s.queued == 0 && s.running < s.vms * m && s.running < cap);
    let mean_queue = pi.expectation(|n| st(n).queued as f64);
    let mean_containers = pi.expectation(|n| st(n).running as f64);
    let mean_vms = pi.expectation(|n| st(n).vms as f64);
    let mean_util = pi.expectation(|n| utilization(st(n), m));
    let throughput = p.arrival_rate * (1.0 - bp_q);
    let degenerate_load = !(throughput > 0.0);
    let mean_wait = if degenerate_load {
        0.0
    } else {
        mean_queue / throughput
    };
    CsmSolution {
        pi: pi.clone(),
        states: model.n(),
        bp_q,
        p_req,
        p_rel,
        vm_request_rate: p.arrival_rate * p_req,
        vm_release_rate: p.completion_rate * p_rel,
        mean_queue,
        mean_wait,
        mean_containers,
        mean_vms,
        mean_util,
        util_ratio_of_means: (mean_queue + mean_containers) / (mean_vms * m as f64),
        p_immediate,
        total_delay: mean_wait + 1.0 / p.container_rate,
        degenerate_load,
    }
}

/// Builds, solves and interrogates the CSM in one call.
pub fn solve_csm(p: &CsmParams, opts: &SolverOptions) -> Result<CsmSolution, ModelError> {
    let model = build_csm(p)?;
    let pi = solve_steady_state(&model.generator, opts)?;
    Ok(csm_outputs(&model, &pi, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(s: usize, big_s: usize, m: usize) -> CsmParams {
        CsmParams {
            arrival_rate: 1.0,
            container_rate: 1.0,
            completion_rate: 1.0,
            min_vms: s,
            max_vms: big_s,
            containers_per_vm: m,
            high_util: 0.75,
            low_util: 0.25,
            acquire_rate: 0.5,
            release_rate: 0.5,
        }
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(utilization(CsmState::new(0, 0, 2), 4), 0.0);
        assert_eq!(utilization(CsmState::new(2, 6, 2), 4), 1.0);
        assert_eq!(utilization(CsmState::new(1, 3, 2), 4), 0.5);
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(closed_form_state_count(2, 5, 4), 60);
        assert_eq!(closed_form_state_count(3, 3, 7), 0);
        assert_eq!(closed_form_state_count(1, 2, 1), 2);
    }

    #[test]
    fn minimal_state_space() {
        let sp = enumerate_states(&params(1, 1, 1)).unwrap();
        assert_eq!(
            sp.states(),
            &[CsmState::new(0, 0, 1), CsmState::new(1, 0, 1), CsmState::new(0, 1, 1)]
        );
    }

    #[test]
    fn capacity_overflow() {
        let p = params(1, 40, 40);
        assert!(matches!(
            enumerate_states_bounded(&p, 1000),
            Err(ModelError::CapacityOverflow { .. })
        ));
    }

    #[test]
    fn invalid_params() {
        let mut p = params(1, 2, 1);
        p.low_util = 0.9;
        p.high_util = 0.7;
        assert!(p.validate().is_err());
        let mut p = params(3, 2, 1);
        p.min_vms = 3;
        assert!(p.validate().is_err());
        let mut p = params(1, 2, 1);
        p.container_rate = 0.0;
        assert!(build_csm(&p).is_err());
    }

    #[test]
    fn minimal_chain_edges() {
        let model = build_csm(&params(1, 1, 1)).unwrap();
        let e = |s| model.edges_from(&s);
        assert_eq!(e(CsmState::new(0, 0, 1)), vec![(CsmState::new(1, 0, 1), 1.0)]);
        assert_eq!(e(CsmState::new(1, 0, 1)), vec![(CsmState::new(0, 1, 1), 1.0)]);
        assert_eq!(e(CsmState::new(0, 1, 1)), vec![(CsmState::new(0, 0, 1), 1.0)]);
    }

    #[test]
    fn scale_up_threshold_is_inclusive() {
        // (1,2,1) with M=4 has u = 0.75 exactly.
        let model = build_csm(&params(1, 2, 4)).unwrap();
        assert_eq!(
            model.rate(&CsmState::new(1, 2, 1), &CsmState::new(1, 2, 2)),
            0.5
        );
        assert_eq!(
            model.rate(&CsmState::new(1, 1, 1), &CsmState::new(1, 1, 2)),
            0.0
        );
    }

    #[test]
    fn three_state_outputs() {
        // Cycle with unit rates: π uniform over the three states.
        let p = params(1, 1, 1);
        let sol = solve_csm(&p, &SolverOptions::default()).unwrap();
        for &x in sol.pi.as_slice() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sol.bp_q, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.p_immediate, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.mean_queue, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.mean_wait, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.total_delay, 2.0, epsilon = 1e-12);
        assert_eq!(sol.p_req, 0.0);
        assert_eq!(sol.p_rel, 0.0);
    }

    #[test]
    fn empty_system_limit() {
        let mut p = params(2, 4, 3);
        p.arrival_rate = 1e-9;
        let sol = solve_csm(&p, &SolverOptions::default()).unwrap();
        assert!(sol.bp_q < 1e-9);
        assert_abs_diff_eq!(sol.mean_vms, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.p_immediate, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_load_is_degenerate() {
        let mut p = params(2, 3, 2);
        p.arrival_rate = 0.0;
        let sol = solve_csm(&p, &SolverOptions::default()).unwrap();
        assert!(sol.degenerate_load);
        assert_eq!(sol.mean_wait, 0.0);
        assert_eq!(sol.bp_q, 0.0);
        assert_abs_diff_eq!(sol.mean_vms, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn output_ranges_and_orderings() {
        let mut p = params(1, 3, 2);
        p.arrival_rate = 2.5;
        p.completion_rate = 0.7;
        let sol = solve_csm(&p, &SolverOptions::default()).unwrap();
        assert!(sol.vm_request_rate <= p.arrival_rate);
        assert!(sol.vm_release_rate <= p.completion_rate);
        assert!(sol.p_immediate + sol.bp_q <= 1.0 + 1e-12);
        assert!((0.0..=1.0).contains(&sol.mean_util));
        assert!(sol.mean_queue <= p.queue_capacity() as f64);
    }

    #[test]
    fn blocking_monotone_on_grid() {
        let opts = SolverOptions::default();
        let bp = |lambda: f64, big_s: usize| {
            let mut p = params(1, big_s, 2);
            p.arrival_rate = lambda;
            solve_csm(&p, &opts).unwrap().bp_q
        };
        for big_s in 1..=4 {
            let mut prev = 0.0;
            for lambda in [0.5, 1.0, 2.0, 4.0] {
                let b = bp(lambda, big_s);
                assert!(b >= prev - 1e-12);
                prev = b;
            }
        }
        for lambda in [0.5, 2.0, 4.0] {
            let mut prev = 1.0;
            for big_s in 1..=4 {
                let b = bp(lambda, big_s);
                assert!(b <= prev + 1e-12);
                prev = b;
            }
        }
    }
}

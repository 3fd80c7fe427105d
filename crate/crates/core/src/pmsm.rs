//! Physical machine sub-model: the infrastructure's global queue feeding
//! a pool lookup that gets two attempts per request.
//!
//! State `(i, s)` means `i` requests are present and the latest lookup
//! succeeded, `(i, f)` that it failed once. `(0,0)` is the empty system.

use serde::Serialize;

use crate::ctmc::{
    build_generator, solve_steady_state, CtmcModel, ProbabilityVector, SolverOptions, StateSpace,
};
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmsmParams {
    /// External VM request rate λ_x.
    pub external_rate: f64,
    /// Platform-originated VM request rate λ_c (already aggregated over users).
    pub platform_rate: f64,
    /// Lookup rate in the pool.
    pub lookup_rate: f64,
    /// Probability a lookup finds a PM that can accept the request.
    pub success_prob: f64,
    /// Global queue size L_Q.
    pub queue_size: usize,
}

impl PmsmParams {
    /// Aggregate arrival rate λ_a = λ_x + λ_c.
    pub fn total_rate(&self) -> f64 {
        self.external_rate + self.platform_rate
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.external_rate >= 0.0 && self.platform_rate >= 0.0) {
            return Err(ModelError::invalid("external_rate", "arrival rates must be >= 0"));
        }
        if !(self.total_rate() > 0.0 && self.total_rate().is_finite()) {
            return Err(ModelError::invalid("external_rate", "aggregate arrival rate must be > 0"));
        }
        if !(self.lookup_rate > 0.0 && self.lookup_rate.is_finite()) {
            return Err(ModelError::invalid("lookup_rate", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.success_prob) {
            return Err(ModelError::invalid("success_prob", "must lie in [0,1]"));
        }
        if self.queue_size < 1 {
            return Err(ModelError::invalid("queue_size", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PmsmState {
    Empty,
    Success(usize),
    Failed(usize),
}

impl PmsmState {
    pub fn population(self) -> usize {
        match self {
            PmsmState::Empty => 0,
            PmsmState::Success(i) | PmsmState::Failed(i) => i,
        }
    }
}

pub fn state_count(queue_size: usize) -> usize {
    2 * queue_size + 1
}

/// `(0,0), (1,s), (1,f), ..., (L_Q,s), (L_Q,f)`.
pub fn enumerate_states(queue_size: usize) -> Result<StateSpace<PmsmState>, ModelError> {
    let mut v = Vec::with_capacity(state_count(queue_size));
    v.push(PmsmState::Empty);
    for i in 1..=queue_size {
        v.push(PmsmState::Success(i));
        v.push(PmsmState::Failed(i));
    }
    Ok(StateSpace::new(v)?)
}

pub fn build_pmsm(p: &PmsmParams) -> Result<CtmcModel<PmsmState>, ModelError> {
    use PmsmState::*;
    p.validate()?;
    let space = enumerate_states(p.queue_size)?;
    let la = p.total_rate();
    let ok = p.success_prob * p.lookup_rate;
    let fail = (1.0 - p.success_prob) * p.lookup_rate;
    let lq = p.queue_size;
    let mut t = Vec::new();
    let mut push = |from, to, rate: f64| {
        if rate > 0.0 {
            t.push((from, to, rate));
        }
    };
    push(Empty, Success(1), la);
    for i in 1..=lq {
        let down_s = if i == 1 { Empty } else { Success(i - 1) };
        if i < lq {
            push(Success(i), Success(i + 1), la);
            push(Failed(i), Failed(i + 1), la);
        }
        push(Success(i), down_s, ok);
        push(Success(i), Failed(i), fail);
        if i == 1 {
            // Second attempt resolves either way.
            push(Failed(1), Empty, p.lookup_rate);
        } else {
            push(Failed(i), Success(i - 1), ok);
            push(Failed(i), Failed(i - 1), fail);
        }
    }
    let generator = build_generator(&space, t)?;
    Ok(CtmcModel { space, generator })
}

#[derive(Debug, Clone, Serialize)]
pub struct PmsmSolution {
    #[serde(skip)]
    pub pi: ProbabilityVector,
    /// Blocking because the global queue is full.
    pub bp_q: f64,
    /// Blocking because no PM could accept the request.
    pub bp_r: f64,
    pub p_reject: f64,
    pub mean_queue: f64,
    /// First delay: mean wait in the global queue.
    pub mean_wait: f64,
    /// Second delay: mean lookup time.
    pub lookup_delay: f64,
    /// Probability an arrival finds the system empty.
    pub p_immediate: f64,
    pub degenerate_load: bool,
}

pub fn pmsm_outputs(
    model: &CtmcModel<PmsmState>,
    pi: &ProbabilityVector,
    p: &PmsmParams,
) -> PmsmSolution {
    let la = p.total_rate();
    let alpha = p.lookup_rate;
    let ps = p.success_prob;
    let prob = |s: PmsmState| model.space.index_of(&s).map_or(0.0, |n| pi.get(n));
    let lq = p.queue_size;
    let bp_q = prob(PmsmState::Success(lq)) + prob(PmsmState::Failed(lq));
    let weight = alpha * (1.0 - ps) / (alpha * ps + la);
    let bp_r = (1..=lq).map(|i| weight * prob(PmsmState::Failed(i))).sum::<f64>().max(0.0);
    let mean_queue = pi.expectation(|n| model.space.state(n).population() as f64);
    let admitted = la * (1.0 - bp_q);
    let degenerate_load = !(admitted > 0.0);
    let mean_wait = if degenerate_load { 0.0 } else { mean_queue / admitted };
    let lookup_delay = if bp_q < 1.0 {
        (1.0 / alpha + (1.0 - ps) / alpha) / (1.0 - bp_q)
    } else {
        0.0
    };
    PmsmSolution {
        pi: pi.clone(),
        bp_q,
        bp_r,
        p_reject: (bp_q + bp_r).min(1.0),
        mean_queue,
        mean_wait,
        lookup_delay,
        p_immediate: prob(PmsmState::Empty),
        degenerate_load,
    }
}

pub fn solve_pmsm(p: &PmsmParams, opts: &SolverOptions) -> Result<PmsmSolution, ModelError> {
    let model = build_pmsm(p)?;
    let pi = solve_steady_state(&model.generator, opts)?;
    Ok(pmsm_outputs(&model, &pi, p))
}

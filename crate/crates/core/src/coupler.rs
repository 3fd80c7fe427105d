//! Successive substitution across the three sub-models.
//!
//! The CSM hands `(λ_c, η_c)` to the infrastructure, the PMSM hands
//! `BP_q` to the VMSM, the VMSM returns `P_s` to the PMSM, and the
//! infrastructure delay `td` sets the CSM's acquisition and release
//! rates. The outer loop iterates on `bp_q`, the inner loop on `BP_q`.

use serde::Serialize;

use crate::config::{CouplingOptions, SystemConfig};
use crate::csm::{solve_csm, CsmParams, CsmSolution};
use crate::error::ModelError;
use crate::pmsm::{solve_pmsm, PmsmParams, PmsmSolution};
use crate::vmsm::{per_pm_arrival_rate, solve_vmsm, VmsmParams, VmsmSolution};

/// `td = wt_Q + lut + PM_wt + pt`.
pub fn total_delay(queue_wait: f64, lookup: f64, pm_wait: f64, provisioning: f64) -> f64 {
    queue_wait + lookup + pm_wait + provisioning
}

/// `α = β = 1/td`, returned as `(acquire, release)`.
pub fn derive_rates(td: f64) -> Result<(f64, f64), ModelError> {
    if !(td > 0.0) || !td.is_finite() {
        return Err(ModelError::NonPositiveDelay(td));
    }
    Ok((1.0 / td, 1.0 / td))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seed,
    Inner,
    DampedInner,
    Outer,
}

/// One step of the fixed-point iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub phase: Phase,
    pub outer: usize,
    pub inner: usize,
    pub bp_q: f64,
    #[serde(rename = "BP_q")]
    pub big_bp_q: f64,
    pub p_s: f64,
    /// Absolute change of the loop's convergence variable.
    pub diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoupledSolution {
    pub converged: bool,
    pub outer_iterations: usize,
    /// Inner-loop iteration count for each outer iteration.
    pub inner_iterations: Vec<usize>,
    pub damped_retry_used: bool,
    pub bp_q: f64,
    #[serde(rename = "BP_q")]
    pub big_bp_q: f64,
    #[serde(rename = "BP_r")]
    pub bp_r: f64,
    pub p_s: f64,
    pub p_na: f64,
    /// Per-user VM request rate from the CSM.
    pub vm_request_rate: f64,
    /// Aggregate arrival rate into the PMSM, `λ_x + users·λ_c`.
    pub total_vm_request_rate: f64,
    pub vm_release_rate: f64,
    /// VM acquisition (= release) rate fed to the final CSM.
    pub acquire_rate: f64,
    pub td: f64,
    pub csm: CsmSolution,
    pub pmsm: PmsmSolution,
    pub vmsm: VmsmSolution,
    pub trace: Vec<IterationRecord>,
}

impl CoupledSolution {
    pub fn max_inner_iterations(&self) -> usize {
        self.inner_iterations.iter().copied().max().unwrap_or(0)
    }
}

fn csm_params(cfg: &SystemConfig, acquire: f64, release: f64) -> CsmParams {
    let m = &cfg.micro;
    CsmParams {
        arrival_rate: m.arrival_rate,
        container_rate: m.container_rate,
        completion_rate: m.completion_rate,
        min_vms: m.min_vms,
        max_vms: m.max_vms,
        containers_per_vm: m.containers_per_vm,
        high_util: m.high_util,
        low_util: m.low_util,
        acquire_rate: acquire,
        release_rate: release,
    }
}

struct Infra<'a> {
    cfg: &'a SystemConfig,
    opts: &'a CouplingOptions,
    total_rate: f64,
    release_rate: f64,
}

impl Infra<'_> {
    fn pmsm(&self, p_s: f64) -> Result<PmsmSolution, ModelError> {
        let inf = &self.cfg.infra;
        solve_pmsm(
            &PmsmParams {
                external_rate: inf.arrival_rate,
                platform_rate: self.total_rate - inf.arrival_rate,
                lookup_rate: inf.lookup_rate,
                success_prob: p_s.clamp(0.0, 1.0),
                queue_size: inf.queue_size,
            },
            &self.opts.solver,
        )
    }

    fn vmsm(&self, big_bp_q: f64) -> Result<VmsmSolution, ModelError> {
        let inf = &self.cfg.infra;
        solve_vmsm(
            &VmsmParams {
                arrival_rate: per_pm_arrival_rate(self.total_rate, big_bp_q, inf.pool_size),
                instantiation_rate: inf.instantiation_rate,
                completion_rate: inf.completion_rate,
                platform_release_rate: self.release_rate,
                vms_per_pm: inf.vms_per_pm,
                pool_size: inf.pool_size,
            },
            &self.opts.solver,
        )
    }
}

struct InnerOutcome {
    converged: bool,
    iterations: usize,
    p_s: f64,
    pmsm: PmsmSolution,
    vmsm: VmsmSolution,
}

fn inner_loop(
    infra: &Infra<'_>,
    outer: usize,
    start_ps: f64,
    start: PmsmSolution,
    damped: bool,
    trace: &mut Vec<IterationRecord>,
) -> Result<InnerOutcome, ModelError> {
    let mut p_s = start_ps;
    let mut pmsm = start;
    let mut count = 0;
    loop {
        count += 1;
        let vmsm = infra.vmsm(pmsm.bp_q)?;
        p_s = if damped {
            0.5 * (p_s + vmsm.p_s)
        } else {
            vmsm.p_s
        };
        let next = infra.pmsm(p_s)?;
        let diff = (next.bp_q - pmsm.bp_q).abs();
        pmsm = next;
        trace.push(IterationRecord {
            phase: if damped { Phase::DampedInner } else { Phase::Inner },
            outer,
            inner: count,
            bp_q: f64::NAN,
            big_bp_q: pmsm.bp_q,
            p_s,
            diff,
        });
        if diff < infra.opts.max_err || count >= infra.opts.max_inner {
            return Ok(InnerOutcome {
                converged: diff < infra.opts.max_err,
                iterations: count,
                p_s,
                pmsm,
                vmsm,
            });
        }
    }
}

/// Runs the successive substitution to convergence or to the iteration
/// caps. A capped run still returns a solution, with `converged = false`
/// and the full trace.
pub fn fixed_point_solve(
    cfg: &SystemConfig,
    opts: &CouplingOptions,
) -> Result<CoupledSolution, ModelError> {
    opts.validate()
        .map_err(|e| ModelError::invalid("solver", e.to_string()))?;
    let users = cfg.micro.users as f64;
    let (a0, b0) = derive_rates(opts.initial_vm_delay)?;
    let mut csm = solve_csm(&csm_params(cfg, a0, b0), &opts.solver)?;
    let mut p_s = opts.initial_success_prob;
    let mut trace = vec![IterationRecord {
        phase: Phase::Seed,
        outer: 0,
        inner: 0,
        bp_q: csm.bp_q,
        big_bp_q: f64::NAN,
        p_s,
        diff: f64::NAN,
    }];
    let mut inner_iterations = Vec::new();
    let mut damped_retry_used = false;
    let mut acquire = a0;
    let mut outer = 0;

    loop {
        outer += 1;
        let infra = Infra {
            cfg,
            opts,
            total_rate: cfg.infra.arrival_rate + users * csm.vm_request_rate,
            release_rate: csm.vm_release_rate,
        };
        let start = infra.pmsm(p_s)?;
        let mut inner = inner_loop(&infra, outer, p_s, start.clone(), false, &mut trace)?;
        let mut iterations = inner.iterations;
        if !inner.converged && opts.damped_retry {
            damped_retry_used = true;
            inner = inner_loop(&infra, outer, p_s, start, true, &mut trace)?;
            iterations += inner.iterations;
        }
        inner_iterations.push(iterations);
        p_s = inner.p_s;
        let td = total_delay(
            inner.pmsm.mean_wait,
            inner.pmsm.lookup_delay,
            inner.vmsm.pm_wait,
            inner.vmsm.provisioning_time,
        );

        let finish = |csm: CsmSolution, converged: bool, acquire: f64, trace, inner_iterations| {
            CoupledSolution {
                converged,
                outer_iterations: outer,
                inner_iterations,
                damped_retry_used,
                bp_q: csm.bp_q,
                big_bp_q: inner.pmsm.bp_q,
                bp_r: inner.pmsm.bp_r,
                p_s,
                p_na: inner.vmsm.p_na,
                vm_request_rate: csm.vm_request_rate,
                total_vm_request_rate: infra.total_rate,
                vm_release_rate: csm.vm_release_rate,
                acquire_rate: acquire,
                td,
                csm,
                pmsm: inner.pmsm.clone(),
                vmsm: inner.vmsm.clone(),
                trace,
            }
        };

        if !inner.converged {
            return Ok(finish(csm, false, acquire, trace, inner_iterations));
        }
        let (a, b) = derive_rates(td)?;
        acquire = a;
        let next = solve_csm(&csm_params(cfg, a, b), &opts.solver)?;
        let diff = (next.bp_q - csm.bp_q).abs();
        trace.push(IterationRecord {
            phase: Phase::Outer,
            outer,
            inner: iterations,
            bp_q: next.bp_q,
            big_bp_q: inner.pmsm.bp_q,
            p_s,
            diff,
        });
        csm = next;
        if diff < opts.max_err {
            return Ok(finish(csm, true, acquire, trace, inner_iterations));
        }
        if outer >= opts.max_outer {
            return Ok(finish(csm, false, acquire, trace, inner_iterations));
        }
    }
}

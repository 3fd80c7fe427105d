use msp_core::coupler::Phase;
use msp_core::report::Tolerances;
use msp_core::{build_report, compare_reports, fixed_point_solve, SystemConfig};

const TABLE8: &str = include_str!("../../../configs/table8.cfg");

const SMALL: &str = "
time_unit = second
micro.users = 2
micro.arrival_rate = 0.05
micro.container_startup = 2 s
micro.container_lifetime = 60 s
micro.min_vms = 1
micro.max_vms = 3
micro.containers_per_vm = 2
micro.low_util = 0.3
micro.high_util = 0.8
macro.arrival_rate = 0.01
macro.queue = 10
macro.lookup_rate = 1
macro.pms = 4
macro.vms_per_pm = 2
macro.vm_startup = 20 s
macro.vm_lifetime = 400 s
";

fn table8() -> SystemConfig {
    SystemConfig::parse(TABLE8).unwrap()
}

#[test]
fn table8_converges_quickly() {
    let cfg = table8();
    let sol = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    assert!(sol.converged);
    assert!(sol.outer_iterations <= 15);
    assert!(sol.max_inner_iterations() <= 15);
    let last = sol.trace.iter().rev().find(|r| r.phase == Phase::Outer).unwrap();
    assert!(last.diff < cfg.solver.max_err);
    let last_inner = sol.trace.iter().rev().find(|r| r.phase == Phase::Inner).unwrap();
    assert!(last_inner.diff < cfg.solver.max_err);
}

#[test]
fn table8_light_load_delay_near_measured() {
    let cfg = table8();
    let sol = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    assert!((sol.td - 108.0).abs() / 108.0 < 0.10, "td = {}", sol.td);
    assert!((sol.acquire_rate - 1.0 / sol.td).abs() < 1e-15);
}

#[test]
fn platform_traffic_aggregates_over_users() {
    let cfg = table8();
    let sol = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    // The infrastructure saw λ_c from the CSM one step before the final one.
    let want = cfg.infra.arrival_rate + cfg.micro.users as f64 * sol.csm.vm_request_rate;
    assert!((sol.total_vm_request_rate - want).abs() / want < 1e-3);
    assert!(sol.total_vm_request_rate > cfg.infra.arrival_rate + sol.csm.vm_request_rate);
}

#[test]
fn zero_user_traffic_decouples() {
    let cfg = SystemConfig::parse(SMALL)
        .unwrap()
        .with_value("micro.arrival_rate", 0.0)
        .unwrap();
    let sol = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    assert!(sol.converged);
    assert!(sol.outer_iterations <= 2);
    assert_eq!(sol.bp_q, 0.0);
    assert_eq!(sol.vm_request_rate, 0.0);
    assert!((sol.total_vm_request_rate - cfg.infra.arrival_rate).abs() < 1e-18);

    let r = build_report(&sol, &cfg);
    assert_eq!(r.micro.rejection, 0.0);
    assert!((r.micro.p_immediate - 1.0).abs() < 1e-12);
    assert!((r.micro.mean_vms - cfg.micro.min_vms as f64).abs() < 1e-12);
    assert!(r.micro.degenerate_load);
}

#[test]
fn solves_are_bit_identical() {
    let cfg = table8();
    let a = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    let b = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    let ra = build_report(&a, &cfg);
    let rb = build_report(&b, &cfg);
    for ((n, x), (_, y)) in ra.metrics().into_iter().zip(rb.metrics()) {
        assert_eq!(x.to_bits(), y.to_bits(), "{n}");
    }
    assert_eq!(a.trace.len(), b.trace.len());
}

#[test]
fn report_invariants() {
    for cfg in [table8(), SystemConfig::parse(SMALL).unwrap()] {
        let sol = fixed_point_solve(&cfg, &cfg.solver).unwrap();
        let r = build_report(&sol, &cfg);
        for (n, v) in r.metrics() {
            assert!(v.is_finite() && v >= 0.0, "{n} = {v}");
        }
        for p in [r.micro.rejection, r.micro.p_immediate, r.micro.mean_util, r.infra.p_reject, r.infra.p_immediate, r.infra.p_s] {
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(r.micro.total_delay >= 1.0 / cfg.micro.container_rate);
        assert!((r.infra.p_reject - (r.infra.bp_q + r.infra.bp_r)).abs() < 1e-15);
        assert_eq!(r.provenance.config_hash, cfg.hash());
    }
}

#[test]
fn report_comparison() {
    let cfg = table8();
    let sol = fixed_point_solve(&cfg, &cfg.solver).unwrap();
    let r = build_report(&sol, &cfg);
    for tol in [0.0, 1e-9, 0.1] {
        assert!(compare_reports(&r, &r, &Tolerances::uniform(tol), false).unwrap().pass);
    }

    let mut off = r.clone();
    off.micro.total_delay *= 1.25;
    let v = compare_reports(&off, &r, &Tolerances::uniform(0.10), false).unwrap();
    assert!(!v.pass);
    let failed: Vec<_> = v.failures().map(|f| f.name.as_str()).collect();
    assert_eq!(failed, ["micro.total_delay"]);
    let f = v.fields.iter().find(|f| f.name == "micro.total_delay").unwrap();
    assert!((f.rel_error - 0.25).abs() < 1e-12);

    let loose = Tolerances::uniform(0.10).with("micro.total_delay", 0.3);
    assert!(compare_reports(&off, &r, &loose, false).unwrap().pass);

    let other = cfg.with_value("micro.max_vms", 6.0).unwrap();
    let r2 = build_report(&fixed_point_solve(&other, &other.solver).unwrap(), &other);
    assert!(compare_reports(&r2, &r, &Tolerances::uniform(1.0), false).is_none());
    assert!(compare_reports(&r2, &r, &Tolerances::uniform(1.0), true).is_some());
}

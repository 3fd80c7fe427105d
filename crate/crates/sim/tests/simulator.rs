use msp_core::{build_report, fixed_point_solve, SystemConfig};
use msp_sim::{run_simulation, validate_against_analytic, MetricSummary, SimConfig, SimStats, METRICS};

const BASE: &str = "
time_unit = second
micro.users = 1
micro.arrival_rate = 0.05
micro.container_startup = 2 s
micro.container_lifetime = 60 s
micro.min_vms = 1
micro.max_vms = 3
micro.containers_per_vm = 2
micro.low_util = 0.3
micro.high_util = 0.8
macro.arrival_rate = 0.002
macro.queue = 10
macro.lookup_rate = 1
macro.pms = 4
macro.vms_per_pm = 2
macro.vm_startup = 20 s
macro.vm_lifetime = 400 s
sim.horizon = 100000
sim.replications = 6
sim.seed = 11
";

fn base() -> SystemConfig {
    SystemConfig::parse(BASE).unwrap()
}

fn sim_of(cfg: &SystemConfig) -> SimConfig {
    let mut s = SimConfig::from_system(cfg);
    s.audit = true;
    s
}

#[test]
fn no_traffic_keeps_minimum_group() {
    let cfg = base().with_value("micro.arrival_rate", 0.0).unwrap();
    let cfg = cfg.with_value("sim.horizon", 5000.0).unwrap();
    let st = run_simulation(&sim_of(&cfg)).unwrap();
    assert_eq!(st.mean("micro.rejection"), Some(0.0));
    assert_eq!(st.mean("micro.mean_vms"), Some(cfg.micro.min_vms as f64));
    assert_eq!(st.mean("micro.mean_containers"), Some(0.0));
    for r in &st.replications {
        assert_eq!(r.conservation.containers_admitted, 0);
    }
}

/// Stationary blocking of a fixed host group: instantiation stage in
/// tandem with the running containers, arrivals blocked at `cap`.
fn fixed_group_blocking(lambda: f64, phi: f64, mu: f64, cap: usize) -> f64 {
    let mut total = 0.0;
    let mut full = 0.0;
    for i in 0..=cap {
        let mut x = (lambda / phi).powi(i as i32);
        for j in 0..=(cap - i) {
            if j > 0 {
                x *= lambda / (mu * j as f64);
            }
            total += x;
            if i + j == cap {
                full += x;
            }
        }
    }
    full / total
}

#[test]
fn fixed_group_blocking_matches_closed_form() {
    let cfg = base()
        .with_value("micro.min_vms", 2.0)
        .unwrap()
        .with_value("micro.max_vms", 2.0)
        .unwrap()
        .with_value("micro.arrival_rate", 0.08)
        .unwrap()
        .with_value("sim.horizon", 200000.0)
        .unwrap()
        .with_value("sim.replications", 10.0)
        .unwrap();
    let m = &cfg.micro;
    let want = fixed_group_blocking(m.arrival_rate, m.container_rate, m.completion_rate, 4);
    let st = run_simulation(&sim_of(&cfg)).unwrap();
    let got = st.metric("micro.rejection").unwrap();
    assert!(want > 0.05, "config should block noticeably, got {want}");
    assert!(
        (got.mean - want).abs() <= got.half_width.max(0.01 * want) * 1.5,
        "sim {} ± {} vs closed form {want}",
        got.mean,
        got.half_width
    );
}

#[test]
fn littles_law_in_platform_queue() {
    let st = run_simulation(&sim_of(&base())).unwrap();
    let l: Vec<f64> = st.replications.iter().map(|r| r.little.mean_queue).collect();
    let lw: Vec<f64> = st
        .replications
        .iter()
        .map(|r| r.little.throughput * r.little.mean_wait)
        .collect();
    let a = MetricSummary::from_samples("L", &l);
    let b = MetricSummary::from_samples("lambda W", &lw);
    assert!((a.mean - b.mean).abs() <= (a.half_width + b.half_width).max(0.02 * a.mean));
}

#[test]
fn requests_are_conserved() {
    let st = run_simulation(&sim_of(&base())).unwrap();
    for r in &st.replications {
        let c = r.conservation;
        assert!(c.containers_admitted > 0);
        assert_eq!(
            c.containers_admitted,
            c.containers_completed + c.containers_queued + c.containers_running
        );
        assert_eq!(
            c.vm_requests_admitted,
            c.vm_requests_rejected_after_admission + c.vms_provisioned + c.vm_requests_in_flight
        );
    }
}

#[test]
fn capacity_is_never_exceeded() {
    for consolidate in [0.0, 1.0] {
        let cfg = base()
            .with_value("micro.arrival_rate", 0.2)
            .unwrap()
            .with_value("macro.arrival_rate", 0.02)
            .unwrap()
            .with_value("sim.consolidate", consolidate)
            .unwrap();
        let st = run_simulation(&sim_of(&cfg)).unwrap();
        assert_eq!(st.capacity_violations(), 0);
        assert!(st.mean("macro.p_reject").unwrap() > 0.0, "load should reach the pool limit");
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let cfg = sim_of(&base());
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    for (x, y) in a.replications.iter().zip(&b.replications) {
        assert_eq!(x.digest, y.digest);
        assert_eq!(x.events, y.events);
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.metrics), bits(&y.metrics));
    }
    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_simulation(&other).unwrap();
    assert_ne!(a.replications[0].digest, c.replications[0].digest);
    // Replications use distinct streams.
    assert_ne!(a.replications[0].digest, a.replications[1].digest);
}

#[test]
fn confidence_intervals_are_well_formed() {
    let st = run_simulation(&sim_of(&base())).unwrap();
    assert_eq!(st.metrics.len(), METRICS.len());
    for m in &st.metrics {
        assert!(m.low <= m.mean && m.mean <= m.high, "{}", m.name);
        assert!(m.variance >= 0.0);
    }
    let one = MetricSummary::from_samples("x", &[3.0]);
    assert_eq!((one.half_width, one.low, one.high), (0.0, 3.0, 3.0));
    // t(0.975, 3) = 3.182446...
    let s = MetricSummary::from_samples("x", &[1.0, 2.0, 3.0, 4.0]);
    assert!((s.half_width - 3.182446305284263 * (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-9);
}

#[test]
fn rejects_infeasible_configs() {
    let mut cfg = sim_of(&base());
    cfg.replications = 0;
    assert!(run_simulation(&cfg).is_err());
    let mut cfg = sim_of(&base());
    cfg.horizon = 0.0;
    assert!(run_simulation(&cfg).is_err());
    let crowded = base().with_value("micro.users", 9.0).unwrap();
    assert!(run_simulation(&sim_of(&crowded)).is_err());
}

fn stats_from_report(cfg: &SystemConfig) -> (msp_core::PerformanceReport, SimStats) {
    let r = build_report(&fixed_point_solve(cfg, &cfg.solver).unwrap(), cfg);
    let metrics = METRICS
        .iter()
        .map(|n| MetricSummary::from_samples(n, &[r.metric(n).unwrap_or(0.0)]))
        .collect();
    (
        r,
        SimStats {
            metrics,
            replications: Vec::new(),
        },
    )
}

#[test]
fn validation_verdicts() {
    let cfg = base();
    let (r, synthetic) = stats_from_report(&cfg);
    assert!(validate_against_analytic(&r, &synthetic, 0.0).pass);

    let st = run_simulation(&sim_of(&cfg)).unwrap();
    let v = validate_against_analytic(&r, &st, 0.10);
    assert!(v.pass, "{:?}", v.failures().collect::<Vec<_>>());
    let bp = v.fields.iter().find(|f| f.name == "micro.rejection").unwrap();
    assert!(bp.rel_error < 0.10, "{bp:?}");

    let heavier = cfg.with_value("micro.arrival_rate", 0.15).unwrap();
    let st2 = run_simulation(&sim_of(&heavier)).unwrap();
    assert!(!validate_against_analytic(&r, &st2, 0.10).pass);
    assert!(!validate_against_analytic(&r, &st, 0.0).pass);
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if
//! any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use msp_core::csm::{self, CsmParams, CsmState};
use msp_core::ctmc::{solve_steady_state, SolverOptions};
use msp_core::pmsm::{self, PmsmParams, PmsmState};
use msp_core::vmsm::{self, per_pm_arrival_rate, VmsmParams};
use msp_core::{build_report, fixed_point_solve, SystemConfig};
use msp_perf::{cmd_simulate, cmd_solve, load_config, Exit, Options};
use msp_sim::{run_simulation, SimConfig, SHARED_METRICS};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bundled_configs() -> Vec<PathBuf> {
    let mut v = Vec::new();
    for dir in [configs_dir(), configs_dir().join("validation")] {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
            .collect();
        files.sort();
        v.extend(files);
    }
    v
}

fn load(name: &str) -> SystemConfig {
    load_config(&configs_dir().join(name)).unwrap()
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn structural() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut chains = 0;
    for path in bundled_configs() {
        let cfg = load_config(&path).map_err(|e| e.to_string())?;
        let sol = fixed_point_solve(&cfg, &cfg.solver).map_err(|e| e.to_string())?;
        let m = &cfg.micro;
        let inf = &cfg.infra;
        let c = csm::build_csm(&CsmParams {
            arrival_rate: m.arrival_rate,
            container_rate: m.container_rate,
            completion_rate: m.completion_rate,
            min_vms: m.min_vms,
            max_vms: m.max_vms,
            containers_per_vm: m.containers_per_vm,
            high_util: m.high_util,
            low_util: m.low_util,
            acquire_rate: sol.acquire_rate,
            release_rate: sol.acquire_rate,
        })
        .map_err(|e| e.to_string())?;
        let p = pmsm::build_pmsm(&PmsmParams {
            external_rate: inf.arrival_rate,
            platform_rate: sol.total_vm_request_rate - inf.arrival_rate,
            lookup_rate: inf.lookup_rate,
            success_prob: sol.p_s,
            queue_size: inf.queue_size,
        })
        .map_err(|e| e.to_string())?;
        let v = vmsm::build_vmsm(&VmsmParams {
            arrival_rate: per_pm_arrival_rate(sol.total_vm_request_rate, sol.big_bp_q, inf.pool_size),
            instantiation_rate: inf.instantiation_rate,
            completion_rate: inf.completion_rate,
            platform_release_rate: sol.vm_release_rate,
            vms_per_pm: inf.vms_per_pm,
            pool_size: inf.pool_size,
        })
        .map_err(|e| e.to_string())?;
        for (label, g) in [("CSM", &c.generator), ("PMSM", &p.generator), ("VMSM", &v.generator)] {
            let name = path.file_name().unwrap().to_string_lossy();
            let rows = g.max_row_sum_error();
            check(rows <= 1e-12, || format!("{name} {label}: row sum error {rows:e}"))?;
            let pi = solve_steady_state(g, &opts).map_err(|e| format!("{name} {label}: {e}"))?;
            let res = g.residual(pi.as_slice());
            check(res <= 1e-10, || format!("{name} {label}: residual {res:e}"))?;
            chains += 1;
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!("{chains} chains over {} configs in {t:.2?}", bundled_configs().len()))
}

fn tandem_product_form(lambda: f64, phi: f64, mu: f64, cap: usize) -> Vec<((usize, usize), f64)> {
    let mut w = Vec::new();
    for i in 0..=cap {
        for j in 0..=(cap - i) {
            let mut x = (lambda / phi).powi(i as i32);
            for r in 1..=j {
                x *= lambda / (mu * r as f64);
            }
            w.push(((i, j), x));
        }
    }
    let z: f64 = w.iter().map(|t| t.1).sum();
    w.into_iter().map(|(s, x)| (s, x / z)).collect()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn oracle_equivalence() -> Outcome {
    let opts = SolverOptions::default();
    let cases = 128;
    runner(cases)
        .run(
            &(1usize..=4, 1usize..=4, 0.05f64..5.0, 0.2f64..8.0, 0.05f64..3.0),
            |(vms, m, lambda, phi, mu)| {
                let p = CsmParams {
                    arrival_rate: lambda,
                    container_rate: phi,
                    completion_rate: mu,
                    min_vms: vms,
                    max_vms: vms,
                    containers_per_vm: m,
                    high_util: 1.0,
                    low_util: 0.0,
                    acquire_rate: 1.0,
                    release_rate: 1.0,
                };
                let model = csm::build_csm(&p).unwrap();
                let pi = solve_steady_state(&model.generator, &opts).unwrap();
                let oracle = tandem_product_form(lambda, phi, mu, vms * m);
                prop_assert_eq!(oracle.len(), model.n());
                for ((i, j), want) in oracle {
                    let got = pi.get(model.space.index_of(&CsmState::new(i, j, vms)).unwrap());
                    prop_assert!((got - want).abs() <= 1e-8, "({},{}) {} vs {}", i, j, got, want);
                }
                Ok(())
            },
        )
        .map_err(|e| format!("CSM: {e}"))?;
    runner(cases)
        .run(&(1usize..=60, 0.01f64..5.0, 0.1f64..6.0), |(lq, la, alpha)| {
            let p = PmsmParams {
                external_rate: la,
                platform_rate: 0.0,
                lookup_rate: alpha,
                success_prob: 1.0,
                queue_size: lq,
            };
            let model = pmsm::build_pmsm(&p).unwrap();
            let pi = solve_steady_state(&model.generator, &opts).unwrap();
            let rho = la / alpha;
            let w: Vec<f64> = (0..=lq).map(|n| rho.powi(n as i32)).collect();
            let z: f64 = w.iter().sum();
            for (n, wn) in w.iter().enumerate() {
                let st = if n == 0 { PmsmState::Empty } else { PmsmState::Success(n) };
                let got = pi.get(model.space.index_of(&st).unwrap());
                prop_assert!((got - wn / z).abs() <= 1e-8, "n={} {} vs {}", n, got, wn / z);
            }
            Ok(())
        })
        .map_err(|e| format!("PMSM: {e}"))?;
    Ok(format!("{} randomized cases within 1e-8", 2 * cases))
}

fn state_counts() -> Outcome {
    for m in 1..=50 {
        let n = vmsm::enumerate_states(m).map_err(|e| e.to_string())?.len();
        check(n == (m + 1) * (m + 2) / 2, || format!("VMSM m={m}: {n}"))?;
    }
    for lq in 1..=500 {
        let n = pmsm::enumerate_states(lq).map_err(|e| e.to_string())?.len();
        check(n == 2 * lq + 1, || format!("PMSM L_Q={lq}: {n}"))?;
    }
    let mut csm_cases = 0;
    for s in 1..=3 {
        for big_s in s..=6 {
            for m in 1..=5 {
                let p = CsmParams {
                    arrival_rate: 1.0,
                    container_rate: 1.0,
                    completion_rate: 1.0,
                    min_vms: s,
                    max_vms: big_s,
                    containers_per_vm: m,
                    high_util: 0.8,
                    low_util: 0.3,
                    acquire_rate: 1.0,
                    release_rate: 1.0,
                };
                let got = csm::enumerate_states(&p).map_err(|e| e.to_string())?.len();
                let mut want = 0;
                for k in s..=big_s {
                    for i in 0..=big_s * m {
                        for j in 0..=k * m {
                            want += (i + j <= big_s * m) as usize;
                        }
                    }
                }
                check(got == want, || format!("CSM s={s} S={big_s} M={m}: {got} vs {want}"))?;
                csm_cases += 1;
            }
        }
    }
    Ok(format!("VMSM m<=50, PMSM L_Q<=500, {csm_cases} CSM shapes"))
}

fn convergence() -> Outcome {
    let cfg = load("table8.cfg");
    let start = Instant::now();
    let sol = fixed_point_solve(&cfg, &cfg.solver).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    check(sol.converged, || "did not converge".into())?;
    check(sol.outer_iterations <= 15, || format!("{} outer iterations", sol.outer_iterations))?;
    check(sol.max_inner_iterations() <= 15, || format!("{} inner iterations", sol.max_inner_iterations()))?;
    check(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!(
        "outer {} inner {} in {t:.2?}",
        sol.outer_iterations,
        sol.max_inner_iterations()
    ))
}

fn reference_metrics() -> Outcome {
    let cfg = load("table6.cfg");
    let sol = fixed_point_solve(&cfg, &cfg.solver).map_err(|e| e.to_string())?;
    let r = build_report(&sol, &cfg);
    let rows = [
        ("response time", r.micro.total_delay, 2.89),
        ("utilization", r.micro.mean_util, 0.814),
        ("mean VMs", r.micro.mean_vms, 7.12),
        ("mean containers", r.micro.mean_containers, 39.8),
        ("immediate service", r.micro.p_immediate, 0.7415),
    ];
    let mut worst = 0.0f64;
    for (name, got, want) in rows {
        let rel = (got - want).abs() / want;
        check(rel <= 0.15, || format!("{name}: {got} vs {want} ({:.1}%)", 100.0 * rel))?;
        worst = worst.max(rel);
    }
    Ok(format!("worst relative error {:.1}%", 100.0 * worst))
}

fn analytic_vs_des() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let dir = configs_dir().join("validation");
    let mut n = 0;
    for i in 1..=5 {
        let path = dir.join(format!("v{i}.cfg"));
        let cfg = load_config(&path).map_err(|e| e.to_string())?;
        let (i_, m) = (&cfg.infra, &cfg.micro);
        check(
            i_.pool_size <= 8 && i_.vms_per_pm <= 3 && m.max_vms <= 4 && m.containers_per_vm <= 3,
            || format!("v{i} is outside the small-config bounds"),
        )?;
        let sol = fixed_point_solve(&cfg, &cfg.solver).map_err(|e| e.to_string())?;
        let r = build_report(&sol, &cfg);
        let stats = run_simulation(&SimConfig::from_system(&cfg)).map_err(|e| e.to_string())?;
        for name in SHARED_METRICS {
            let a = r.metric(name).unwrap();
            let s = stats.metric(name).unwrap();
            let dev = (a - s.mean).abs();
            let allowed = (0.10 * s.mean.abs()).max(s.half_width);
            // Below double precision noise both sides are zero.
            let pass = dev <= allowed || dev <= 1e-12;
            check(pass, || {
                format!(
                    "v{i} {name}: analytic {a} vs sim {} ± {} (allowed {allowed})",
                    s.mean, s.half_width
                )
            })?;
            let used = if allowed > 0.0 { dev / allowed } else { 0.0 };
            if used > worst.0 {
                worst = (used, format!("v{i} {name}"));
            }
        }
        n += 1;
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(300), || format!("took {t:?}"))?;
    Ok(format!(
        "{n} configs in {t:.2?}; tightest {} at {:.0}% of its allowance",
        worst.1,
        100.0 * worst.0
    ))
}

fn series(cfg: &SystemConfig, key: &str, values: &[f64], metric: &str) -> Result<Vec<f64>, String> {
    values
        .iter()
        .map(|&v| {
            let c = cfg.with_value(key, v).map_err(|e| e.to_string())?;
            let sol = fixed_point_solve(&c, &c.solver).map_err(|e| e.to_string())?;
            Ok(build_report(&sol, &c).metric(metric).unwrap())
        })
        .collect()
}

fn monotonicity() -> Outcome {
    let cfg = load("table8.cfg");
    let slack = 1e-12;
    let grids: [(&str, [f64; 4], &str, bool); 4] = [
        ("micro.arrival_rate", [0.5 / 60.0, 1.0 / 60.0, 1.5 / 60.0, 2.0 / 60.0], "micro.rejection", true),
        ("micro.container_lifetime", [240.0, 480.0, 720.0, 960.0], "micro.rejection", true),
        ("micro.max_vms", [3.0, 4.0, 5.0, 6.0], "micro.rejection", false),
        ("macro.pms", [1.0, 2.0, 3.0, 4.0], "macro.p_reject", false),
    ];
    let mut summary = Vec::new();
    for (key, values, metric, increasing) in grids {
        let ys = series(&cfg, key, &values, metric)?;
        for w in ys.windows(2) {
            let ok = if increasing {
                w[1] >= w[0] - slack
            } else {
                w[1] <= w[0] + slack
            };
            check(ok, || format!("{metric} along {key}: {ys:?}"))?;
        }
        check(ys[0] != ys[3], || format!("{metric} is flat along {key}"))?;
        summary.push(format!("{key} {:.3e}->{:.3e}", ys[0], ys[3]));
    }
    Ok(summary.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sink = Vec::new();
    let mut files = Vec::new();
    for (run, cmd) in [("solve", cmd_solve as fn(&Options, &mut dyn std::io::Write) -> Exit), ("simulate", cmd_simulate)] {
        let config = if run == "solve" {
            configs_dir().join("table8.cfg")
        } else {
            configs_dir().join("validation/v2.cfg")
        };
        let mut outputs = Vec::new();
        for (n, jobs) in [None, Some(1), Some(3)].into_iter().enumerate() {
            let stem = dir.path().join(format!("{run}{n}"));
            let opts = Options {
                config: config.clone(),
                out: Some(stem.clone()),
                seed: Some(99),
                jobs,
                ..Options::default()
            };
            let exit = cmd(&opts, &mut sink);
            check(exit == Exit::Success, || format!("{run} exited {exit:?}"))?;
            let csv = std::fs::read(stem.with_extension("csv")).map_err(|e| e.to_string())?;
            let json = std::fs::read(stem.with_extension("json")).map_err(|e| e.to_string())?;
            outputs.push((csv, json));
        }
        check(outputs.windows(2).all(|w| w[0] == w[1]), || format!("{run} outputs differ"))?;
        files.push(run);
    }
    Ok(format!("{} repeated 3x byte-identical", files.join(" and ")))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("structural", structural),
        ("oracle equivalence", oracle_equivalence),
        ("state counts", state_counts),
        ("convergence", convergence),
        ("reference metrics", reference_metrics),
        ("analytic vs simulation", analytic_vs_des),
        ("monotonicity", monotonicity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({t:.2?}) {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({t:.2?}) {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use kls_cli::{parse_config, run_experiment, Command};
use kls_core::body::ball_volume;
use kls_core::diagnostics::{conductance_tv_bound, mixing_bounds, steps_for_tv, TestSet};
use kls_core::isotropy::estimate_mean_cov;
use kls_core::linalg::unit;
use kls_core::sloc::{moment_inequality_check, sloc_run, stieltjes_potential, Control, Horizon, SlocConfig, SlocOptions};
use kls_core::volume::{
    anneal_optimize, cutting_plane_feasibility, cutting_plane_iteration_cap, dfk_volume, grunbaum_check,
    lv_annealing_volume, CutPlaneConfig, Feasibility, OptimizeConfig, VolumeConfig,
};
use kls_core::walks::exact_samples;
use kls_core::{Body, CovMatrix, DensitySpec, RngStream};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn config_text(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    fs::read_to_string(path).unwrap()
}

fn within_time(c: Check, elapsed: Duration, limit: Duration) -> Check {
    let ok = elapsed <= limit;
    check(
        c.pass && ok,
        format!("{}; {:.1}s (limit {}s)", c.detail, elapsed.as_secs_f64(), limit.as_secs()),
    )
}

/// 1. Halfspace constant of the 8-dimensional Gaussian from 10⁵ exact draws.
fn gaussian_halfspace() -> Check {
    let cfg = parse_config(&config_text("constants")).unwrap();
    assert_eq!(cfg.walk.walk.n_samples, 100_000);
    let out = scratch("c1");
    let t0 = Instant::now();
    run_experiment(&cfg, Command::Constants, &out).unwrap();
    let elapsed = t0.elapsed();
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("constants_seed1.json")).unwrap()).unwrap();
    let psi = doc["result"]["report"]["psi_halfspace"]["value"].as_f64().unwrap();
    let truth = (2.0 / std::f64::consts::PI).sqrt();
    within_time(
        check((psi - truth).abs() <= 0.03, format!("psi_halfspace = {psi:.4}, target {truth:.4} ± 0.03")),
        elapsed,
        Duration::from_secs(30),
    )
}

/// 2. `m = 10n/ε²` Gaussian draws give `‖Y − I‖ ≤ ε` with high probability.
fn covariance_theorem() -> Check {
    let t0 = Instant::now();
    let (n, eps) = (20, 0.5);
    let m = (10.0 * n as f64 / (eps * eps)).ceil() as usize;
    let g = DensitySpec::standard_gaussian(n).unwrap();
    let id = DMatrix::identity(n, n);
    let ok = (0..100)
        .filter(|&seed| {
            let s = exact_samples(&g, m, &mut RngStream::new(seed, 0)).unwrap();
            let (_, cov) = estimate_mean_cov(&s).unwrap();
            cov.op_dist(&id) <= eps
        })
        .count();
    within_time(
        check(ok >= 95, format!("{ok}/100 trials with ‖Y−I‖ ≤ {eps} at m = {m}, need 95")),
        t0.elapsed(),
        Duration::from_secs(60),
    )
}

/// 3. Both annealing estimators on the 4-cube and the 5-ball, three seeds.
fn volumes() -> Check {
    let cfg = VolumeConfig {
        samples_per_phase: 20_000,
        ..VolumeConfig::default()
    };
    let cube = Body::cube(4, 1.0).unwrap();
    let ball = Body::ball(5, 1.0).unwrap().with_guarantee_radii(0.5, 1.0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let limit = Duration::from_secs(300);
    for (method, f) in [
        ("dfk", dfk_volume as fn(&Body, &VolumeConfig, &mut RngStream) -> kls_core::Result<_>),
        ("lv", lv_annealing_volume),
    ] {
        for (name, body, truth) in [("cube4", &cube, 16.0), ("ball5", &ball, ball_volume(5, 1.0))] {
            let t0 = Instant::now();
            let mut worst: f64 = 0.0;
            for seed in 1..=3 {
                let r = f(body, &cfg, &mut RngStream::new(seed, 0)).unwrap();
                worst = worst.max((r.volume.value - truth).abs() / truth);
            }
            let elapsed = t0.elapsed();
            pass &= worst <= 0.1 && elapsed <= limit;
            parts.push(format!("{method}/{name} worst rel err {worst:.3} in {:.1}s", elapsed.as_secs_f64()));
        }
    }
    check(pass, format!("{} (limits 0.10, 300s each)", parts.join(", ")))
}

/// 4. Grunbaum fraction on the isotropic 4-cube, and cutting-plane success rate
/// on a ball of radius ½ centred at 2e₁ inside the ball of radius 4.
fn grunbaum_and_cutting_plane() -> Check {
    let n = 4;
    let d = DensitySpec::uniform(Body::isotropic_cube(n).unwrap());
    let s = exact_samples(&d, 100_000, &mut RngStream::new(4, 0)).unwrap();
    let (mean, _) = estimate_mean_cov(&s).unwrap();
    let g = grunbaum_check(&s, &mean, 1000, &mut RngStream::new(4, 1)).unwrap();
    let floor = (-1.0f64).exp() - 0.02;

    let (big, r) = (4.0, 0.5);
    let cap = cutting_plane_iteration_cap(n, big, r);
    let ok = (0..50)
        .filter(|&seed| {
            let mut center = vec![0.0; n];
            center[0] = 2.0;
            let k = Body::ball_at(center, r).unwrap();
            let out = cutting_plane_feasibility(&k, big, r, &CutPlaneConfig::default(), &mut RngStream::new(seed, 0))
                .unwrap();
            match &out.result {
                Feasibility::Feasible { point } => k.contains(point) && out.iterations <= cap,
                Feasibility::Infeasible { .. } => false,
            }
        })
        .count();
    check(
        g.min_fraction >= floor && ok >= 45,
        format!(
            "min fraction {:.4} over {} halfspaces (floor {floor:.4}); feasible within {cap} iterations in {ok}/50 (need 45)",
            g.min_fraction, g.halfspaces
        ),
    )
}

/// 5. Annealed minimisation of `x₁` over the 8-cube.
fn annealing_optimization() -> Check {
    let n = 8;
    let body = Body::cube(n, 1.0).unwrap();
    let c = unit(n, 0);
    let cfg = OptimizeConfig {
        eps: 0.1,
        ..OptimizeConfig::default()
    };
    let r = anneal_optimize(&body, &c, &cfg, &mut RngStream::new(5, 0)).unwrap();
    let expected = ((n as f64).sqrt() * (r.alpha_final / r.alpha0).ln()).ceil() as usize;
    check(
        r.value <= -1.0 + 0.15 && r.phase_count.abs_diff(expected) <= 1,
        format!("value {:.5} (need ≤ -0.85), {} phases against {expected} ± 1", r.value, r.phase_count),
    )
}

/// 6. Sampled localization of the 8-dimensional Gaussian against the closed
/// form `A_t = I/(1+t)`.
fn localization_oracle() -> Check {
    let n = 8;
    let runs = 16;
    let cfg = SlocConfig {
        horizon: Horizon::Absolute(1.0),
        h: Some(0.005),
        steps: None,
        n_runs: runs,
        record_every: Some(10),
        options: SlocOptions {
            k: Some(512),
            control: Control::Identity,
            ..SlocOptions::default()
        },
    };
    let base = DensitySpec::standard_gaussian(n).unwrap();
    let set = TestSet::halfspace(&unit(n, 0), 0.0).unwrap();
    let t0 = Instant::now();
    let out = sloc_run(&base, &[set], &cfg, &mut RngStream::new(6, 0)).unwrap();
    let elapsed = t0.elapsed();

    let per_run = out.records.len() / runs;
    let oracle = |t: f64| DMatrix::identity(n, n) / (1.0 + t);
    let mut sup_single: f64 = 0.0;
    let mut sup_pooled: f64 = 0.0;
    for i in 0..per_run {
        let t = out.records[i].t;
        let mut pooled = DMatrix::zeros(n, n);
        for run in 0..runs {
            let rec = &out.records[run * per_run + i];
            assert_eq!(rec.t, t);
            let a = DMatrix::from_column_slice(n, n, &rec.cov);
            pooled += &a;
            sup_single = sup_single.max(CovMatrix::new(a).unwrap().op_dist(&oracle(t)));
        }
        pooled /= runs as f64;
        sup_pooled = sup_pooled.max(CovMatrix::new(pooled).unwrap().op_dist(&oracle(t)));
    }
    let finals: Vec<f64> = out.records.iter().filter(|r| r.t == 1.0).map(|r| r.phi).collect();
    let phi_t = finals.iter().sum::<f64>() / finals.len() as f64;
    let target = n as f64 / 4.0;
    within_time(
        check(
            sup_pooled <= 0.15 && (phi_t - target).abs() <= 0.2 * target,
            format!(
                "sup_t ‖Â_t − I/(1+t)‖ = {sup_pooled:.4} averaged over {runs} runs (single run {sup_single:.4}), \
                 limit 0.15; Φ_T = {phi_t:.4} against {target} ± 20%"
            ),
        ),
        elapsed,
        Duration::from_secs(300),
    )
}

/// 7. `g_t` of a central halfspace of the isotropic 8-cube is a martingale and
/// stays balanced up to `T = ¼/√Φ_0`.
fn martingale_balance() -> Check {
    let n = 8;
    let cfg = SlocConfig {
        horizon: Horizon::PotentialScaled(0.25),
        n_runs: 100,
        ..SlocConfig::default()
    };
    let base = DensitySpec::uniform(Body::isotropic_cube(n).unwrap());
    let set = TestSet::halfspace(&unit(n, 0), 0.0).unwrap();
    let out = sloc_run(&base, &[set], &cfg, &mut RngStream::new(7, 0)).unwrap();
    let s = &out.summary.sets[0];
    let drift = (s.g_t_mean - s.g0_mean).abs();
    check(
        drift <= 3.0 * s.combined_se && s.balance_frequency >= 0.5,
        format!(
            "|mean g_T − mean g_0| = {drift:.4} (3 se = {:.4}); balance frequency {:.2} (need 0.5); T = {:.4}",
            3.0 * s.combined_se,
            s.balance_frequency,
            out.summary.t_end
        ),
    )
}

/// 8. Moment inequalities hold, with constants stable across seeds.
fn moment_inequalities() -> Check {
    let mut pass = true;
    let mut worst_spread: f64 = 0.0;
    let mut failures = Vec::new();
    for n in [4, 8, 16] {
        let laws = [
            ("gaussian", DensitySpec::standard_gaussian(n).unwrap()),
            ("cube", DensitySpec::uniform(Body::isotropic_cube(n).unwrap())),
        ];
        for (name, d) in &laws {
            let reports: Vec<_> = (0..3)
                .map(|seed| {
                    let s = exact_samples(d, 20_000, &mut RngStream::new(80 + seed, n as u64)).unwrap();
                    moment_inequality_check(&s, 3).unwrap()
                })
                .collect();
            let constants: [Vec<f64>; 3] = [
                reports.iter().map(|r| r.norm_moment_constant).collect(),
                reports.iter().map(|r| r.inner_product_constant).collect(),
                reports.iter().map(|r| r.third_moment_constant_upper).collect(),
            ];
            for (i, cs) in constants.iter().enumerate() {
                let mean = cs.iter().sum::<f64>() / 3.0;
                let spread = cs.iter().map(|c| (c - mean).abs() / mean).fold(0.0, f64::max);
                worst_spread = worst_spread.max(spread);
                if !(cs.iter().all(|c| c.is_finite()) && spread <= 0.2) {
                    pass = false;
                    failures.push(format!("{name} n={n} check {}", i + 1));
                }
            }
            if !reports.iter().all(|r| r.norm_moment_ok) {
                pass = false;
                failures.push(format!("{name} n={n} norm bound"));
            }
        }
    }
    check(
        pass,
        format!("largest relative spread across seeds {worst_spread:.3} (limit 0.20); failures: {failures:?}"),
    )
}

/// 9. The Stieltjes barrier of `I` and of a rank-one projection.
fn stieltjes() -> Check {
    let mut err_id: f64 = 0.0;
    for n in [1, 2, 8, 64] {
        err_id = err_id.max((stieltjes_potential(&CovMatrix::identity(n)) - 2.0).abs());
    }
    let f = |u: f64| (u - 1.0).powi(-2) + u.powi(-2) - 2.0;
    let (mut lo, mut hi) = (1.0 + 1e-12, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = CovMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
    let u = stieltjes_potential(&a);
    check(
        err_id <= 1e-10 && (u - lo).abs() <= 1e-6,
        format!("|u(I) − 2| = {err_id:.1e}; u(diag(1,0)) = {u:.10} against root {lo:.10}"),
    )
}

/// 10. Byte-identical outputs across repeated runs at 1 and 8 threads.
fn determinism() -> Check {
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for command in Command::ALL {
        let mut text = config_text(command.name());
        if command == Command::Constants {
            text = text.replace("n_samples = 100000", "n_samples = 20000");
        }
        let mut runs = Vec::new();
        for (i, threads) in [1, 8, 8].into_iter().enumerate() {
            let mut cfg = parse_config(&text).unwrap();
            cfg.seed = 10;
            cfg.threads = Some(threads);
            let out = scratch(&format!("c10/{}/{i}", command.name()));
            let report = run_experiment(&cfg, command, &out).unwrap();
            let files: Vec<(String, Vec<u8>)> = report
                .files
                .iter()
                .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(f).unwrap()))
                .collect();
            runs.push(files);
        }
        for other in &runs[1..] {
            compared += runs[0].len();
            if *other != runs[0] {
                mismatches.push(command.name());
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!("{compared} file comparisons over {} subcommands; mismatches: {mismatches:?}", Command::ALL.len()),
    )
}

/// 11. Mixing-bound plug-in values and the step count on a parameter grid.
fn mixing_calculator() -> Check {
    let plug = conductance_tv_bound(0.1, 4.0, 0).unwrap();
    let (lo, hi) = mixing_bounds(0.1, 4.0).unwrap();
    let exact = plug == 2.0 && lo == 1.0 / 0.1 && hi == 4f64.ln() / (0.1 * 0.1);
    let mut cells = 0;
    let mut bad = Vec::new();
    for phi in [0.01f64, 0.05, 0.1, 0.3, 0.7, 1.0] {
        for m in [1.0f64, 2.0, 4.0, 100.0, 1e6] {
            for eps in [1e-6, 1e-3, 0.01, 0.1, 0.5] {
                cells += 1;
                let t = (2.0 * (m.sqrt() / eps).ln() / (phi * phi)).ceil() as u64;
                let bound = conductance_tv_bound(phi, m, t).unwrap();
                if !(bound <= eps && steps_for_tv(phi, m, eps).unwrap() == t) {
                    bad.push((phi, m, eps));
                }
            }
        }
    }
    check(
        exact && bad.is_empty(),
        format!("tv bound at t = 0 is {plug}, mixing bounds ({lo}, {hi:.6}); grid {cells} cells, failures {bad:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("gaussian halfspace isoperimetry", gaussian_halfspace),
        ("covariance estimation", covariance_theorem),
        ("annealing volume", volumes),
        ("grunbaum and cutting plane", grunbaum_and_cutting_plane),
        ("annealing optimization", annealing_optimization),
        ("localization oracle agreement", localization_oracle),
        ("martingale balance", martingale_balance),
        ("moment inequalities", moment_inequalities),
        ("stieltjes potential", stieltjes),
        ("determinism", determinism),
        ("mixing-bound calculator", mixing_calculator),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let c = run();
        if !c.pass {
            failed += 1;
        }
        println!("{:>2} {} {name}: {}", id, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

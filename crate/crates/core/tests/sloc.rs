use kls_core::diagnostics::TestSet;
use kls_core::linalg::unit;
use kls_core::sloc::*;
use kls_core::walks::exact_samples;
use kls_core::*;
use nalgebra::DMatrix;

fn gaussian(n: usize) -> DensitySpec {
    DensitySpec::standard_gaussian(n).unwrap()
}

fn halfspace(n: usize) -> TestSet {
    TestSet::halfspace(&unit(n, 0), 0.0).unwrap()
}

fn closed(k: usize) -> SlocOptions {
    SlocOptions {
        k: Some(k),
        closed_form: true,
        ..SlocOptions::default()
    }
}

fn sampled(k: usize) -> SlocOptions {
    SlocOptions {
        k: Some(k),
        ..SlocOptions::default()
    }
}

#[test]
fn initial_state_of_a_standard_gaussian() {
    let n = 6;
    let s = sloc_init(&gaussian(n), &[halfspace(n)], &closed(100), &mut RngStream::new(91, 0)).unwrap();
    assert_eq!(s.sets[0].g, 0.5);
    assert!((s.phi - n as f64).abs() < 1e-12);
    assert!((s.u - 2.0).abs() < 1e-10);
    let s = sloc_init(&gaussian(n), &[halfspace(n)], &sampled(6000), &mut RngStream::new(91, 1)).unwrap();
    assert!((s.sets[0].g - 0.5).abs() < 0.05, "{}", s.sets[0].g);
    assert!((s.phi - n as f64).abs() < 0.15 * n as f64, "{}", s.phi);
}

#[test]
fn tiny_step_barely_moves_the_covariance() {
    let n = 4;
    let mut s = sloc_init(&gaussian(n), &[halfspace(n)], &closed(100), &mut RngStream::new(92, 0)).unwrap();
    let before = s.cov.clone();
    sloc_step(&mut s, 1e-6, &mut RngStream::new(92, 1)).unwrap();
    assert!(s.cov.op_dist(before.matrix()) <= 2e-6);
}

#[test]
fn zero_noise_step_is_the_drift() {
    let n = 3;
    let mut rng = RngStream::new(93, 0);
    let mut s = sloc_init(&gaussian(n), &[halfspace(n)], &closed(100), &mut rng).unwrap();
    for _ in 0..5 {
        sloc_step(&mut s, 0.05, &mut rng).unwrap();
    }
    let (c, mu) = (s.tilt.clone(), s.mean.clone());
    sloc_step_with_noise(&mut s, 0.05, &[0.0; 3], &mut rng).unwrap();
    for i in 0..n {
        assert_eq!(s.tilt[i], c[i] + 0.05 * mu[i]);
    }
}

#[test]
fn quadratic_part_is_exactly_the_elapsed_time() {
    let n = 2;
    let mut rng = RngStream::new(94, 0);
    let mut s = sloc_init(&gaussian(n), &[halfspace(n)], &closed(100), &mut rng).unwrap();
    for _ in 0..100 {
        sloc_step(&mut s, 0.01, &mut rng).unwrap();
    }
    assert_eq!(s.t, 1.0);
    assert_eq!(s.quad, Quadratic::Scalar(1.0));
}

#[test]
fn sampled_moments_agree_with_the_closed_form() {
    let n = 4;
    let k = 4000;
    let mut rng = RngStream::new(95, 0);
    let mut s = sloc_init(&gaussian(n), &[halfspace(n)], &sampled(k), &mut rng).unwrap();
    for _ in 0..20 {
        sloc_step(&mut s, 0.05, &mut rng).unwrap();
    }
    let cov_err = closed_form_cov_error(&s.cov, s.t);
    assert!(cov_err <= 5.0 * s.cov_se(), "{cov_err} vs se {}", s.cov_se());
    let mean_se = (n as f64 / ((1.0 + s.t) * k as f64)).sqrt();
    let mean_err = closed_form_mean_error(&s.mean, &s.tilt, s.t);
    assert!(mean_err <= 5.0 * mean_se, "{mean_err} vs se {mean_se}");
}

#[test]
fn closed_form_measure_is_a_martingale() {
    let n = 4;
    let cfg = SlocConfig {
        horizon: Horizon::Absolute(1.0),
        steps: Some(50),
        n_runs: 400,
        options: closed(100),
        ..SlocConfig::default()
    };
    let out = sloc_run(&gaussian(n), &[halfspace(n)], &cfg, &mut RngStream::new(96, 0)).unwrap();
    let s = &out.summary.sets[0];
    assert_eq!(s.g0_mean, 0.5);
    assert!(s.combined_se > 0.0);
    assert!((s.g_t_mean - 0.5).abs() <= 3.0 * s.combined_se, "{s:?}");
    assert!(s.martingale_ok);
}

#[test]
fn potential_is_consistent_with_the_covariance() {
    let n = 5;
    let mut rng = RngStream::new(97, 0);
    let mut s = sloc_init(&gaussian(n), &[halfspace(n)], &sampled(2000), &mut rng).unwrap();
    for _ in 0..10 {
        sloc_step(&mut s, 0.05, &mut rng).unwrap();
        let a = s.cov.matrix();
        let frob: f64 = a.iter().map(|v| v * v).sum();
        assert!((s.phi - frob).abs() <= 1e-10 * frob);
        let lambda = s.cov.eigenvalues();
        let pq: f64 = lambda.iter().map(|l| l.powi(s.q as i32)).sum();
        assert!((s.phi_q - pq).abs() <= 1e-10 * pq);
    }
}

#[test]
fn closed_form_potential_strictly_decreases() {
    let n = 3;
    let mut rng = RngStream::new(98, 0);
    let mut s = sloc_init(&gaussian(n), &[halfspace(n)], &closed(100), &mut rng).unwrap();
    let mut last = s.phi;
    for _ in 0..50 {
        sloc_step(&mut s, 0.02, &mut rng).unwrap();
        assert!(s.phi < last);
        assert!((s.phi - n as f64 / (1.0 + s.t).powi(2)).abs() < 1e-9);
        last = s.phi;
    }
}

#[test]
fn stieltjes_potential_solves_its_equation() {
    let mut rng = RngStream::new(99, 0);
    for n in [1, 2, 5, 12] {
        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let a = CovMatrix::new(&g * g.transpose()).unwrap();
        let u = stieltjes_potential(&a);
        assert!(u > a.op_norm());
        let tr: f64 = a.eigenvalues().iter().map(|l| (u - l).powi(-2)).sum();
        assert!((tr - n as f64).abs() <= 1e-8 * n as f64, "n={n}: {tr}");
    }
}

#[test]
fn stieltjes_potential_of_a_rank_one_projection() {
    let a = CovMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]))).unwrap();
    // oracle: bisection on (u−1)^{−2} + u^{−2} = 2 over (1, 3)
    let f = |u: f64| (u - 1.0).powi(-2) + u.powi(-2) - 2.0;
    let (mut lo, mut hi) = (1.0 + 1e-9, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((stieltjes_potential(&a) - lo).abs() < 1e-10, "{} vs {lo}", stieltjes_potential(&a));
}

#[test]
fn moment_checks_on_known_laws() {
    let g1 = exact_samples(&gaussian(1), 200_000, &mut RngStream::new(100, 0)).unwrap();
    let r = moment_inequality_check(&g1, 3).unwrap();
    let truth = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((r.norm_moment - truth).abs() < 0.03, "{}", r.norm_moment);
    // (2k)^k = 216 times E|x|²^{3/2}
    assert!((r.norm_moment_bound * r.norm_moment_constant / r.norm_moment - 216.0).abs() < 1e-9);
    assert!(r.norm_moment_ok);

    let g = exact_samples(&gaussian(6), 50_000, &mut RngStream::new(100, 1)).unwrap();
    let r = moment_inequality_check(&g, 3).unwrap();
    // a symmetric law has a vanishing third-moment vector
    assert!(r.third_moment_constant <= 3.0 * r.third_moment_se, "{r:?}");

    let cube = DensitySpec::uniform(Body::isotropic_cube(8).unwrap());
    let c = exact_samples(&cube, 20_000, &mut RngStream::new(100, 2)).unwrap();
    let r = moment_inequality_check(&c, 4).unwrap();
    assert!(r.inner_product_constant <= 10.0, "{r:?}");
    assert!(r.norm_moment_ok);
    assert!(moment_inequality_check(&c, 5).unwrap_err().is_input_error());
}

#[test]
fn one_dimensional_needles_are_a_single_cell() {
    let d = DensitySpec::uniform(Body::cube(1, 1.0).unwrap());
    let set = TestSet::halfspace(&[1.0], 0.0).unwrap();
    let r = needle_decompose(&d, &set, &NeedleConfig::default(), &mut RngStream::new(101, 0)).unwrap();
    assert_eq!(r.cells.len(), 1);
    assert_eq!(r.cells[0].weight, 1.0);
}

#[test]
fn needle_split_keeps_weight_and_relative_measure() {
    let n = 4;
    let d = DensitySpec::uniform(Body::isotropic_cube(n).unwrap());
    let set = halfspace(n);
    let cfg = NeedleConfig {
        max_depth: 1,
        k: 4000,
        ..NeedleConfig::default()
    };
    let r = needle_decompose(&d, &set, &cfg, &mut RngStream::new(102, 0)).unwrap();
    assert_eq!(r.cells.len(), 2);
    let total: f64 = r.cells.iter().map(|c| c.weight).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for c in &r.cells {
        assert!((c.rel_measure - r.measure).abs() < 0.08, "{c:?} vs {}", r.measure);
    }
}

#[test]
fn needle_decomposition_of_the_cube() {
    let n = 4;
    let d = DensitySpec::uniform(Body::isotropic_cube(n).unwrap());
    let cfg = NeedleConfig {
        max_depth: 4,
        k: 500,
        ..NeedleConfig::default()
    };
    let r = needle_decompose(&d, &halfspace(n), &cfg, &mut RngStream::new(103, 0)).unwrap();
    let total: f64 = r.cells.iter().map(|c| c.weight).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(r.cells.iter().all(|c| c.depth <= 4));
    let (_, last) = *r.curve.last().unwrap();
    assert!((last - 1.0).abs() < 1e-9);
    assert!(r.curve.windows(2).all(|w| w[0].1 <= w[1].1));
    let mut csv = Vec::new();
    write_needle_cells(&r.cells, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("cell_id,depth,weight,max_variance,rel_measure\n"));
    assert_eq!(text.lines().count(), r.cells.len() + 1);
}

#[test]
fn unbalanced_sets_are_rejected() {
    let n = 3;
    let far = TestSet::halfspace(&unit(n, 0), 2.0).unwrap();
    let err = sloc_init(&gaussian(n), &[far.clone()], &closed(100), &mut RngStream::new(104, 0)).unwrap_err();
    assert!(err.is_input_error());
    let d = DensitySpec::uniform(Body::cube(n, 1.0).unwrap());
    let err = needle_decompose(&d, &TestSet::halfspace(&unit(n, 0), 0.9).unwrap(), &NeedleConfig::default(), &mut RngStream::new(104, 1)).unwrap_err();
    assert!(err.is_input_error());
}

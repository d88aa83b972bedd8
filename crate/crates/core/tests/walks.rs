use kls_core::isotropy::estimate_mean_cov;
use kls_core::linalg::norm;
use kls_core::special::normal_cdf;
use kls_core::walks::*;
use kls_core::*;
use nalgebra::DMatrix;

/// Kolmogorov distance between sorted draws and a continuous CDF.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max((f - (i + 1) as f64 / m).abs())
        })
        .fold(0.0, f64::max)
}

fn truncated_normal_cdf(lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    let (a, b) = (normal_cdf(lo), normal_cdf(hi));
    move |x| (normal_cdf(x.clamp(lo, hi)) - a) / (b - a)
}

#[test]
fn ball_walk_proposals_are_centered() {
    // A huge body so that every proposal is accepted and x' is the proposal.
    let body = Body::ball(3, 100.0).unwrap();
    let x = vec![0.3, -0.7, 1.1];
    let mut rng = RngStream::new(21, 0);
    let m = 100_000;
    let mut sum = vec![0.0; 3];
    let mut sq = vec![0.0; 3];
    for _ in 0..m {
        let mut state = ChainState::new(x.clone(), WalkKind::BallWalk, 0.5);
        ball_walk_step(&body, &mut state, &mut rng);
        assert_eq!(state.proposals_accepted, 1);
        for i in 0..3 {
            let d = state.x[i] - x[i];
            sum[i] += d;
            sq[i] += d * d;
        }
    }
    for i in 0..3 {
        let mean = sum[i] / m as f64;
        let se = (sq[i] / m as f64 - mean * mean).sqrt() / (m as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "coordinate {i}: {mean} vs se {se}");
    }
}

#[test]
fn metropolis_accepts_uphill_moves() {
    let d = DensitySpec::standard_gaussian(2).unwrap();
    let mut rng = RngStream::new(22, 0);
    let mut uphill = 0;
    for _ in 0..2000 {
        let x = vec![1.5, -0.5];
        // replay the proposal from a copy of the stream
        let mut y = x.clone();
        kls_core::linalg::axpy(0.8, &rng.clone().in_unit_ball(2), &mut y);
        let mut state = ChainState::new(x.clone(), WalkKind::MetropolisBall, 0.8);
        metropolis_step(&d, &mut state, &mut rng);
        if d.log_density(&y) >= d.log_density(&x) {
            uphill += 1;
            assert_eq!(state.proposals_accepted, 1);
            assert_eq!(state.x, y);
        }
    }
    assert!(uphill > 500);
}

#[test]
fn metropolis_one_dimensional_gaussian_matches_cdf() {
    let d = DensitySpec::standard_gaussian(1).unwrap();
    let mut state = ChainState::new(vec![0.0], WalkKind::MetropolisBall, 2.5);
    let s = run_chain(&d, &mut state, 1000, 1_000_000, 4, &mut RngStream::new(23, 0)).unwrap();
    let dist = ks(s.project(&[1.0]), normal_cdf);
    assert!(dist <= 0.01, "Kolmogorov distance {dist}");
}

#[test]
fn metropolis_detailed_balance_on_grid() {
    // Flows between adjacent cells S = [0, 0.5) and T = [0.5, 1) of a 1-D
    // Gaussian chain must balance.
    let d = DensitySpec::standard_gaussian(1).unwrap();
    let mut state = ChainState::new(vec![0.0], WalkKind::MetropolisBall, 1.0);
    let mut rng = RngStream::new(24, 0);
    let cell = |x: f64| (0.0..0.5).contains(&x) as i32 + 2 * (0.5..1.0).contains(&x) as i32;
    let (mut st, mut ts) = (0u64, 0u64);
    for _ in 0..2_000_000 {
        let before = cell(state.x[0]);
        metropolis_step(&d, &mut state, &mut rng);
        let after = cell(state.x[0]);
        match (before, after) {
            (1, 2) => st += 1,
            (2, 1) => ts += 1,
            _ => {}
        }
    }
    let diff = st as f64 - ts as f64;
    let se = ((st + ts) as f64).sqrt();
    assert!(st > 10_000);
    assert!(diff.abs() <= 4.0 * se, "S→T {st} vs T→S {ts}");
}

#[test]
fn hit_and_run_on_uniform_cube_is_symmetric() {
    let d = DensitySpec::uniform(Body::cube(4, 1.0).unwrap());
    let mut rng = RngStream::new(25, 0);
    let m = 100_000;
    let vals: Vec<f64> = (0..m)
        .map(|_| {
            let mut state = ChainState::new(vec![0.0; 4], WalkKind::HitAndRun, 0.5);
            hit_and_run_step(&d, &mut state, &mut rng).unwrap();
            state.x[0]
        })
        .collect();
    let e = Estimate::mean_of(&vals, "t");
    assert!(e.value.abs() <= 3.0 * e.std_error, "{e:?}");
}

#[test]
fn hit_and_run_from_ball_center_has_uniform_direction() {
    let n = 3;
    let d = DensitySpec::uniform(Body::ball(n, 1.0).unwrap());
    let mut rng = RngStream::new(26, 0);
    let m = 60_000;
    let mut first = vec![0.0; n];
    let mut second = DMatrix::zeros(n, n);
    for _ in 0..m {
        let mut state = ChainState::new(vec![0.0; n], WalkKind::HitAndRun, 0.5);
        hit_and_run_step(&d, &mut state, &mut rng).unwrap();
        let len = norm(&state.x);
        let u: Vec<f64> = state.x.iter().map(|v| v / len).collect();
        for i in 0..n {
            first[i] += u[i] / m as f64;
            for j in 0..n {
                second[(i, j)] += u[i] * u[j] / m as f64;
            }
        }
    }
    // E u = 0 and E uuᵀ = I/n; sd of one coordinate is 1/√n
    let se = 1.0 / ((n * m) as f64).sqrt();
    assert!(first.iter().all(|v| v.abs() <= 4.0 * se), "{first:?}");
    assert!((second - DMatrix::identity(n, n) / n as f64).abs().max() < 0.01);
}

#[test]
fn chord_draws_of_restricted_gaussian_are_truncated_normal() {
    // In one dimension both hit-and-run variants move along the whole chord.
    let d = DensitySpec::gaussian(Body::axis_box(vec![-1.0], vec![2.0]).unwrap(), vec![0.0], 1.0).unwrap();
    let cdf = truncated_normal_cdf(-1.0, 2.0);
    for kind in [WalkKind::HitAndRun, WalkKind::CoordinateHitAndRun] {
        let mut rng = RngStream::new(27, 0);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| {
                let mut state = ChainState::new(vec![0.0], kind, 0.5);
                step(&d, &mut state, &mut rng).unwrap();
                state.x[0]
            })
            .collect();
        let dist = ks(draws, &cdf);
        // 1.95/√m is the 0.1% Kolmogorov quantile
        assert!(dist < 1.95 / (50_000f64).sqrt(), "{}: {dist}", kind.label());
    }
}

#[test]
fn coordinate_hit_and_run_resamples_one_coordinate_uniformly() {
    let d = DensitySpec::uniform(Body::cube(3, 1.0).unwrap());
    let mut rng = RngStream::new(28, 0);
    let x0 = vec![0.2, -0.4, 0.6];
    let mut moved = Vec::new();
    for _ in 0..30_000 {
        let mut state = ChainState::new(x0.clone(), WalkKind::CoordinateHitAndRun, 0.5);
        coordinate_hit_and_run_step(&d, &mut state, &mut rng).unwrap();
        let changed: Vec<usize> = (0..3).filter(|&i| state.x[i] != x0[i]).collect();
        assert_eq!(changed.len(), 1);
        moved.push(state.x[changed[0]]);
    }
    assert!(ks(moved, |x| (x.clamp(-1.0, 1.0) + 1.0) / 2.0) < 0.015);
}

#[test]
fn coordinate_hit_and_run_on_rotated_box_recovers_covariance() {
    let n = 4;
    let half = [1.0, 2.0, 0.5, 1.5];
    let body = Body::axis_box(half.iter().map(|h| -h).collect(), half.to_vec()).unwrap();
    let theta = 0.6f64;
    let mut rot = DMatrix::identity(n, n);
    rot[(0, 0)] = theta.cos();
    rot[(0, 1)] = -theta.sin();
    rot[(1, 0)] = theta.sin();
    rot[(1, 1)] = theta.cos();
    let map = AffineMap::new(rot.clone(), vec![0.0; n]).unwrap();
    let d = DensitySpec::uniform(body).pushforward(&map).unwrap();
    let truth = &rot * DMatrix::from_fn(n, n, |i, j| if i == j { half[i] * half[i] / 3.0 } else { 0.0 }) * rot.transpose();
    let x0 = exact_point(&d, &mut RngStream::new(29, 0)).unwrap();
    let mut state = ChainState::new(x0, WalkKind::CoordinateHitAndRun, 0.5);
    let s = run_chain(&d, &mut state, 0, 1_000_000, 1, &mut RngStream::new(29, 1)).unwrap();
    let (_, cov) = estimate_mean_cov(&s).unwrap();
    let rel = cov.op_dist(&truth) / truth.symmetric_eigenvalues().max();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn run_chain_is_deterministic() {
    let d = DensitySpec::gaussian(Body::cube(3, 1.0).unwrap(), vec![0.0; 3], 1.0).unwrap();
    let run = || {
        let mut state = ChainState::new(vec![0.0; 3], WalkKind::HitAndRun, 0.5);
        run_chain(&d, &mut state, 10, 100, 3, &mut RngStream::new(30, 4)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn ball_walk_on_isotropic_cube_recovers_identity_covariance() {
    let n = 8;
    let d = DensitySpec::uniform(Body::isotropic_cube(n).unwrap());
    let x0 = exact_point(&d, &mut RngStream::new(31, 0)).unwrap();
    let mut state = ChainState::new(x0, WalkKind::BallWalk, default_delta(n));
    let s = run_chain(&d, &mut state, 0, 100_000, 64, &mut RngStream::new(31, 1)).unwrap();
    let (_, cov) = estimate_mean_cov(&s).unwrap();
    assert!(cov.op_dist(&DMatrix::identity(n, n)) <= 0.1);
}

#[test]
fn one_ball_walk_step_preserves_uniform_moments() {
    let n = 4;
    let body = Body::cube(n, 1.0).unwrap();
    let d = DensitySpec::uniform(body.clone());
    let mut rng = RngStream::new(32, 0);
    let m = 200_000;
    let start = exact_samples(&d, m, &mut rng).unwrap();
    let mut after = SampleMatrix::with_capacity(n, m);
    for x in start.rows() {
        let mut state = ChainState::new(x.to_vec(), WalkKind::BallWalk, 0.5);
        ball_walk_step(&body, &mut state, &mut rng);
        after.push(&state.x).unwrap();
    }
    for i in 0..n {
        let e = kls_core::linalg::unit(n, i);
        let first = Estimate::mean_of(&after.project(&e), "t");
        assert!(first.value.abs() <= 3.0 * first.std_error, "{first:?}");
        let squares: Vec<f64> = after.project(&e).iter().map(|v| v * v).collect();
        let second = Estimate::mean_of(&squares, "t");
        assert!((second.value - 1.0 / 3.0).abs() <= 3.0 * second.std_error, "{second:?}");
    }
}

#[test]
fn ball_walk_acceptance_is_in_the_speedy_regime() {
    for n in 4..=16 {
        let d = DensitySpec::uniform(Body::isotropic_cube(n).unwrap());
        let x0 = exact_point(&d, &mut RngStream::new(33, n as u64)).unwrap();
        let mut state = ChainState::new(x0, WalkKind::BallWalk, default_delta(n));
        run_chain(&d, &mut state, 20_000, 0, 1, &mut RngStream::new(33, 100 + n as u64)).unwrap();
        let rate = state.acceptance_rate();
        assert!(rate > 0.1 && rate < 0.9, "n = {n}: acceptance {rate}");
    }
}

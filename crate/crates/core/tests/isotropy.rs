use kls_core::isotropy::*;
use kls_core::linalg::{mat_vec, op_norm_power_iteration};
use kls_core::walks::exact_samples;
use kls_core::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gaussian(n: usize, m: usize, seed: u64) -> SampleMatrix {
    exact_samples(&DensitySpec::standard_gaussian(n).unwrap(), m, &mut RngStream::new(seed, 0)).unwrap()
}

fn identity_error(s: &SampleMatrix) -> f64 {
    let (_, cov) = estimate_mean_cov(s).unwrap();
    cov.op_dist(&DMatrix::identity(s.dim(), s.dim()))
}

#[test]
fn million_gaussian_samples_estimate_identity() {
    assert!(identity_error(&gaussian(8, 1_000_000, 61)) <= 0.05);
}

#[test]
fn covariance_theorem_sample_size() {
    let (n, eps) = (20, 0.5);
    let m = (10.0 * n as f64 / (eps * eps)).ceil() as usize;
    let ok = (0..100).filter(|&seed| identity_error(&gaussian(n, m, 1000 + seed)) <= eps).count();
    assert!(ok >= 95, "{ok}/100");
}

#[test]
fn estimation_error_halves_when_samples_quadruple() {
    let n = 6;
    let mean_err = |m: usize| (0..20).map(|s| identity_error(&gaussian(n, m, 2000 + s + m as u64))).sum::<f64>() / 20.0;
    let ratio = mean_err(2_000) / mean_err(8_000);
    assert!(ratio >= 2.0 / 1.5 && ratio <= 2.0 * 1.5, "ratio {ratio}");
}

#[test]
fn rounding_fresh_samples_doubles_at_most_the_input_error() {
    let n = 4;
    let sigma = DMatrix::from_fn(n, n, |i, j| if i == j { (i + 1) as f64 } else { 0.3 });
    let root = CovMatrix::new(sigma.clone()).unwrap().sqrt();
    let draw = |m: usize, seed: u64| gaussian(n, m, seed).map_rows(|x| mat_vec(&root, x)).unwrap();
    let (mu, cov) = estimate_mean_cov(&draw(500, 62)).unwrap();
    let t = rounding_transform(&mu, &cov).unwrap();
    // the input error, measured in the frame of the estimate
    let w = t.matrix();
    let eps = CovMatrix::new(w * &sigma * w.transpose()).unwrap().op_dist(&DMatrix::identity(n, n));
    let fresh = draw(400_000, 63).map_rows(|x| t.apply(x)).unwrap();
    let err = identity_error(&fresh);
    assert!(err <= 2.0 * eps, "{err} vs input error {eps}");
}

#[test]
fn rounding_is_idempotent_on_its_own_samples() {
    let n = 5;
    let s = gaussian(n, 3_000, 64).map_rows(|x| x.iter().enumerate().map(|(i, v)| v * (1 + i) as f64).collect()).unwrap();
    let (mu, cov) = estimate_mean_cov(&s).unwrap();
    let once = s.map_rows(|x| rounding_transform(&mu, &cov).unwrap().apply(x)).unwrap();
    assert!(identity_error(&once) < 1e-10);
    let (mu2, cov2) = estimate_mean_cov(&once).unwrap();
    let t2 = rounding_transform(&mu2, &cov2).unwrap();
    assert!(t2.is_identity(1e-9));
}

#[test]
fn round_body_needs_one_iteration() {
    let body = Body::ball(4, 10.0).unwrap();
    let out = iterated_gaussian_isotropy(&body, &IsotropyConfig::default(), &mut RngStream::new(65, 0)).unwrap();
    assert!(out.converged);
    assert_eq!(out.log.len(), 1);
    let mut csv = Vec::new();
    write_isotropy_log(&out.log, &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("iter,min_eig,max_eig,samples_used\n"));
}

#[test]
fn elongated_ellipsoid_is_rounded() {
    let n = 4;
    let body = Body::ellipsoid(vec![0.0; n], &[0.25, 2.0, 2.0, 2.0]).unwrap();
    let out = iterated_gaussian_isotropy(&body, &IsotropyConfig::default(), &mut RngStream::new(66, 0)).unwrap();
    assert!(out.converged, "{:?}", out.log);
    assert!(out.log.len() >= 2);
    // oracle: rejection sampling of the standard Gaussian restricted to T(K)
    let image = body.transform(&out.map).unwrap();
    let mut rng = RngStream::new(66, 1);
    let mut kept = SampleMatrix::new(n);
    while kept.len() < 20_000 {
        let x = rng.normal_vec(n);
        if image.contains(&x) {
            kept.push(&x).unwrap();
        }
    }
    let (_, cov) = estimate_mean_cov(&kept).unwrap();
    let eig = cov.eigenvalues();
    assert!(eig[n - 1] >= 0.5 * 0.9 && eig[0] <= 2.0 * 1.1, "{eig:?}");
}

proptest! {
    #[test]
    fn power_iteration_matches_eigendecomposition(n in 1usize..=32, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let psd = &g * g.transpose();
        let exact = psd.symmetric_eigenvalues().max();
        let power = op_norm_power_iteration(&psd, 1e-8);
        prop_assert!((power - exact).abs() <= 1e-6 * exact);
        let cached = CovMatrix::new(psd).unwrap().op_norm();
        prop_assert!((cached - exact).abs() <= 1e-6 * exact);
    }

    #[test]
    fn covariance_estimate_is_psd(seed in any::<u64>(), m in 2usize..50) {
        let s = gaussian(3, m, seed);
        let (_, cov) = estimate_mean_cov(&s).unwrap();
        let mut rng = RngStream::new(seed, 1);
        for _ in 0..20 {
            let v = rng.normal_vec(3);
            prop_assert!(cov.quad_form(&v) >= -1e-12);
        }
    }
}

//! Exact (i.i.d.) samplers where the body or density allows one. Used for warm
//! starts and as test oracles.

use crate::body::{Body, BodyKind};
use crate::density::{DensityKind, DensitySpec};
use crate::linalg::{axpy, mat_vec, sym_apply};
use crate::rng::RngStream;

/// Rejection sampling from the bounding ball is only attempted up to this
/// dimension; beyond it the acceptance rate collapses.
pub const REJECTION_MAX_DIM: usize = 6;
const MAX_ATTEMPTS: usize = 1_000_000;

/// Uniform point of an analytic body, or by rejection from the bounding ball
/// when `n ≤ 6`.
pub fn uniform_point(body: &Body, rng: &mut RngStream) -> Option<Vec<f64>> {
    let n = body.dim();
    match body.kind() {
        BodyKind::Ball { center, radius } => {
            let mut p = center.clone();
            axpy(*radius, &rng.in_unit_ball(n), &mut p);
            Some(p)
        }
        BodyKind::Cube { lo, hi } => Some(
            lo.iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.uniform())
                .collect(),
        ),
        BodyKind::Simplex => {
            // normalized exponential spacings, dropping the last coordinate
            let e: Vec<f64> = (0..=n).map(|_| -rng.uniform_open().ln()).collect();
            let s: f64 = e.iter().sum();
            Some(e[..n].iter().map(|v| v / s).collect())
        }
        BodyKind::Ellipsoid { center, shape, .. } => {
            let root = sym_apply(shape, |l| l.max(0.0).sqrt());
            let mut p = mat_vec(&root, &rng.in_unit_ball(n));
            axpy(1.0, center, &mut p);
            Some(p)
        }
        BodyKind::Transformed { base, map } => {
            uniform_point(base, rng).map(|p| map.apply(&p))
        }
        _ => rejection_from_ball(body, rng),
    }
}

fn rejection_from_ball(body: &Body, rng: &mut RngStream) -> Option<Vec<f64>> {
    let n = body.dim();
    if n > REJECTION_MAX_DIM {
        return None;
    }
    let radius = body.radius_about_interior();
    let x0 = body.interior_point();
    for _ in 0..MAX_ATTEMPTS {
        let mut p = x0.to_vec();
        axpy(radius, &rng.in_unit_ball(n), &mut p);
        if body.contains(&p) {
            return Some(p);
        }
    }
    None
}

/// Exact draw from the density if supported: uniform densities via
/// [`uniform_point`], isotropic Gaussians by rejection against the body.
pub fn exact_point(density: &DensitySpec, rng: &mut RngStream) -> Option<Vec<f64>> {
    let n = density.dim();
    match density.kind() {
        DensityKind::Uniform => uniform_point(density.body(), rng),
        DensityKind::Gaussian { center, a } if *a > 0.0 => {
            let sd = 1.0 / a.sqrt();
            for _ in 0..MAX_ATTEMPTS {
                let mut p = center.clone();
                axpy(sd, &rng.normal_vec(n), &mut p);
                if density.body().contains(&p) {
                    return Some(p);
                }
            }
            None
        }
        DensityKind::Gaussian { .. } => uniform_point(density.body(), rng),
        _ => None,
    }
}

/// `m` exact draws, or `None` if the density has no exact sampler.
pub fn exact_samples(
    density: &DensitySpec,
    m: usize,
    rng: &mut RngStream,
) -> Option<crate::samples::SampleMatrix> {
    let mut out = crate::samples::SampleMatrix::with_capacity(density.dim(), m);
    for _ in 0..m {
        let p = exact_point(density, rng)?;
        out.push(&p).ok()?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_points_are_members() {
        let s = Body::simplex(5).unwrap();
        let mut rng = RngStream::new(4, 0);
        for _ in 0..1000 {
            assert!(s.contains(&uniform_point(&s, &mut rng).unwrap()));
        }
    }

    #[test]
    fn rejection_respects_dimension_cap() {
        let b = Body::cube(8, 1.0).unwrap().intersect_ball(vec![0.0; 8], 2.0).unwrap();
        let mut rng = RngStream::new(4, 0);
        assert!(uniform_point(&b, &mut rng).is_none());
        let b = Body::cube(3, 1.0).unwrap().intersect_ball(vec![0.0; 3], 1.2).unwrap();
        let p = uniform_point(&b, &mut rng).unwrap();
        assert!(b.contains(&p));
    }
}

//! Unnormalized logconcave densities over a convex body, evaluated in log scale.

use nalgebra::DMatrix;

use crate::body::Body;
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec, norm_sq, AffineMap};

/// Quadratic penalty `½ xᵀBx` of a tilted density.
#[derive(Debug, Clone, PartialEq)]
pub enum Quadratic {
    /// `B = t·I`
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Quadratic::Scalar(t) => t * norm_sq(x),
            Quadratic::Matrix(b) => dot(x, &mat_vec(b, x)),
        }
    }

    /// `(xᵀBu, uᵀBu)`
    fn along(&self, x: &[f64], u: &[f64]) -> (f64, f64) {
        match self {
            Quadratic::Scalar(t) => (t * dot(x, u), t * norm_sq(u)),
            Quadratic::Matrix(b) => {
                let bu = mat_vec(b, u);
                (dot(x, &bu), dot(u, &bu))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    Uniform,
    /// `exp(−(a/2)‖x − center‖²)`
    Gaussian { center: Vec<f64>, a: f64 },
    /// `exp(−α‖x − center‖)`
    Exponential { center: Vec<f64>, alpha: f64 },
    /// `exp(−α c·x)`
    Boltzmann { alpha: f64, cost: Vec<f64> },
    /// `exp(c·x − ½ xᵀBx)` times the base.
    Tilted {
        base: Box<DensityKind>,
        tilt: Vec<f64>,
        quad: Quadratic,
    },
    /// Base evaluated at `T⁻¹(x)`; the Jacobian is a shared constant and dropped.
    Pushforward {
        base: Box<DensityKind>,
        map: AffineMap,
    },
}

/// Restriction of a log-density to the line `x + t·u`:
/// `lin·t − ½curv·t² − Σ α·sqrt(p t² + q t + r)` up to an additive constant.
#[derive(Debug, Clone, Default)]
pub struct LineDensity {
    pub lin: f64,
    pub curv: f64,
    pub norm_terms: Vec<[f64; 4]>,
}

impl LineDensity {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.lin * t - 0.5 * self.curv * t * t;
        for [alpha, p, q, r] in &self.norm_terms {
            v -= alpha * (p * t * t + q * t + r).max(0.0).sqrt();
        }
        v
    }

    pub fn is_constant(&self) -> bool {
        self.lin == 0.0 && self.curv == 0.0 && self.norm_terms.iter().all(|t| t[0] == 0.0)
    }
}

impl DensityKind {
    fn log_value(&self, x: &[f64]) -> f64 {
        match self {
            DensityKind::Uniform => 0.0,
            DensityKind::Gaussian { center, a } => {
                -0.5 * a * crate::linalg::dist_sq(x, center)
            }
            DensityKind::Exponential { center, alpha } => {
                -alpha * crate::linalg::dist_sq(x, center).sqrt()
            }
            DensityKind::Boltzmann { alpha, cost } => -alpha * dot(cost, x),
            DensityKind::Tilted { base, tilt, quad } => {
                base.log_value(x) + dot(tilt, x) - 0.5 * quad.value(x)
            }
            DensityKind::Pushforward { base, map } => base.log_value(&map.apply_inverse(x)),
        }
    }

    fn add_line(&self, x: &[f64], u: &[f64], out: &mut LineDensity) {
        match self {
            DensityKind::Uniform => {}
            DensityKind::Gaussian { center, a } => {
                let mut du = 0.0;
                for i in 0..x.len() {
                    du += (x[i] - center[i]) * u[i];
                }
                out.lin -= a * du;
                out.curv += a * norm_sq(u);
            }
            DensityKind::Exponential { center, alpha } => {
                let mut du = 0.0;
                let mut dd = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - center[i];
                    du += d * u[i];
                    dd += d * d;
                }
                out.norm_terms.push([*alpha, norm_sq(u), 2.0 * du, dd]);
            }
            DensityKind::Boltzmann { alpha, cost } => out.lin -= alpha * dot(cost, u),
            DensityKind::Tilted { base, tilt, quad } => {
                base.add_line(x, u, out);
                let (xbu, ubu) = quad.along(x, u);
                out.lin += dot(tilt, u) - xbu;
                out.curv += ubu;
            }
            DensityKind::Pushforward { base, map } => {
                base.add_line(&map.apply_inverse(x), &map.apply_inverse_linear(u), out)
            }
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let dim = |v: &Vec<f64>| {
            if v.len() != n {
                Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                })
            } else {
                Ok(())
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be a finite nonnegative number, got {v}")))
            }
        };
        match self {
            DensityKind::Uniform => Ok(()),
            DensityKind::Gaussian { center, a } => {
                dim(center)?;
                nonneg("gaussian coefficient a", *a)
            }
            DensityKind::Exponential { center, alpha } => {
                dim(center)?;
                nonneg("exponential rate alpha", *alpha)
            }
            DensityKind::Boltzmann { alpha, cost } => {
                dim(cost)?;
                nonneg("boltzmann alpha", *alpha)
            }
            DensityKind::Tilted { base, tilt, quad } => {
                dim(tilt)?;
                if let Quadratic::Scalar(t) = quad {
                    nonneg("tilt time t", *t)?;
                }
                base.check(n)
            }
            DensityKind::Pushforward { base, map } => {
                if map.dim() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: map.dim(),
                    });
                }
                base.check(n)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensitySpec {
    body: Body,
    kind: DensityKind,
}

impl DensitySpec {
    pub fn new(body: Body, kind: DensityKind) -> Result<Self> {
        kind.check(body.dim())?;
        Ok(DensitySpec { body, kind })
    }

    pub fn uniform(body: Body) -> Self {
        DensitySpec {
            body,
            kind: DensityKind::Uniform,
        }
    }

    pub fn gaussian(body: Body, center: Vec<f64>, a: f64) -> Result<Self> {
        Self::new(body, DensityKind::Gaussian { center, a })
    }

    /// Standard Gaussian truncated to the ball of radius `10√n` (the mass
    /// outside is below `e^{-40n}`).
    pub fn standard_gaussian(n: usize) -> Result<Self> {
        let body = Body::ball(n, 10.0 * (n as f64).sqrt())?;
        Self::gaussian(body, vec![0.0; n], 1.0)
    }

    pub fn exponential(body: Body, center: Vec<f64>, alpha: f64) -> Result<Self> {
        Self::new(body, DensityKind::Exponential { center, alpha })
    }

    pub fn boltzmann(body: Body, alpha: f64, cost: Vec<f64>) -> Result<Self> {
        Self::new(body, DensityKind::Boltzmann { alpha, cost })
    }

    /// `exp(c·x − (t/2)‖x‖²)` times this density.
    pub fn tilted(&self, tilt: Vec<f64>, t: f64) -> Result<Self> {
        self.tilted_with(tilt, Quadratic::Scalar(t))
    }

    /// `exp(c·x − ½xᵀBx)` times this density.
    pub fn tilted_with(&self, tilt: Vec<f64>, quad: Quadratic) -> Result<Self> {
        Self::new(
            self.body.clone(),
            DensityKind::Tilted {
                base: Box::new(self.kind.clone()),
                tilt,
                quad,
            },
        )
    }

    /// Density of `T(X)` for `X` drawn from this density. Uniform densities stay
    /// uniform; boxes and ellipsoids keep analytic bodies where possible.
    pub fn pushforward(&self, map: &AffineMap) -> Result<Self> {
        let body = self.body.transform(map)?;
        if map.is_identity(0.0) {
            return Ok(self.clone());
        }
        let kind = match &self.kind {
            DensityKind::Uniform => DensityKind::Uniform,
            other => DensityKind::Pushforward {
                base: Box::new(other.clone()),
                map: map.clone(),
            },
        };
        Ok(DensitySpec { body, kind })
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.body.dim()
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, DensityKind::Uniform)
    }

    /// `log f(x)` up to a shared additive constant; `−∞` outside the body.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim() || !self.body.contains(x) {
            return f64::NEG_INFINITY;
        }
        self.kind.log_value(x)
    }

    /// Log-density ignoring the body (caller knows `x` is a member).
    #[inline]
    pub fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        self.kind.log_value(x)
    }

    /// One-dimensional restriction along `x + t·u` (body indicator excluded).
    pub fn line(&self, x: &[f64], u: &[f64]) -> LineDensity {
        let mut out = LineDensity::default();
        self.kind.add_line(x, u, &mut out);
        out
    }
}

/// Affine map `x ↦ Mx + s` applied to a point.
pub fn affine_apply(map: &AffineMap, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            got: x.len(),
        });
    }
    Ok(map.apply(x))
}

/// Convenience for `DensitySpec::pushforward`.
pub fn affine_pushforward(density: &DensitySpec, map: &AffineMap) -> Result<DensitySpec> {
    density.pushforward(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn uniform_is_zero_inside_and_neg_inf_outside() {
        let d = DensitySpec::uniform(Body::cube(3, 1.0).unwrap());
        assert_eq!(d.log_density(&[0.3, -0.2, 0.9]), 0.0);
        assert_eq!(d.log_density(&[1.3, 0.0, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_difference() {
        let d = DensitySpec::gaussian(Body::ball(2, 10.0).unwrap(), vec![0.0, 0.0], 1.0).unwrap();
        let x = [1.0, 1.0];
        assert!((d.log_density(&[0.0, 0.0]) - d.log_density(&x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tilted_adds_linear_and_quadratic() {
        let base = DensitySpec::gaussian(Body::ball(2, 10.0).unwrap(), vec![0.0, 0.0], 1.0).unwrap();
        let c = vec![0.5, -1.0];
        let t = 0.7;
        let tilted = base.tilted(c.clone(), t).unwrap();
        let x = [0.4, 1.1];
        let expect = base.log_density(&x) + dot(&c, &x) - 0.5 * t * norm_sq(&x);
        assert!((tilted.log_density(&x) - expect).abs() < 1e-14);
    }

    #[test]
    fn line_restriction_matches_pointwise() {
        let body = Body::ball(3, 10.0).unwrap();
        let base = DensitySpec::exponential(body, vec![0.1, 0.0, -0.2], 1.3).unwrap();
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let d = base
            .tilted_with(vec![0.2, -0.4, 1.0], Quadratic::Matrix(b))
            .unwrap();
        let map = AffineMap::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 2.0, 0.0, 0.1, 0.0, 0.5]),
            vec![0.3, 0.0, -0.1],
        )
        .unwrap();
        let d = d.pushforward(&map).unwrap();
        let mut rng = RngStream::new(3, 0);
        let x = d.body().interior_point().to_vec();
        let u = rng.unit_vector(3);
        let line = d.line(&x, &u);
        let f0 = d.log_density(&x);
        for &t in &[-0.5, -0.1, 0.2, 0.7] {
            let y = crate::linalg::along(&x, t, &u);
            let direct = d.log_density(&y) - f0;
            assert!((line.eval(t) - line.eval(0.0) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn negative_parameters_rejected() {
        let body = Body::ball(2, 1.0).unwrap();
        assert!(DensitySpec::gaussian(body.clone(), vec![0.0, 0.0], -1.0).is_err());
        assert!(DensitySpec::boltzmann(body, 1.0, vec![1.0]).is_err());
    }
}

//! Convex bodies given by a well-guaranteed membership oracle: inner radius `r`,
//! outer radius `R` and an interior point `x0` with `x0 + rB ⊆ K ⊆ RB`.
//!
//! Bodies are closed (boundary points are members). Every analytic kind has a
//! closed-form chord; membership-only bodies fall back to bisection.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use crate::special::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, mat_vec, norm, norm_sq, sym_eigen, AffineMap};

const BISECTION_CAP: usize = 200;

/// User-supplied membership test for bodies without an analytic form.
pub trait MembershipOracle: Send + Sync {
    fn contains(&self, x: &[f64]) -> bool;
}

impl<F> MembershipOracle for F
where
    F: Fn(&[f64]) -> bool + Send + Sync,
{
    fn contains(&self, x: &[f64]) -> bool {
        self(x)
    }
}

#[derive(Clone)]
pub struct OracleHandle(pub Arc<dyn MembershipOracle>);

impl fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OracleHandle(..)")
    }
}

#[derive(Debug, Clone)]
pub enum BodyKind {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Axis-aligned box `lo ≤ x ≤ hi`.
    Cube {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Standard simplex `{x ≥ 0, Σx ≤ 1}`.
    Simplex,
    /// `{x : rows·x ≤ offsets}`.
    Polytope {
        rows: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
    /// `{x : (x−c)ᵀ S⁻¹ (x−c) ≤ 1}`.
    Ellipsoid {
        center: Vec<f64>,
        shape: DMatrix<f64>,
        shape_inv: DMatrix<f64>,
    },
    /// `base ∩ B(center, radius)`.
    BallIntersection {
        base: Arc<Body>,
        center: Vec<f64>,
        radius: f64,
    },
    /// `base ∩ {x : rows·x ≤ offsets}`.
    Sliced {
        base: Arc<Body>,
        rows: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
    /// Image `T(base)` of another body.
    Transformed {
        base: Arc<Body>,
        map: AffineMap,
    },
    Oracle(OracleHandle),
}

#[derive(Debug, Clone)]
pub struct Body {
    dim: usize,
    inner_radius: f64,
    outer_radius: f64,
    interior_point: Vec<f64>,
    kind: BodyKind,
}

/// Parameter interval `{t : x + t·u ∈ K}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chord {
    pub lo: f64,
    pub hi: f64,
}

impl Chord {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        !(self.hi > self.lo)
    }

    fn intersect(self, other: Chord) -> Chord {
        Chord {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }
}

/// Volume of the Euclidean ball of radius `r` in `R^n`, in log scale.
pub fn ln_ball_volume(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    0.5 * nf * std::f64::consts::PI.ln() - ln_gamma(0.5 * nf + 1.0) + nf * r.ln()
}

pub fn ball_volume(n: usize, r: f64) -> f64 {
    ln_ball_volume(n, r).exp()
}

/// Roots of `a t² + b t + c = 0` for `a > 0, c ≤ 0`, as a chord.
fn quadratic_chord(a: f64, b: f64, c: f64) -> Chord {
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let s = disc.sqrt();
    let q = -0.5 * (b + if b >= 0.0 { s } else { -s });
    if q == 0.0 {
        return Chord { lo: 0.0, hi: 0.0 };
    }
    let (t1, t2) = (q / a, c / q);
    Chord {
        lo: t1.min(t2),
        hi: t1.max(t2),
    }
}

fn halfspace_chord(rows: &[Vec<f64>], offsets: &[f64], x: &[f64], u: &[f64]) -> Chord {
    let mut ch = Chord {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    for (a, &b) in rows.iter().zip(offsets) {
        let slack = b - dot(a, x);
        let d = dot(a, u);
        if d > 0.0 {
            ch.hi = ch.hi.min(slack / d);
        } else if d < 0.0 {
            ch.lo = ch.lo.max(slack / d);
        } else if slack < 0.0 {
            return Chord { lo: 1.0, hi: -1.0 };
        }
    }
    ch
}

fn halfspace_depth(rows: &[Vec<f64>], offsets: &[f64], x: &[f64]) -> f64 {
    rows.iter()
        .zip(offsets)
        .map(|(a, &b)| (b - dot(a, x)) / norm(a))
        .fold(f64::INFINITY, f64::min)
}

impl Body {
    fn with_guarantees(
        kind: BodyKind,
        dim: usize,
        interior_point: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if interior_point.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: interior_point.len(),
            });
        }
        if !(inner_radius > 0.0 && inner_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "inner radius must be positive, got {inner_radius}"
            )));
        }
        if !(outer_radius >= inner_radius && outer_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "outer radius {outer_radius} must be finite and at least the inner radius {inner_radius}"
            )));
        }
        Ok(Body {
            dim,
            inner_radius,
            outer_radius,
            interior_point,
            kind,
        })
    }

    pub fn ball(n: usize, radius: f64) -> Result<Self> {
        Self::ball_at(vec![0.0; n], radius)
    }

    pub fn ball_at(center: Vec<f64>, radius: f64) -> Result<Self> {
        let n = center.len();
        let outer = norm(&center) + radius;
        Self::with_guarantees(
            BodyKind::Ball {
                center: center.clone(),
                radius,
            },
            n,
            center,
            radius,
            outer,
        )
    }

    /// `[-w, w]^n`.
    pub fn cube(n: usize, half_width: f64) -> Result<Self> {
        Self::axis_box(vec![-half_width; n], vec![half_width; n])
    }

    /// The cube `[-√3, √3]^n`, which is in isotropic position.
    pub fn isotropic_cube(n: usize) -> Result<Self> {
        Self::cube(n, 3f64.sqrt())
    }

    pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::invalid("box needs lo < hi in every coordinate"));
        }
        let n = lo.len();
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let r = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| 0.5 * (h - l))
            .fold(f64::INFINITY, f64::min);
        let outer = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (l * l).max(h * h))
            .sum::<f64>()
            .sqrt();
        Self::with_guarantees(BodyKind::Cube { lo, hi }, n, mid, r, outer)
    }

    /// Standard simplex `{x ≥ 0, Σx ≤ 1}` with its incenter as interior point.
    pub fn simplex(n: usize) -> Result<Self> {
        let nf = n as f64;
        let r = 1.0 / (nf + nf.sqrt());
        Self::with_guarantees(BodyKind::Simplex, n, vec![r; n], r, 1.0)
    }

    /// Standard simplex mapped to isotropic position (closed-form mean and
    /// covariance of the uniform distribution).
    pub fn isotropic_simplex(n: usize) -> Result<Self> {
        let nf = n as f64;
        let mean = vec![1.0 / (nf + 1.0); n];
        let denom = (nf + 1.0) * (nf + 1.0) * (nf + 2.0);
        let cov = DMatrix::from_fn(n, n, |i, j| if i == j { nf / denom } else { -1.0 / denom });
        let cov = crate::linalg::CovMatrix::new(cov)?;
        let w = cov.inv_sqrt()?;
        let shift = mat_vec(&w, &mean).into_iter().map(|x| -x).collect();
        let map = AffineMap::new(w, shift)?;
        Self::simplex(n)?.transform(&map)
    }

    /// Polytope `{x : rows·x ≤ offsets}` with caller-supplied guarantees. The
    /// inner ball around `interior_point` is verified against every facet.
    pub fn polytope(
        rows: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        interior_point: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
    ) -> Result<Self> {
        let n = interior_point.len();
        if rows.len() != offsets.len() {
            return Err(Error::invalid("polytope needs one offset per row"));
        }
        for a in &rows {
            if a.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: a.len(),
                });
            }
            if norm(a) == 0.0 {
                return Err(Error::invalid("polytope row is zero"));
            }
        }
        let depth = halfspace_depth(&rows, &offsets, &interior_point);
        if depth < inner_radius * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "inner ball of radius {inner_radius} does not fit: facet distance {depth}"
            )));
        }
        Self::with_guarantees(
            BodyKind::Polytope { rows, offsets },
            n,
            interior_point,
            inner_radius,
            outer_radius,
        )
    }

    /// Axis-aligned ellipsoid with the given semi-axes.
    pub fn ellipsoid(center: Vec<f64>, semi_axes: &[f64]) -> Result<Self> {
        let d: Vec<f64> = semi_axes.iter().map(|a| a * a).collect();
        Self::ellipsoid_shape(
            center,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)),
        )
    }

    /// `{x : (x−c)ᵀ S⁻¹ (x−c) ≤ 1}` for a positive-definite shape matrix `S`.
    pub fn ellipsoid_shape(center: Vec<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: shape.nrows(),
            });
        }
        let shape = (&shape + shape.transpose()) * 0.5;
        let (values, vectors) = sym_eigen(&shape);
        let (lmax, lmin) = (values[0], values[n - 1]);
        if !(lmin > 1e-14 * lmax) {
            return Err(Error::Singular {
                min_eigenvalue: lmin,
                direction: vectors.column(n - 1).iter().copied().collect(),
            });
        }
        let shape_inv = crate::linalg::sym_apply(&shape, |l| 1.0 / l);
        let outer = norm(&center) + lmax.sqrt();
        Self::with_guarantees(
            BodyKind::Ellipsoid {
                center: center.clone(),
                shape,
                shape_inv,
            },
            n,
            center,
            lmin.sqrt(),
            outer,
        )
    }

    /// Membership-only body; chords are found by bisection.
    pub fn from_oracle(
        oracle: Arc<dyn MembershipOracle>,
        interior_point: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
    ) -> Result<Self> {
        let n = interior_point.len();
        Self::with_guarantees(
            BodyKind::Oracle(OracleHandle(oracle)),
            n,
            interior_point,
            inner_radius,
            outer_radius,
        )
    }

    /// `self ∩ B(center, radius)`. The interior point is kept; the inner radius
    /// shrinks if the ball cuts into the original inner ball.
    pub fn intersect_ball(&self, center: Vec<f64>, radius: f64) -> Result<Self> {
        self.check_dim(&center)?;
        let d = dist_sq(&self.interior_point, &center).sqrt();
        let r = self.inner_radius.min(radius - d);
        let outer = self.outer_radius.min(norm(&center) + radius);
        Self::with_guarantees(
            BodyKind::BallIntersection {
                base: Arc::new(self.clone()),
                center,
                radius,
            },
            self.dim,
            self.interior_point.clone(),
            r,
            outer.max(r),
        )
    }

    /// `self ∩ {x : rows·x ≤ offsets}` with a new interior point. The inner
    /// radius is the guaranteed clearance of `interior_point`.
    pub fn slice(
        &self,
        rows: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        interior_point: Vec<f64>,
    ) -> Result<Self> {
        self.check_dim(&interior_point)?;
        let base_depth = self
            .depth(&interior_point)
            .ok_or_else(|| Error::invalid("cannot slice a membership-only body"))?;
        let depth = base_depth.min(halfspace_depth(&rows, &offsets, &interior_point));
        Self::with_guarantees(
            BodyKind::Sliced {
                base: Arc::new(self.clone()),
                rows,
                offsets,
            },
            self.dim,
            interior_point,
            depth,
            self.outer_radius,
        )
    }

    /// Image `T(K)`. Boxes under diagonal maps and balls/ellipsoids under any
    /// map keep an analytic kind; everything else is wrapped.
    pub fn transform(&self, map: &AffineMap) -> Result<Self> {
        if map.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: map.dim(),
            });
        }
        if map.is_identity(0.0) {
            return Ok(self.clone());
        }
        let m = map.matrix();
        match &self.kind {
            BodyKind::Cube { lo, hi } if map.is_diagonal(0.0) => {
                let a = map.apply(lo);
                let b = map.apply(hi);
                let new_lo = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
                let new_hi = a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect();
                Self::axis_box(new_lo, new_hi)
            }
            BodyKind::Ball { center, radius } => {
                let shape = m * m.transpose() * (radius * radius);
                let c = map.apply(center);
                Self::ellipsoid_or_ball(c, shape)
            }
            BodyKind::Ellipsoid { center, shape, .. } => {
                let shape = m * shape * m.transpose();
                let c = map.apply(center);
                Self::ellipsoid_or_ball(c, shape)
            }
            _ => {
                let (smax, smin) = map.singular_range();
                let x0 = map.apply(&self.interior_point);
                let outer = smax * self.outer_radius + norm(map.shift());
                Self::with_guarantees(
                    BodyKind::Transformed {
                        base: Arc::new(self.clone()),
                        map: map.clone(),
                    },
                    self.dim,
                    x0,
                    smin * self.inner_radius,
                    outer,
                )
            }
        }
    }

    fn ellipsoid_or_ball(center: Vec<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        let s = shape[(0, 0)];
        let is_scalar = (0..n).all(|i| {
            (0..n).all(|j| {
                let target = if i == j { s } else { 0.0 };
                (shape[(i, j)] - target).abs() <= 1e-14 * s.abs()
            })
        });
        if is_scalar {
            Self::ball_at(center, s.sqrt())
        } else {
            Self::ellipsoid_shape(center, shape)
        }
    }

    /// The same body with weaker guarantees: a smaller inner radius and/or a
    /// larger outer radius than the ones derived at construction.
    pub fn with_guarantee_radii(mut self, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && inner <= self.inner_radius) {
            return Err(Error::invalid(format!(
                "inner radius {inner} must lie in (0, {}]",
                self.inner_radius
            )));
        }
        if !(outer >= self.outer_radius && outer.is_finite()) {
            return Err(Error::invalid(format!(
                "outer radius {outer} must be at least {}",
                self.outer_radius
            )));
        }
        self.inner_radius = inner;
        self.outer_radius = outer;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior_point
    }

    pub fn kind(&self) -> &BodyKind {
        &self.kind
    }

    /// Radius of a ball around the interior point that contains the body.
    pub fn radius_about_interior(&self) -> f64 {
        self.outer_radius + norm(&self.interior_point)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Membership with dimension checking.
    pub fn membership(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("membership query must be finite"));
        }
        Ok(self.contains(x))
    }

    /// Membership without input validation (hot path).
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.kind {
            BodyKind::Ball { center, radius } => dist_sq(x, center) <= radius * radius,
            BodyKind::Cube { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h),
            BodyKind::Simplex => x.iter().all(|v| *v >= 0.0) && x.iter().sum::<f64>() <= 1.0,
            BodyKind::Polytope { rows, offsets } => {
                rows.iter().zip(offsets).all(|(a, b)| dot(a, x) <= *b)
            }
            BodyKind::Ellipsoid {
                center, shape_inv, ..
            } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                dot(&d, &mat_vec(shape_inv, &d)) <= 1.0
            }
            BodyKind::BallIntersection {
                base,
                center,
                radius,
            } => dist_sq(x, center) <= radius * radius && base.contains(x),
            BodyKind::Sliced {
                base,
                rows,
                offsets,
            } => rows.iter().zip(offsets).all(|(a, b)| dot(a, x) <= *b) && base.contains(x),
            BodyKind::Transformed { base, map } => base.contains(&map.apply_inverse(x)),
            BodyKind::Oracle(h) => h.0.contains(x),
        }
    }

    /// Lower bound on the distance from `x` to the boundary (exact for balls,
    /// boxes and polytopes). `None` for membership-only bodies.
    pub fn depth(&self, x: &[f64]) -> Option<f64> {
        Some(match &self.kind {
            BodyKind::Ball { center, radius } => radius - dist_sq(x, center).sqrt(),
            BodyKind::Cube { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            BodyKind::Simplex => {
                let s = (1.0 - x.iter().sum::<f64>()) / (self.dim as f64).sqrt();
                x.iter().copied().fold(s, f64::min)
            }
            BodyKind::Polytope { rows, offsets } => halfspace_depth(rows, offsets, x),
            BodyKind::Ellipsoid {
                center,
                shape,
                shape_inv,
            } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let m = dot(&d, &mat_vec(shape_inv, &d)).sqrt();
                let lmin = sym_eigen(shape).0[self.dim - 1];
                lmin.sqrt() * (1.0 - m)
            }
            BodyKind::BallIntersection {
                base,
                center,
                radius,
            } => base.depth(x)?.min(radius - dist_sq(x, center).sqrt()),
            BodyKind::Sliced {
                base,
                rows,
                offsets,
            } => base.depth(x)?.min(halfspace_depth(rows, offsets, x)),
            BodyKind::Transformed { base, map } => {
                map.singular_range().1 * base.depth(&map.apply_inverse(x))?
            }
            BodyKind::Oracle(_) => return None,
        })
    }

    /// Chord through a member point `x` along a unit direction `u`.
    pub fn chord(&self, x: &[f64], u: &[f64]) -> Result<Chord> {
        self.check_dim(x)?;
        self.check_dim(u)?;
        if (norm(u) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("chord direction must be a unit vector"));
        }
        if !self.membership(x)? {
            return Err(Error::NotInterior);
        }
        let ch = self.chord_along(x, u);
        if !(ch.lo.is_finite() && ch.hi.is_finite()) {
            return Err(Error::Chord("body is unbounded along the direction".into()));
        }
        Ok(ch)
    }

    /// Chord along any nonzero direction, no validation. For a point outside
    /// the body the result is empty (`lo > hi`) or does not contain 0.
    pub fn chord_along(&self, x: &[f64], u: &[f64]) -> Chord {
        match &self.kind {
            BodyKind::Ball { center, radius } => {
                let mut b = 0.0;
                let mut c = 0.0;
                for i in 0..self.dim {
                    let d = x[i] - center[i];
                    b += d * u[i];
                    c += d * d;
                }
                quadratic_chord(norm_sq(u), 2.0 * b, c - radius * radius)
            }
            BodyKind::Cube { lo, hi } => {
                let mut ch = Chord {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                };
                for i in 0..self.dim {
                    let ui = u[i];
                    if ui == 0.0 {
                        continue;
                    }
                    let a = (lo[i] - x[i]) / ui;
                    let b = (hi[i] - x[i]) / ui;
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    ch.lo = ch.lo.max(a);
                    ch.hi = ch.hi.min(b);
                }
                ch
            }
            BodyKind::Simplex => {
                let mut ch = Chord {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                };
                // -x_i ≤ 0
                for i in 0..self.dim {
                    let ui = u[i];
                    if ui < 0.0 {
                        ch.hi = ch.hi.min(x[i] / -ui);
                    } else if ui > 0.0 {
                        ch.lo = ch.lo.max(-x[i] / ui);
                    }
                }
                let slack = 1.0 - x.iter().sum::<f64>();
                let d: f64 = u.iter().sum();
                if d > 0.0 {
                    ch.hi = ch.hi.min(slack / d);
                } else if d < 0.0 {
                    ch.lo = ch.lo.max(slack / d);
                }
                ch
            }
            BodyKind::Polytope { rows, offsets } => halfspace_chord(rows, offsets, x, u),
            BodyKind::Ellipsoid {
                center, shape_inv, ..
            } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let su = mat_vec(shape_inv, u);
                quadratic_chord(dot(u, &su), 2.0 * dot(&d, &su), dot(&d, &mat_vec(shape_inv, &d)) - 1.0)
            }
            BodyKind::BallIntersection {
                base,
                center,
                radius,
            } => {
                let mut b = 0.0;
                let mut c = 0.0;
                for i in 0..self.dim {
                    let d = x[i] - center[i];
                    b += d * u[i];
                    c += d * d;
                }
                quadratic_chord(norm_sq(u), 2.0 * b, c - radius * radius)
                    .intersect(base.chord_along(x, u))
            }
            BodyKind::Sliced {
                base,
                rows,
                offsets,
            } => halfspace_chord(rows, offsets, x, u).intersect(base.chord_along(x, u)),
            BodyKind::Transformed { base, map } => {
                base.chord_along(&map.apply_inverse(x), &map.apply_inverse_linear(u))
            }
            BodyKind::Oracle(h) => {
                let reach = 2.0 * self.radius_about_interior() / norm(u) * (1.0 + 1e-9);
                bisect_chord(|p| h.0.contains(p), x, u, reach)
            }
        }
    }

    /// Exact volume for analytic kinds.
    pub fn volume(&self) -> Option<f64> {
        match &self.kind {
            BodyKind::Ball { radius, .. } => Some(ball_volume(self.dim, *radius)),
            BodyKind::Cube { lo, hi } => Some(lo.iter().zip(hi).map(|(l, h)| h - l).product()),
            BodyKind::Simplex => Some((-ln_gamma(self.dim as f64 + 1.0)).exp()),
            BodyKind::Ellipsoid { shape, .. } => {
                Some(ball_volume(self.dim, 1.0) * shape.clone().determinant().sqrt())
            }
            BodyKind::Transformed { base, map } => {
                base.volume().map(|v| v * map.log_abs_det().exp())
            }
            _ => None,
        }
    }
}

/// Chord of a membership oracle by bisection on both sides of `x`; `reach` must
/// be a parameter value that is certainly outside. At most 200 halvings per side.
pub fn bisect_chord(
    contains: impl Fn(&[f64]) -> bool,
    x: &[f64],
    u: &[f64],
    reach: f64,
) -> Chord {
    if !contains(x) {
        return Chord { lo: 1.0, hi: -1.0 };
    }
    let side = |sign: f64| {
        let mut inside = 0.0;
        let mut outside = reach;
        let mut p = x.to_vec();
        for _ in 0..BISECTION_CAP {
            if outside - inside <= 1e-13 * reach {
                break;
            }
            let mid = 0.5 * (inside + outside);
            for i in 0..x.len() {
                p[i] = x[i] + sign * mid * u[i];
            }
            if contains(&p) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        sign * inside
    };
    let hi = side(1.0);
    let lo = side(-1.0);
    Chord { lo, hi }
}

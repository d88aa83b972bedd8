//! Small dense linear-algebra layer: slice vector helpers, cached symmetric
//! covariance matrices, and invertible affine maps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += s * x`
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// `x + t * u` as a new vector.
#[inline]
pub fn along(x: &[f64], t: f64, u: &[f64]) -> Vec<f64> {
    x.iter().zip(u).map(|(a, b)| a + t * b).collect()
}

pub fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

pub fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let (r, c) = m.shape();
    debug_assert_eq!(c, x.len());
    (0..r)
        .map(|i| (0..c).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
/// Column `i` of the returned matrix is the eigenvector of `values[i]`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `V f(Λ) Vᵀ` for a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let w = f(lam);
        let v = vectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    out
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration on `M²`,
/// stopping once the residual `‖M²v − ρv‖ ≤ tol·ρ`.
pub fn op_norm_power_iteration(m: &DMatrix<f64>, tol: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let sq = m * m;
    // Fixed irrational-ish start so the result is deterministic.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_75 + 0.3).sin());
    v.normalize_mut();
    let mut rho = 0.0;
    for _ in 0..50_000 {
        let w = &sq * &v;
        rho = v.dot(&w);
        let resid = (&w - &v * rho).norm();
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if resid <= tol * rho.abs() {
            return rho.max(0.0).sqrt();
        }
    }
    log::debug!("power iteration hit its cap; falling back to full eigen-decomposition");
    let exact = sym_eigen(m).0;
    let _ = rho;
    exact.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Symmetric positive semi-definite matrix with cached spectral summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    mat: DMatrix<f64>,
    trace: f64,
    trace_sq: f64,
    op_norm: f64,
}

impl CovMatrix {
    /// Symmetrizes `mat` as `(M + Mᵀ)/2` and caches trace, `tr(M²)` and the
    /// operator norm.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::invalid(format!(
                "covariance must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        let trace = sym.trace();
        let trace_sq = sym.iter().map(|x| x * x).sum();
        let op_norm = op_norm_power_iteration(&sym, 1e-8);
        Ok(CovMatrix {
            mat: sym,
            trace,
            trace_sq,
            op_norm,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is valid")
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DMatrix::zeros(n, n)).expect("zero matrix is valid")
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self::new(DMatrix::identity(n, n) * s).expect("scaled identity is valid")
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// `tr(A²)`, the Frobenius norm squared.
    pub fn trace_sq(&self) -> f64 {
        self.trace_sq
    }

    /// Largest absolute eigenvalue (cached, power iteration).
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        sym_eigen(&self.mat)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }

    /// `tr(A^q)` with negative round-off eigenvalues clamped to zero.
    pub fn trace_pow(&self, q: f64) -> f64 {
        self.eigenvalues().iter().map(|l| l.max(0.0).powf(q)).sum()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &mat_vec(&self.mat, x))
    }

    /// `‖A − B‖_op` for another matrix of the same size.
    pub fn op_dist(&self, other: &DMatrix<f64>) -> f64 {
        let d = &self.mat - other;
        let d = (&d + d.transpose()) * 0.5;
        sym_eigen(&d).0.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    fn check_definite(&self, values: &[f64], vectors: &DMatrix<f64>) -> Result<()> {
        let max = values.first().copied().unwrap_or(0.0);
        let min = values.last().copied().unwrap_or(0.0);
        if !(min > 1e-10 * max.abs()) || max <= 0.0 {
            let k = values.len() - 1;
            return Err(Error::Singular {
                min_eigenvalue: min,
                direction: vectors.column(k).iter().copied().collect(),
            });
        }
        Ok(())
    }

    /// Symmetric `A^{-1/2}`; errors when the smallest eigenvalue is below
    /// `1e-10·‖A‖_op`, naming the offending direction.
    pub fn inv_sqrt(&self) -> Result<DMatrix<f64>> {
        let (values, vectors) = self.eigen();
        self.check_definite(&values, &vectors)?;
        Ok(sym_apply(&self.mat, |l| 1.0 / l.sqrt()))
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let (values, vectors) = self.eigen();
        self.check_definite(&values, &vectors)?;
        Ok(sym_apply(&self.mat, |l| 1.0 / l))
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        sym_apply(&self.mat, |l| l.max(0.0).sqrt())
    }
}

/// Invertible affine map `x ↦ Mx + s`. The inverse linear part is computed once
/// at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    shift: Vec<f64>,
    inverse: DMatrix<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, shift: Vec<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::invalid("affine map matrix must be square"));
        }
        if shift.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: shift.len(),
            });
        }
        let svd = matrix.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let (kmin, smin) = svd.singular_values.argmin();
        if !(smin > 1e-12 * smax) {
            let v_t = svd.v_t.expect("requested V");
            return Err(Error::Singular {
                min_eigenvalue: smin,
                direction: v_t.row(kmin).iter().copied().collect(),
            });
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("affine map matrix is not invertible"))?;
        Ok(AffineMap {
            matrix,
            shift,
            inverse,
        })
    }

    pub fn identity(n: usize) -> Self {
        AffineMap {
            matrix: DMatrix::identity(n, n),
            shift: vec![0.0; n],
            inverse: DMatrix::identity(n, n),
        }
    }

    pub fn scaling(n: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * s, vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = mat_vec(&self.matrix, x);
        axpy(1.0, &self.shift, &mut y);
        y
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = y.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        mat_vec(&self.inverse, &d)
    }

    /// Linear part only, `M⁻¹u` (directions transform without the shift).
    pub fn apply_inverse_linear(&self, u: &[f64]) -> Vec<f64> {
        mat_vec(&self.inverse, u)
    }

    /// `self ∘ inner`, i.e. `x ↦ self(inner(x))`.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        let matrix = &self.matrix * &inner.matrix;
        let mut shift = mat_vec(&self.matrix, &inner.shift);
        axpy(1.0, &self.shift, &mut shift);
        let inverse = &inner.inverse * &self.inverse;
        AffineMap {
            matrix,
            shift,
            inverse,
        }
    }

    pub fn inverted(&self) -> AffineMap {
        let shift = mat_vec(&self.inverse, &self.shift)
            .into_iter()
            .map(|x| -x)
            .collect();
        AffineMap {
            matrix: self.inverse.clone(),
            shift,
            inverse: self.matrix.clone(),
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let n = self.dim();
        (&self.matrix - DMatrix::<f64>::identity(n, n))
            .iter()
            .all(|x| x.abs() <= tol)
            && self.shift.iter().all(|x| x.abs() <= tol)
    }

    /// Diagonal linear part (up to `tol` off the diagonal)?
    pub fn is_diagonal(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)].abs() <= tol))
    }

    /// Largest and smallest singular values of the linear part.
    pub fn singular_range(&self) -> (f64, f64) {
        let s = self.matrix.clone().singular_values();
        (s.max(), s.min())
    }

    pub fn log_abs_det(&self) -> f64 {
        self.matrix.clone().determinant().abs().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_inverse_sqrt() {
        let a = CovMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let r = a.inv_sqrt().unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((r[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(r[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn singular_names_null_direction() {
        let a = CovMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        match a.inv_sqrt() {
            Err(Error::Singular { direction, .. }) => {
                assert!(direction[0].abs() < 1e-12);
                assert!((direction[1].abs() - 1.0).abs() < 1e-12);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn cached_summaries() {
        let a = CovMatrix::from_diagonal(&[3.0, 1.0, 0.5]).unwrap();
        assert!((a.trace() - 4.5).abs() < 1e-12);
        assert!((a.trace_sq() - 10.25).abs() < 1e-12);
        assert!((a.op_norm() - 3.0).abs() < 1e-9);
        assert!((a.trace_pow(2.0) - a.trace_sq()).abs() < 1e-10);
    }

    #[test]
    fn op_norm_handles_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        assert!((op_norm_power_iteration(&m, 1e-10) - 2.0).abs() < 1e-8);
        assert_eq!(op_norm_power_iteration(&DMatrix::zeros(3, 3), 1e-8), 0.0);
    }

    #[test]
    fn affine_compose_and_invert() {
        let t = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]),
            vec![1.0, -1.0],
        )
        .unwrap();
        let x = [0.3, -0.7];
        let back = t.apply_inverse(&t.apply(&x));
        assert!(dist_sq(&back, &x) < 1e-24);
        let id = t.inverted().compose(&t);
        assert!(id.is_identity(1e-12));
    }

    #[test]
    fn affine_singular_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            AffineMap::new(m, vec![0.0, 0.0]),
            Err(Error::Singular { .. })
        ));
    }
}

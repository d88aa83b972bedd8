//! Monte Carlo surrogates for the isoperimetric, thin-shell, slicing and
//! Poincaré constants, plus the conductance/mixing calculators.
//!
//! Every nontrivial constant here is an upper bound over an explicit family of
//! sets or test functions, never the variational infimum itself.

use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{batch_se, mean_var, quantile, quantile_sorted, Estimate, DEFAULT_BATCHES};
use crate::isotropy::estimate_mean_cov;
use crate::linalg::{dist_sq, dot, norm, unit};
use crate::rng::RngStream;
use crate::samples::SampleMatrix;
use crate::special::normal_pdf;

pub const MIN_HALFSPACE_SAMPLES: usize = 1000;
pub const KDE_BINS: usize = 1024;
pub const BOOTSTRAP_REPLICATES: usize = 50;
/// Thresholds whose smaller side carries less mass than this are ignored;
/// there the KDE tail is all smoothing bias.
pub const MIN_SIDE_MASS: f64 = 0.005;
const BOOTSTRAP_SEED: u64 = 0x6b64_655f_626f_6f74;

/// A measurable test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSet {
    /// `{x : normal·x ≤ offset}` with a unit normal.
    Halfspace { normal: Vec<f64>, offset: f64 },
    /// `{x : lo ≤ normal·x ≤ hi}`.
    Slab { normal: Vec<f64>, lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl TestSet {
    pub fn halfspace(normal: &[f64], offset: f64) -> Result<Self> {
        let len = norm(normal);
        if !(len > 0.0) {
            return Err(Error::invalid("halfspace normal must be nonzero"));
        }
        Ok(TestSet::Halfspace {
            normal: normal.iter().map(|v| v / len).collect(),
            offset: offset / len,
        })
    }

    pub fn slab(normal: &[f64], lo: f64, hi: f64) -> Result<Self> {
        let len = norm(normal);
        if !(len > 0.0) || !(hi > lo) {
            return Err(Error::invalid("slab needs a nonzero normal and lo < hi"));
        }
        Ok(TestSet::Slab {
            normal: normal.iter().map(|v| v / len).collect(),
            lo: lo / len,
            hi: hi / len,
        })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid("test ball radius must be positive"));
        }
        Ok(TestSet::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            TestSet::Halfspace { normal, .. } | TestSet::Slab { normal, .. } => normal.len(),
            TestSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.outside_distance(x) <= 0.0
    }

    /// Euclidean distance from `x` to the set (0 inside).
    pub fn outside_distance(&self, x: &[f64]) -> f64 {
        match self {
            TestSet::Halfspace { normal, offset } => (dot(normal, x) - offset).max(0.0),
            TestSet::Slab { normal, lo, hi } => {
                let s = dot(normal, x);
                (lo - s).max(s - hi).max(0.0)
            }
            TestSet::Ball { center, radius } => (dist_sq(x, center).sqrt() - radius).max(0.0),
        }
    }

    /// Short label used in column names.
    pub fn label(&self) -> String {
        match self {
            TestSet::Halfspace { .. } => "halfspace".into(),
            TestSet::Slab { .. } => "slab".into(),
            TestSet::Ball { .. } => "ball".into(),
        }
    }

    /// Empirical measure of the set under the samples.
    pub fn measure(&self, samples: &SampleMatrix) -> f64 {
        let inside = samples.rows().filter(|r| self.contains(r)).count();
        inside as f64 / samples.len() as f64
    }
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let (_, var) = mean_var(values);
    let sd = var.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

/// Binned Gaussian KDE of a 1-D sample: density and CDF on a uniform grid.
#[derive(Debug, Clone)]
pub struct Kde1d {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde1d {
    pub fn new(values: &[f64], bandwidth: f64) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
        let step = (hi - lo) / (KDE_BINS - 1) as f64;
        // linear binning
        let mut w = vec![0.0; KDE_BINS];
        for &v in values {
            let pos = (v - lo) / step;
            let i = (pos.floor() as usize).min(KDE_BINS - 2);
            let frac = pos - i as f64;
            w[i] += 1.0 - frac;
            w[i + 1] += frac;
        }
        let m = values.len() as f64;
        let reach = ((4.0 * bandwidth / step).ceil() as usize).min(KDE_BINS - 1);
        let kernel: Vec<f64> = (0..=reach)
            .map(|j| normal_pdf(j as f64 * step / bandwidth) / (bandwidth * m))
            .collect();
        let mut density = vec![0.0; KDE_BINS];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let a = i.saturating_sub(reach);
            let b = (i + reach).min(KDE_BINS - 1);
            for (j, d) in density.iter_mut().enumerate().take(b + 1).skip(a) {
                *d += wi * kernel[i.abs_diff(j)];
            }
        }
        let mut cdf = vec![0.0; KDE_BINS];
        for i in 1..KDE_BINS {
            cdf[i] = cdf[i - 1] + 0.5 * step * (density[i - 1] + density[i]);
        }
        let total = cdf[KDE_BINS - 1];
        if total > 0.0 {
            cdf.iter_mut().for_each(|c| *c /= total);
        }
        let grid = (0..KDE_BINS).map(|i| lo + step * i as f64).collect();
        Kde1d {
            grid,
            density,
            cdf,
            bandwidth,
        }
    }

    /// `min_s f(s)/min{F(s), 1−F(s)}` and its (smallest) minimizing threshold.
    pub fn cheeger_ratio(&self) -> (f64, f64) {
        self.min_ratio(|f| f.min(1.0 - f))
    }

    /// Log-Cheeger analogue with `F log(1/F)` in the denominator.
    pub fn log_cheeger_ratio(&self) -> (f64, f64) {
        self.min_ratio(|f| {
            let g = 1.0 - f;
            (f * (1.0 / f).ln()).min(g * (1.0 / g).ln())
        })
    }

    fn min_ratio(&self, denom: impl Fn(f64) -> f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, f64::NAN);
        for i in 0..self.grid.len() {
            let f = self.cdf[i];
            if f.min(1.0 - f) < MIN_SIDE_MASS {
                continue;
            }
            let r = self.density[i] / denom(f);
            if r < best.0 {
                best = (r, self.grid[i]);
            }
        }
        best
    }
}

fn check_samples(samples: &SampleMatrix, min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::invalid(format!(
            "need at least {min} samples, got {}",
            samples.len()
        )));
    }
    Ok(())
}

fn kde_of(values: &[f64]) -> Kde1d {
    Kde1d::new(values, silverman_bandwidth(values))
}

/// Minimum over directions of the 1-D KDE halfspace ratio and of its
/// log-Cheeger analogue (`F log(1/F)` denominator), each with a bootstrap
/// standard error.
fn directional_min(samples: &SampleMatrix, directions: &[Vec<f64>]) -> Result<(Estimate, Estimate)> {
    check_samples(samples, MIN_HALFSPACE_SAMPLES)?;
    if directions.is_empty() {
        return Err(Error::invalid("direction family is empty"));
    }
    for d in directions {
        if d.len() != samples.dim() {
            return Err(Error::DimensionMismatch {
                expected: samples.dim(),
                got: d.len(),
            });
        }
    }
    let projections: Vec<Vec<f64>> = directions
        .iter()
        .map(|u| {
            let len = norm(u);
            samples.rows().map(|r| dot(r, u) / len).collect()
        })
        .collect();
    let stat = |proj: &[f64]| {
        let kde = kde_of(proj);
        (kde.cheeger_ratio().0, kde.log_cheeger_ratio().0)
    };
    let both_min = |acc: (f64, f64), v: (f64, f64)| (acc.0.min(v.0), acc.1.min(v.1));
    let value = projections
        .iter()
        .map(|p| stat(p))
        .fold((f64::INFINITY, f64::INFINITY), both_min);
    let m = samples.len();
    let mut rng = RngStream::new(BOOTSTRAP_SEED, m as u64);
    let mut boot = (Vec::with_capacity(BOOTSTRAP_REPLICATES), Vec::with_capacity(BOOTSTRAP_REPLICATES));
    let mut buf = vec![0.0; m];
    for _ in 0..BOOTSTRAP_REPLICATES {
        let idx: Vec<usize> = (0..m).map(|_| rng.index(m)).collect();
        let mut best = (f64::INFINITY, f64::INFINITY);
        for p in &projections {
            for (b, &i) in buf.iter_mut().zip(&idx) {
                *b = p[i];
            }
            best = both_min(best, stat(&buf));
        }
        boot.0.push(best.0);
        boot.1.push(best.1);
    }
    let se = |b: &[f64]| {
        let (_, var) = mean_var(b);
        (var * BOOTSTRAP_REPLICATES as f64 / (BOOTSTRAP_REPLICATES - 1) as f64).sqrt()
    };
    Ok((
        Estimate::new(value.0, se(&boot.0), m, "halfspace_kde"),
        Estimate::new(value.1, se(&boot.1), m, "log_cheeger_kde"),
    ))
}

/// Best halfspace isoperimetric ratio over `directions`.
pub fn halfspace_isoperimetry(samples: &SampleMatrix, directions: &[Vec<f64>]) -> Result<Estimate> {
    Ok(directional_min(samples, directions)?.0)
}

/// Log-Cheeger surrogate over the same halfspace family.
pub fn log_cheeger_halfspace(samples: &SampleMatrix, directions: &[Vec<f64>]) -> Result<Estimate> {
    Ok(directional_min(samples, directions)?.1)
}

/// Coordinate axes, `n` random directions and the top three eigenvectors of the
/// sample covariance.
pub fn default_directions(samples: &SampleMatrix, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    let n = samples.dim();
    let mut dirs: Vec<Vec<f64>> = (0..n).map(|i| unit(n, i)).collect();
    dirs.extend((0..n).map(|_| rng.unit_vector(n)));
    let (_, cov) = estimate_mean_cov(samples)?;
    let (_, vecs) = cov.eigen();
    for j in 0..n.min(3) {
        dirs.push(vecs.column(j).iter().cloned().collect());
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Serialize)]
pub struct SetRatio {
    pub set: TestSet,
    pub measure: f64,
    pub width: f64,
    pub ratio: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsetReport {
    /// Minimum ratio over the family at the base width.
    pub estimate: Estimate,
    pub per_set: Vec<SetRatio>,
    /// `(width, min ratio)` at `ε, ε/2, ε/4`.
    pub sensitivity: Vec<(f64, Estimate)>,
    pub warnings: Vec<String>,
}

/// Default shell width: `0.05·sqrt(tr Σ̂)`, i.e. `0.05√n` for isotropic samples.
pub fn default_shell_width(samples: &SampleMatrix) -> Result<f64> {
    let (_, cov) = estimate_mean_cov(samples)?;
    Ok(0.05 * cov.trace().sqrt())
}

const MAX_WIDENINGS: usize = 8;

fn shell_ratio(
    samples: &SampleMatrix,
    set: &TestSet,
    width: f64,
    warnings: &mut Vec<String>,
) -> Result<SetRatio> {
    let m = samples.len() as f64;
    let dists: Vec<f64> = samples.rows().map(|r| set.outside_distance(r)).collect();
    let inside = dists.iter().filter(|&&d| d <= 0.0).count() as f64 / m;
    if !(0.05..=0.95).contains(&inside) {
        return Err(Error::invalid(format!(
            "test set measure {inside:.3} is outside [0.05, 0.95]"
        )));
    }
    let mut eps = width;
    for _ in 0..=MAX_WIDENINGS {
        let shell = dists.iter().filter(|&&d| d > 0.0 && d <= eps).count() as f64 / m;
        if shell > 0.0 {
            let small = inside.min(1.0 - inside);
            let value = shell / eps / small;
            let se = (shell * (1.0 - shell) / m).sqrt() / eps / small;
            return Ok(SetRatio {
                set: set.clone(),
                measure: inside,
                width: eps,
                ratio: Estimate::new(value, se, samples.len(), "outer_shell"),
            });
        }
        let msg = format!("empty shell at width {eps:.3e} for {} set; widening", set.label());
        warn!("{msg}");
        warnings.push(msg);
        eps *= 2.0;
    }
    Err(Error::Estimation(format!(
        "shell around {} set stayed empty up to width {eps:.3e}",
        set.label()
    )))
}

/// Outer-shell estimate of `p(∂S)/min{p(S), p(Sᶜ)}` minimized over `sets`,
/// where `p(∂S) ≈ P(0 < d(X, S) ≤ ε)/ε`.
pub fn subset_isoperimetry(samples: &SampleMatrix, sets: &[TestSet], width: f64) -> Result<SubsetReport> {
    if sets.is_empty() {
        return Err(Error::invalid("test set family is empty"));
    }
    if !(width > 0.0) {
        return Err(Error::invalid("shell width must be positive"));
    }
    for s in sets {
        if s.dim() != samples.dim() {
            return Err(Error::DimensionMismatch {
                expected: samples.dim(),
                got: s.dim(),
            });
        }
    }
    let mut warnings = Vec::new();
    let mut sensitivity = Vec::new();
    let mut per_set = Vec::new();
    for (j, eps) in [width, width / 2.0, width / 4.0].into_iter().enumerate() {
        let ratios = sets
            .iter()
            .map(|s| shell_ratio(samples, s, eps, &mut warnings))
            .collect::<Result<Vec<_>>>()?;
        let best = ratios
            .iter()
            .min_by(|a, b| a.ratio.value.total_cmp(&b.ratio.value))
            .map(|r| r.ratio.clone())
            .expect("nonempty family");
        sensitivity.push((eps, best));
        if j == 0 {
            per_set = ratios;
        }
    }
    Ok(SubsetReport {
        estimate: sensitivity[0].1.clone(),
        per_set,
        sensitivity,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ThinShell {
    /// `sqrt(Var‖X − μ̂‖)`
    pub sigma: Estimate,
    /// `Var‖X − μ̂‖`
    pub variance: Estimate,
    /// `‖Σ̂ − I‖_op` of the input, warned about above 0.2.
    pub isotropy_error: f64,
}

fn isotropy_error(samples: &SampleMatrix) -> Result<(Vec<f64>, f64)> {
    let (mean, cov) = estimate_mean_cov(samples)?;
    let err = cov.op_dist(&DMatrix::identity(samples.dim(), samples.dim()));
    if err > 0.2 {
        warn!("samples are not approximately isotropic: ‖Σ̂ − I‖_op = {err:.3}");
    }
    Ok((mean, err))
}

pub fn thin_shell(samples: &SampleMatrix) -> Result<ThinShell> {
    check_samples(samples, 2)?;
    let (mean, iso) = isotropy_error(samples)?;
    let radii: Vec<f64> = samples.rows().map(|r| dist_sq(r, &mean).sqrt()).collect();
    let m = radii.len() as f64;
    let (rbar, var) = mean_var(&radii);
    let m4 = radii.iter().map(|r| (r - rbar).powi(4)).sum::<f64>() / m;
    let var_se = ((m4 - var * var).max(0.0) / m).sqrt();
    let sigma = var.sqrt();
    Ok(ThinShell {
        sigma: Estimate::new(sigma, var_se / (2.0 * sigma), radii.len(), "sd_of_norm"),
        variance: Estimate::new(var, var_se, radii.len(), "var_of_norm"),
        isotropy_error: iso,
    })
}

/// Multivariate Silverman bandwidth for a Gaussian kernel, scaled by the
/// average coordinate standard deviation.
pub fn multivariate_bandwidth(n: usize, m: usize, scale: f64) -> f64 {
    let nf = n as f64;
    (4.0 / (nf + 2.0)).powf(1.0 / (nf + 4.0)) * (m as f64).powf(-1.0 / (nf + 4.0)) * scale
}

/// `p̂(μ̂)^{1/n}` with `p̂` a Gaussian-kernel density estimate.
pub fn slicing_constant(samples: &SampleMatrix) -> Result<Estimate> {
    check_samples(samples, 2)?;
    let n = samples.dim();
    let (mean, cov) = estimate_mean_cov(samples)?;
    isotropy_error(samples)?;
    let scale = (cov.trace() / n as f64).sqrt();
    let h = multivariate_bandwidth(n, samples.len(), scale);
    let log_norm = -(n as f64) * (h.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
    let w: Vec<f64> = samples
        .rows()
        .map(|r| (log_norm - 0.5 * dist_sq(r, &mean) / (h * h)).exp())
        .collect();
    let est = Estimate::mean_of(&w, "kde_at_mean");
    if !(est.value > 0.0) {
        return Err(Error::Estimation("kernel density at the mean is zero".into()));
    }
    let inv_n = 1.0 / n as f64;
    let value = est.value.powf(inv_n);
    let se = inv_n * value / est.value * est.std_error;
    Ok(Estimate::new(value, se, samples.len(), "kde_at_mean"))
}

/// Test functions with analytic gradients for the Poincaré ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `u·x`
    Linear(Vec<f64>),
    /// `xᵀMx` for symmetric `M`.
    Quadratic(DMatrix<f64>),
    /// `‖x‖`
    Norm,
    /// `x_i·x_j`
    CoordinateProduct(usize, usize),
}

impl TestFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Linear(u) => dot(u, x),
            TestFunction::Quadratic(m) => dot(x, &crate::linalg::mat_vec(m, x)),
            TestFunction::Norm => norm(x),
            TestFunction::CoordinateProduct(i, j) => x[*i] * x[*j],
        }
    }

    pub fn grad_norm_sq(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Linear(u) => dot(u, u),
            TestFunction::Quadratic(m) => 4.0 * crate::linalg::norm_sq(&crate::linalg::mat_vec(m, x)),
            TestFunction::Norm => {
                if norm(x) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::CoordinateProduct(i, j) if i == j => 4.0 * x[*i] * x[*i],
            TestFunction::CoordinateProduct(i, j) => x[*i] * x[*i] + x[*j] * x[*j],
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Linear(_) => "linear".into(),
            TestFunction::Quadratic(_) => "quadratic".into(),
            TestFunction::Norm => "norm".into(),
            TestFunction::CoordinateProduct(i, j) => format!("x{}x{}", i + 1, j + 1),
        }
    }

    /// Lipschitz constant, where finite.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            TestFunction::Linear(u) => Some(norm(u)),
            TestFunction::Norm => Some(1.0),
            _ => None,
        }
    }
}

fn poincare_on(values: &[f64], grads: &[f64]) -> f64 {
    let (_, var) = mean_var(values);
    grads.iter().sum::<f64>() / grads.len() as f64 / var
}

/// `Ê‖∇g‖² / Var̂ g`, with a batch-means standard error.
pub fn poincare_ratio(samples: &SampleMatrix, g: &TestFunction) -> Result<Estimate> {
    check_samples(samples, 2 * DEFAULT_BATCHES)?;
    let values: Vec<f64> = samples.rows().map(|r| g.value(r)).collect();
    let grads: Vec<f64> = samples.rows().map(|r| g.grad_norm_sq(r)).collect();
    let (mean, var) = mean_var(&values);
    if !(var > 1e-12 * (1.0 + mean * mean)) {
        return Err(Error::invalid(format!(
            "test function {} has zero variance on the samples",
            g.label()
        )));
    }
    let value = poincare_on(&values, &grads);
    let se = batch_se(values.len(), DEFAULT_BATCHES, |r| {
        poincare_on(&values[r.clone()], &grads[r])
    });
    Ok(Estimate::new(value, se, values.len(), "poincare_ratio"))
}

/// Built-in test-function family: each coordinate, each coordinate squared,
/// the norm and the product of the first two coordinates.
pub fn default_test_functions(n: usize) -> Vec<TestFunction> {
    let mut out: Vec<TestFunction> = (0..n).map(|i| TestFunction::Linear(unit(n, i))).collect();
    out.extend((0..n).map(|i| TestFunction::CoordinateProduct(i, i)));
    out.push(TestFunction::Norm);
    if n >= 2 {
        out.push(TestFunction::CoordinateProduct(0, 1));
    }
    out
}

/// `√M·(1 − φ²/2)^t`.
pub fn conductance_tv_bound(phi: f64, warmness: f64, t: u64) -> Result<f64> {
    check_mixing_params(phi, warmness)?;
    Ok(warmness.sqrt() * (1.0 - 0.5 * phi * phi).powf(t as f64))
}

/// `(1/φ, log(M)/φ²)` with all universal constants set to one.
pub fn mixing_bounds(phi: f64, warmness: f64) -> Result<(f64, f64)> {
    check_mixing_params(phi, warmness)?;
    Ok((1.0 / phi, warmness.ln() / (phi * phi)))
}

/// Smallest `t` of the form `⌈2 log(√M/ε)/φ²⌉` guaranteeing TV ≤ ε.
pub fn steps_for_tv(phi: f64, warmness: f64, eps: f64) -> Result<u64> {
    check_mixing_params(phi, warmness)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("ε must lie in (0, 1)"));
    }
    Ok((2.0 * (warmness.sqrt() / eps).ln() / (phi * phi)).ceil().max(0.0) as u64)
}

fn check_mixing_params(phi: f64, warmness: f64) -> Result<()> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::invalid(format!("conductance φ = {phi} must lie in (0, 1]")));
    }
    if !(warmness >= 1.0 && warmness.is_finite()) {
        return Err(Error::invalid(format!("warmness M = {warmness} must be at least 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub t: f64,
    pub empirical: f64,
    pub se: f64,
    pub envelope: f64,
    pub violation: bool,
}

/// Empirical `P(|g − median g| ≥ t)` against `exp(−t²/(t + √n))`, flagging rows
/// where the empirical tail exceeds the envelope by more than 3 standard errors.
pub fn lipschitz_tail_check(samples: &SampleMatrix, g: &TestFunction, ts: &[f64]) -> Result<Vec<TailRow>> {
    check_samples(samples, 2)?;
    if let Some(l) = g.lipschitz() {
        if l > 1.0 + 1e-9 {
            return Err(Error::invalid("test function must be 1-Lipschitz"));
        }
    } else {
        return Err(Error::invalid(format!("{} is not Lipschitz", g.label())));
    }
    let values: Vec<f64> = samples.rows().map(|r| g.value(r)).collect();
    let med = quantile(&values, 0.5);
    let m = values.len() as f64;
    let sqrt_n = (samples.dim() as f64).sqrt();
    Ok(ts
        .iter()
        .map(|&t| {
            let p = values.iter().filter(|v| (*v - med).abs() >= t).count() as f64 / m;
            let se = (p * (1.0 - p) / m).sqrt();
            let envelope = if t + sqrt_n > 0.0 { (-t * t / (t + sqrt_n)).exp() } else { 1.0 };
            TailRow {
                t,
                empirical: p,
                se,
                envelope,
                violation: p > envelope + 3.0 * se,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub psi_halfspace: Estimate,
    pub sigma_thin_shell: Estimate,
    pub thin_shell_variance: Estimate,
    pub l_slicing: Estimate,
    pub zeta_poincare: Estimate,
    pub psi_squared: f64,
    pub kappa_log_cheeger: Estimate,
    /// `σ̂·ψ̂`, which should stay bounded.
    pub sigma_psi_product: f64,
    pub isotropy_error: f64,
    pub poincare_minimizer: String,
}

/// All constants over the default direction and test-function families.
pub fn constants_report(samples: &SampleMatrix, rng: &mut RngStream) -> Result<ConstantsReport> {
    let dirs = default_directions(samples, rng)?;
    let (psi, kappa) = directional_min(samples, &dirs)?;
    let shell = thin_shell(samples)?;
    let slicing = slicing_constant(samples)?;
    let mut zeta: Option<(Estimate, String)> = None;
    for g in default_test_functions(samples.dim()) {
        let est = match poincare_ratio(samples, &g) {
            Ok(e) => e,
            Err(e) if e.is_input_error() => continue,
            Err(e) => return Err(e),
        };
        if zeta.as_ref().is_none_or(|(z, _)| est.value < z.value) {
            zeta = Some((est, g.label()));
        }
    }
    let (zeta, minimizer) =
        zeta.ok_or_else(|| Error::Estimation("every Poincaré test function was degenerate".into()))?;
    Ok(ConstantsReport {
        psi_squared: psi.value * psi.value,
        sigma_psi_product: shell.sigma.value * psi.value,
        psi_halfspace: psi,
        sigma_thin_shell: shell.sigma,
        thin_shell_variance: shell.variance,
        l_slicing: slicing,
        zeta_poincare: zeta,
        kappa_log_cheeger: kappa,
        isotropy_error: shell.isotropy_error,
        poincare_minimizer: minimizer,
    })
}

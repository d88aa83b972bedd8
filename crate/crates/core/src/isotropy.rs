//! Mean/covariance estimation, rounding maps and the iterated Gaussian
//! isotropy procedure.

use std::io::{self, Write};

use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::body::Body;
use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::linalg::{mat_vec, AffineMap, CovMatrix};
use crate::rng::RngStream;
use crate::samples::{fmt_float, SampleMatrix};
use crate::walks::{default_delta, run_chain, warm_start, ChainState, WalkKind};

/// Sample mean and the `1/m`-normalized covariance about it.
pub fn estimate_mean_cov(samples: &SampleMatrix) -> Result<(Vec<f64>, CovMatrix)> {
    let n = samples.dim();
    let m = samples.len();
    if m == 0 {
        return Err(Error::invalid("cannot estimate a covariance from zero samples"));
    }
    if m <= n {
        warn!("{m} samples in dimension {n}: the covariance estimate is singular");
    }
    let mut mean = vec![0.0; n];
    for r in samples.rows() {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut cov = DMatrix::zeros(n, n);
    let mut d = vec![0.0; n];
    for r in samples.rows() {
        for i in 0..n {
            d[i] = r[i] - mean[i];
        }
        for j in 0..n {
            let dj = d[j];
            for i in j..n {
                cov[(i, j)] += d[i] * dj;
            }
        }
    }
    for j in 0..n {
        for i in j..n {
            let v = cov[(i, j)] / m as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, CovMatrix::new(cov)?))
}

/// `T(x) = A^{−1/2}(x − μ)`.
pub fn rounding_transform(mean: &[f64], cov: &CovMatrix) -> Result<AffineMap> {
    if mean.len() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            got: mean.len(),
        });
    }
    let w = cov.inv_sqrt()?;
    let shift: Vec<f64> = mat_vec(&w, mean).into_iter().map(|v| -v).collect();
    AffineMap::new(w, shift)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotropyConfig {
    pub max_iters: usize,
    /// Stop once every eigenvalue lies in `[eig_lo, eig_hi]`.
    pub eig_lo: f64,
    pub eig_hi: f64,
    /// `None` means `400·n`, enough for a relative covariance error near 0.15.
    pub samples_per_iter: Option<usize>,
    pub walk: WalkKind,
    /// `None` means `n`.
    pub thin: Option<usize>,
}

impl Default for IsotropyConfig {
    fn default() -> Self {
        IsotropyConfig {
            max_iters: 20,
            eig_lo: 0.5,
            eig_hi: 2.0,
            samples_per_iter: None,
            walk: WalkKind::MetropolisBall,
            thin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotropyLogRow {
    pub iter: usize,
    pub min_eig: f64,
    pub max_eig: f64,
    pub samples_used: usize,
}

#[derive(Debug, Clone)]
pub struct IsotropyOutcome {
    /// Map taking the input body to its final position.
    pub map: AffineMap,
    pub log: Vec<IsotropyLogRow>,
    pub converged: bool,
}

/// Repeatedly samples the standard Gaussian restricted to the current image of
/// `body`, and rounds by the estimated covariance until its spectrum lies in
/// `[eig_lo, eig_hi]`.
pub fn iterated_gaussian_isotropy(
    body: &Body,
    cfg: &IsotropyConfig,
    rng: &mut RngStream,
) -> Result<IsotropyOutcome> {
    if !(cfg.eig_lo > 0.0 && cfg.eig_hi >= cfg.eig_lo) {
        return Err(Error::invalid("isotropy thresholds need 0 < eig_lo ≤ eig_hi"));
    }
    let n = body.dim();
    let m = cfg.samples_per_iter.unwrap_or(400 * n);
    let thin = cfg.thin.unwrap_or(n).max(1);
    let mut map = AffineMap::identity(n);
    let mut log = Vec::new();
    let mut used = 0;
    for iter in 0..cfg.max_iters {
        let current = body.transform(&map)?;
        let density = DensitySpec::gaussian(current, vec![0.0; n], 1.0)?;
        let delta = default_delta(n);
        let x0 = warm_start(&density, cfg.walk, delta, rng)?;
        let mut state = ChainState::new(x0, cfg.walk, delta);
        let samples = run_chain(&density, &mut state, 0, m, thin, rng)?;
        used += m * thin;
        let (mean, cov) = estimate_mean_cov(&samples)?;
        let eig = cov.eigenvalues();
        let (max_eig, min_eig) = (eig[0], eig[n - 1]);
        log.push(IsotropyLogRow {
            iter,
            min_eig,
            max_eig,
            samples_used: used,
        });
        if min_eig >= cfg.eig_lo && max_eig <= cfg.eig_hi {
            return Ok(IsotropyOutcome {
                map,
                log,
                converged: true,
            });
        }
        map = rounding_transform(&mean, &cov)?.compose(&map);
    }
    Ok(IsotropyOutcome {
        map,
        log,
        converged: false,
    })
}

pub fn write_isotropy_log<W: Write>(rows: &[IsotropyLogRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "iter,min_eig,max_eig,samples_used")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.iter,
            fmt_float(r.min_eig),
            fmt_float(r.max_eig),
            r.samples_used
        )?;
    }
    Ok(())
}

//! Discrete-time stochastic localization.
//!
//! The localized density `p_t(x) ∝ exp(c_t·x − ½xᵀB_t x)·p(x)` is represented
//! exactly as a tilt of the base density; its mean and covariance are
//! re-estimated after every Euler–Maruyama step from an inner chain that is
//! warm-started at the previous step's last point.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{DensityKind, DensitySpec, Quadratic};
use crate::diagnostics::TestSet;
use crate::error::{Error, Result};
use crate::estimate::{mean_var, quantile, Estimate};
use crate::isotropy::estimate_mean_cov;
use crate::linalg::{axpy, dist_sq, dot, mat_vec, norm, norm_sq, sym_eigen, CovMatrix};
use crate::rng::RngStream;
use crate::samples::{fmt_float, SampleMatrix};
use crate::special::normal_cdf;
use crate::walks::{default_delta, run_chain, warm_start, ChainState, WalkKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Identity,
    InverseSqrtCov,
}

/// `2⌈ln n⌉`, at least 2.
pub fn default_q(n: usize) -> u32 {
    (2.0 * (n as f64).ln().ceil()).max(2.0) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackedSet {
    pub set: TestSet,
    pub g: f64,
    pub se: f64,
}

#[derive(Debug, Clone)]
pub struct LocalizationState {
    pub t: f64,
    pub tilt: Vec<f64>,
    pub control: Control,
    /// Accumulated quadratic; for identity control this is `t·I` exactly.
    pub quad: Quadratic,
    pub base: DensitySpec,
    pub mean: Vec<f64>,
    pub cov: CovMatrix,
    pub phi: f64,
    pub phi_q: f64,
    pub q: u32,
    pub u: f64,
    pub sets: Vec<TrackedSet>,
    pub accept_rate: f64,
    /// Inner-chain position, reused as the next warm start.
    pub x: Vec<f64>,
    pub k: usize,
    pub thin: usize,
    pub closed_form: bool,
    t_anchor: f64,
    h_run: f64,
    steps_in_run: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SlocOptions {
    /// Inner samples per refresh; `None` means `64·n`.
    pub k: Option<usize>,
    /// Inner steps per recorded sample; `None` means `n`.
    pub thin: Option<usize>,
    /// `None` means `2⌈ln n⌉`.
    pub q: Option<u32>,
    pub control: Control,
    /// Use the analytic mean/covariance of a Gaussian base instead of sampling.
    pub closed_form: bool,
}

impl Default for SlocOptions {
    fn default() -> Self {
        SlocOptions {
            k: None,
            thin: None,
            q: None,
            control: Control::Identity,
            closed_form: false,
        }
    }
}

/// `(mean, cov)` of `p_t` for a standard Gaussian base under identity control:
/// `N(c/(1+t), I/(1+t))`.
pub fn sloc_closed_form(t: f64, c: &[f64]) -> Result<(Vec<f64>, CovMatrix)> {
    if !(t >= 0.0) {
        return Err(Error::invalid("time must be nonnegative"));
    }
    let s = 1.0 / (1.0 + t);
    Ok((c.iter().map(|v| v * s).collect(), CovMatrix::scaled_identity(c.len(), s)))
}

/// Closed form for a Gaussian base `exp(−(a/2)‖x − m‖²)` tilted by `(c, B)`:
/// precision `aI + B`, mean `(aI + B)⁻¹(a·m + c)`.
fn gaussian_tilt_moments(a: f64, center: &[f64], tilt: &[f64], quad: &Quadratic) -> Result<(Vec<f64>, CovMatrix)> {
    let n = tilt.len();
    let mut prec = DMatrix::identity(n, n) * a;
    match quad {
        Quadratic::Scalar(t) => prec += DMatrix::identity(n, n) * *t,
        Quadratic::Matrix(b) => prec += b,
    }
    let cov = CovMatrix::new(prec)?.inverse()?;
    let rhs: Vec<f64> = center.iter().zip(tilt).map(|(m, c)| a * m + c).collect();
    let mean = mat_vec(&cov, &rhs);
    Ok((mean, CovMatrix::new(cov)?))
}

fn gaussian_base(base: &DensitySpec) -> Option<(f64, Vec<f64>)> {
    match base.kind() {
        DensityKind::Gaussian { center, a } if *a > 0.0 => Some((*a, center.clone())),
        _ => None,
    }
}

/// The unique `u > λ_max(A)` with `tr((uI − A)^{−2}) = n`: bisection on
/// `[λ_max + 1/√n, λ_max + 1]` (where the left side is ≥ n and ≤ n
/// respectively), then Newton to `1e-10`.
pub fn stieltjes_potential(a: &CovMatrix) -> f64 {
    let eig = a.eigenvalues();
    let n = eig.len() as f64;
    let lmax = eig[0];
    let f = |u: f64| eig.iter().map(|l| (u - l).powi(-2)).sum::<f64>() - n;
    let df = |u: f64| -2.0 * eig.iter().map(|l| (u - l).powi(-3)).sum::<f64>();
    let (mut lo, mut hi) = (lmax + 1.0 / n.sqrt(), lmax + 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..50 {
        let next = u - f(u) / df(u);
        if !(next > lmax) {
            break;
        }
        let done = (next - u).abs() <= 1e-15 * next.abs().max(1.0);
        u = next;
        if done {
            break;
        }
    }
    u
}

impl LocalizationState {
    fn density(&self) -> Result<DensitySpec> {
        self.base.tilted_with(self.tilt.clone(), self.quad.clone())
    }

    /// Re-estimates every observable of `p_t`.
    fn refresh(&mut self, rng: &mut RngStream) -> Result<()> {
        let n = self.base.dim();
        if self.closed_form {
            let (a, center) = gaussian_base(&self.base).expect("checked at init");
            let (mean, cov) = gaussian_tilt_moments(a, &center, &self.tilt, &self.quad)?;
            let root = cov.sqrt();
            let draws: Vec<Vec<f64>> = (0..self.k)
                .map(|_| {
                    let mut x = mat_vec(&root, &rng.normal_vec(n));
                    axpy(1.0, &mean, &mut x);
                    x
                })
                .collect();
            for s in &mut self.sets {
                match &s.set {
                    TestSet::Halfspace { normal, offset } => {
                        let sd = cov.quad_form(normal).sqrt();
                        s.g = normal_cdf((offset - dot(normal, &mean)) / sd);
                        s.se = 0.0;
                    }
                    other => {
                        let flags: Vec<f64> = draws.iter().map(|x| indicator(other, x)).collect();
                        let e = Estimate::mean_of(&flags, "exact_gaussian");
                        s.g = e.value;
                        s.se = e.std_error;
                    }
                }
            }
            self.mean = mean;
            self.cov = cov;
            self.accept_rate = 1.0;
        } else {
            let density = self.density()?;
            let mut chain = ChainState::new(self.x.clone(), WalkKind::HitAndRun, default_delta(n));
            let samples = run_chain(&density, &mut chain, 0, self.k, self.thin, rng)?;
            let (mean, cov) = estimate_mean_cov(&samples)?;
            for s in &mut self.sets {
                let flags: Vec<f64> = samples.rows().map(|x| indicator(&s.set, x)).collect();
                let e = Estimate::batch_mean_of(&flags, crate::estimate::DEFAULT_BATCHES, "inner_chain");
                s.g = e.value;
                s.se = e.std_error;
            }
            self.x = chain.x.clone();
            self.accept_rate = chain.acceptance_rate();
            self.mean = mean;
            self.cov = cov;
        }
        self.phi = self.cov.trace_sq();
        self.phi_q = self.cov.trace_pow(self.q as f64);
        self.u = stieltjes_potential(&self.cov);
        Ok(())
    }

    /// Random-matrix scale `‖Â‖_op·sqrt(n/k)` of the covariance estimation error.
    pub fn cov_se(&self) -> f64 {
        if self.closed_form {
            0.0
        } else {
            self.cov.op_norm() * (self.base.dim() as f64 / self.k as f64).sqrt()
        }
    }

    fn advance_time(&mut self, h: f64) {
        if h != self.h_run {
            self.t_anchor = self.t;
            self.h_run = h;
            self.steps_in_run = 0;
        }
        self.steps_in_run += 1;
        self.t = self.t_anchor + self.steps_in_run as f64 * h;
    }
}

fn indicator(set: &TestSet, x: &[f64]) -> f64 {
    if set.contains(x) {
        1.0
    } else {
        0.0
    }
}

/// `t = 0, c = 0, B = 0` with observables estimated from `k` samples of the base.
pub fn sloc_init(
    base: &DensitySpec,
    sets: &[TestSet],
    opts: &SlocOptions,
    rng: &mut RngStream,
) -> Result<LocalizationState> {
    let n = base.dim();
    for s in sets {
        if s.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.dim(),
            });
        }
    }
    if opts.closed_form && gaussian_base(base).is_none() {
        return Err(Error::invalid("closed-form mode needs a Gaussian base density"));
    }
    let k = opts.k.unwrap_or(64 * n);
    if k < 2 * crate::estimate::DEFAULT_BATCHES {
        return Err(Error::invalid(format!(
            "k = {k} is too small; need at least {}",
            2 * crate::estimate::DEFAULT_BATCHES
        )));
    }
    let x = warm_start(base, WalkKind::HitAndRun, default_delta(n), rng)?;
    let quad = match opts.control {
        Control::Identity => Quadratic::Scalar(0.0),
        Control::InverseSqrtCov => Quadratic::Matrix(DMatrix::zeros(n, n)),
    };
    let mut state = LocalizationState {
        t: 0.0,
        tilt: vec![0.0; n],
        control: opts.control,
        quad,
        base: base.clone(),
        mean: vec![0.0; n],
        cov: CovMatrix::identity(n),
        phi: 0.0,
        phi_q: 0.0,
        q: opts.q.unwrap_or_else(|| default_q(n)),
        u: 0.0,
        sets: sets
            .iter()
            .map(|s| TrackedSet {
                set: s.clone(),
                g: f64::NAN,
                se: f64::NAN,
            })
            .collect(),
        accept_rate: 0.0,
        x,
        k,
        thin: opts.thin.unwrap_or(n).max(1),
        closed_form: opts.closed_form,
        t_anchor: 0.0,
        h_run: 0.0,
        steps_in_run: 0,
    };
    if !state.closed_form {
        // a short burn-in on top of the warm start
        let mut chain = ChainState::new(state.x.clone(), WalkKind::HitAndRun, default_delta(n));
        run_chain(base, &mut chain, 10 * n * state.thin, 0, 1, rng)?;
        state.x = chain.x;
    }
    state.refresh(rng)?;
    for s in &state.sets {
        if !(0.25..=0.75).contains(&s.g) {
            return Err(Error::invalid(format!(
                "tracked {} set has measure {:.3}, outside [0.25, 0.75]",
                s.set.label(),
                s.g
            )));
        }
    }
    Ok(state)
}

/// One Euler–Maruyama step with Gaussian noise from `rng`.
pub fn sloc_step(state: &mut LocalizationState, h: f64, rng: &mut RngStream) -> Result<()> {
    let g = rng.normal_vec(state.base.dim());
    sloc_step_with_noise(state, h, &g, rng)
}

/// One Euler–Maruyama step driven by the supplied standard-normal increment
/// `g` (zero gives the deterministic drift alone).
pub fn sloc_step_with_noise(state: &mut LocalizationState, h: f64, g: &[f64], rng: &mut RngStream) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::invalid("step size h must be positive"));
    }
    let n = state.base.dim();
    if g.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.len(),
        });
    }
    let sh = h.sqrt();
    match state.control {
        Control::Identity => {
            for i in 0..n {
                state.tilt[i] += sh * g[i] + h * state.mean[i];
            }
            state.advance_time(h);
            state.quad = Quadratic::Scalar(state.t);
        }
        Control::InverseSqrtCov => {
            let hint = |e: Error| match e {
                Error::Singular { min_eigenvalue, .. } => Error::Estimation(format!(
                    "covariance estimate is singular (min eigenvalue {min_eigenvalue:.3e}); increase k"
                )),
                other => other,
            };
            let isq = state.cov.inv_sqrt().map_err(hint)?;
            let inv = state.cov.inverse().map_err(hint)?;
            let noise = mat_vec(&isq, g);
            let drift = mat_vec(&inv, &state.mean);
            for i in 0..n {
                state.tilt[i] += sh * noise[i] + h * drift[i];
            }
            if let Quadratic::Matrix(b) = &mut state.quad {
                *b += inv * h;
            }
            state.advance_time(h);
        }
    }
    state.refresh(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub run: usize,
    pub t: f64,
    pub phi: f64,
    pub phi_q: f64,
    pub opnorm: f64,
    pub u: f64,
    pub g: Vec<f64>,
    pub accept_rate: f64,
    /// Estimated covariance, row-major (not written to CSV).
    #[serde(skip)]
    pub cov: Vec<f64>,
    #[serde(skip)]
    pub cov_se: f64,
}

impl TrajectoryRecord {
    fn of(run: usize, s: &LocalizationState) -> Self {
        TrajectoryRecord {
            run,
            t: s.t,
            phi: s.phi,
            phi_q: s.phi_q,
            opnorm: s.cov.op_norm(),
            u: s.u,
            g: s.sets.iter().map(|x| x.g).collect(),
            accept_rate: s.accept_rate,
            cov: s.cov.matrix().iter().cloned().collect(),
            cov_se: s.cov_se(),
        }
    }
}

/// Stopping time: absolute, or `c/√Φ_0` with `Φ_0` from a pilot estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Absolute(f64),
    PotentialScaled(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SlocConfig {
    pub horizon: Horizon,
    /// `None` means `min(0.01, 0.1/√Φ_0)`.
    pub h: Option<f64>,
    /// When set, `h = T/steps` (overrides `h`).
    pub steps: Option<usize>,
    pub n_runs: usize,
    /// `None` means `max(1, ⌊T/(100h)⌋)`.
    pub record_every: Option<usize>,
    pub options: SlocOptions,
}

impl Default for SlocConfig {
    fn default() -> Self {
        SlocConfig {
            horizon: Horizon::Absolute(1.0),
            h: None,
            steps: None,
            n_runs: 10,
            record_every: None,
            options: SlocOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub label: String,
    pub g0_mean: f64,
    pub g_t_mean: f64,
    /// `sqrt(se(g_0)² + se(g_T)²)` across runs.
    pub combined_se: f64,
    pub martingale_ok: bool,
    /// Fraction of runs with `g_t ∈ [¼, ¾]` at every recorded time.
    pub balance_frequency: f64,
    /// Largest `|mean g_t − mean g_0|/combined se` over recorded times.
    pub max_drift_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlocSummary {
    pub t_end: f64,
    pub h: f64,
    pub steps: usize,
    pub record_every: usize,
    pub phi0_mean: f64,
    pub sets: Vec<SetSummary>,
    /// 10%, 50% and 90% quantiles of `Φ_T/Φ_0` across runs.
    pub phi_growth_quantiles: [f64; 3],
    /// Across-run mean of `Φ_q` at each recorded time.
    pub phi_q_mean: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SlocOutput {
    pub records: Vec<TrajectoryRecord>,
    pub summary: SlocSummary,
}

fn single_run(
    base: &DensitySpec,
    sets: &[TestSet],
    opts: &SlocOptions,
    steps: usize,
    h: f64,
    record_every: usize,
    run: usize,
    mut rng: RngStream,
) -> Result<Vec<TrajectoryRecord>> {
    let mut state = sloc_init(base, sets, opts, &mut rng)?;
    let mut out = vec![TrajectoryRecord::of(run, &state)];
    for i in 1..=steps {
        sloc_step(&mut state, h, &mut rng)?;
        if i % record_every == 0 || i == steps {
            out.push(TrajectoryRecord::of(run, &state));
        }
    }
    Ok(out)
}

/// Runs `n_runs` independent trajectories (in parallel, each on its own
/// stream) and summarizes them.
pub fn sloc_run(base: &DensitySpec, sets: &[TestSet], cfg: &SlocConfig, rng: &mut RngStream) -> Result<SlocOutput> {
    if cfg.n_runs == 0 {
        return Err(Error::invalid("n_runs must be positive"));
    }
    if cfg.steps == Some(0) {
        return Err(Error::invalid("steps must be positive"));
    }
    let needs_pilot = (cfg.h.is_none() && cfg.steps.is_none()) || matches!(cfg.horizon, Horizon::PotentialScaled(_));
    let phi0 = if needs_pilot {
        let mut pilot_rng = rng.fork(u64::MAX);
        sloc_init(base, sets, &cfg.options, &mut pilot_rng)?.phi
    } else {
        f64::NAN
    };
    let t_end = match cfg.horizon {
        Horizon::Absolute(t) => t,
        Horizon::PotentialScaled(c) => c / phi0.sqrt(),
    };
    if !(t_end > 0.0) {
        return Err(Error::invalid("horizon T must be positive"));
    }
    let h = match cfg.steps {
        Some(s) => t_end / s as f64,
        None => cfg.h.unwrap_or_else(|| 0.01f64.min(0.1 / phi0.sqrt())),
    };
    if !(h > 0.0 && h <= t_end) {
        return Err(Error::invalid(format!("step size h = {h} must lie in (0, T = {t_end}]")));
    }
    let steps = (t_end / h).round().max(1.0) as usize;
    let record_every = cfg
        .record_every
        .unwrap_or_else(|| ((t_end / (100.0 * h)).floor() as usize).max(1))
        .max(1);
    let per_run = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| single_run(base, sets, &cfg.options, steps, h, record_every, run, rng.fork(run as u64)))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&per_run, sets, t_end, h, steps, record_every);
    Ok(SlocOutput {
        records: per_run.into_iter().flatten().collect(),
        summary,
    })
}

fn summarize(
    runs: &[Vec<TrajectoryRecord>],
    sets: &[TestSet],
    t_end: f64,
    h: f64,
    steps: usize,
    record_every: usize,
) -> SlocSummary {
    let r = runs.len() as f64;
    let n_rec = runs[0].len();
    let mean_se = |vals: &[f64]| {
        let (m, v) = mean_var(vals);
        let se = if vals.len() > 1 { (v / (r - 1.0)).sqrt() } else { f64::NAN };
        (m, se)
    };
    let set_summaries = sets
        .iter()
        .enumerate()
        .map(|(j, set)| {
            let at = |i: usize| -> Vec<f64> { runs.iter().map(|run| run[i].g[j]).collect() };
            let (g0, se0) = mean_se(&at(0));
            let mut max_z: f64 = 0.0;
            let mut last = (g0, se0);
            for i in 1..n_rec {
                let (gi, sei) = mean_se(&at(i));
                let comb = (se0 * se0 + sei * sei).sqrt();
                if comb > 0.0 {
                    max_z = max_z.max((gi - g0).abs() / comb);
                }
                last = (gi, sei);
            }
            let combined = (se0 * se0 + last.1 * last.1).sqrt();
            let balanced = runs
                .iter()
                .filter(|run| run.iter().all(|rec| (0.25..=0.75).contains(&rec.g[j])))
                .count() as f64;
            SetSummary {
                label: set.label(),
                g0_mean: g0,
                g_t_mean: last.0,
                combined_se: combined,
                martingale_ok: (last.0 - g0).abs() <= 3.0 * combined,
                balance_frequency: balanced / r,
                max_drift_z: max_z,
            }
        })
        .collect();
    let growth: Vec<f64> = runs.iter().map(|run| run[n_rec - 1].phi / run[0].phi).collect();
    let phi_q_mean = (0..n_rec)
        .map(|i| {
            let t = runs[0][i].t;
            (t, runs.iter().map(|run| run[i].phi_q).sum::<f64>() / r)
        })
        .collect();
    SlocSummary {
        t_end,
        h,
        steps,
        record_every,
        phi0_mean: runs.iter().map(|run| run[0].phi).sum::<f64>() / r,
        sets: set_summaries,
        phi_growth_quantiles: [quantile(&growth, 0.1), quantile(&growth, 0.5), quantile(&growth, 0.9)],
        phi_q_mean,
    }
}

/// Column names of the trajectory CSV, with `g_<set>` per tracked set.
pub fn trajectory_header(sets: &[TestSet]) -> Vec<String> {
    let mut cols: Vec<String> = ["run", "t", "phi", "phi_q", "opnorm", "u"].iter().map(|s| s.to_string()).collect();
    let labels: Vec<String> = sets.iter().map(|s| s.label()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels.iter().filter(|m| *m == l).count() > 1 {
            cols.push(format!("g_{l}{}", i + 1));
        } else {
            cols.push(format!("g_{l}"));
        }
    }
    cols.push("accept_rate".into());
    cols
}

pub fn write_trajectories<W: Write>(records: &[TrajectoryRecord], sets: &[TestSet], w: &mut W) -> io::Result<()> {
    writeln!(w, "{}", trajectory_header(sets).join(","))?;
    for r in records {
        let mut line = vec![
            r.run.to_string(),
            fmt_float(r.t),
            fmt_float(r.phi),
            fmt_float(r.phi_q),
            fmt_float(r.opnorm),
            fmt_float(r.u),
        ];
        line.extend(r.g.iter().map(|v| fmt_float(*v)));
        line.push(fmt_float(r.accept_rate));
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub k: u32,
    /// (i) `E‖x‖^k` against `(2k)^k (E‖x‖²)^{k/2}`.
    pub norm_moment: f64,
    pub norm_moment_bound: f64,
    /// `E‖x‖^k / (E‖x‖²)^{k/2}`, to be compared with `(2k)^k`.
    pub norm_moment_constant: f64,
    pub norm_moment_ok: bool,
    /// (ii) `E|⟨x−μ, y−μ⟩|³ / tr(A²)^{3/2}` for independent `x, y`.
    pub inner_product_constant: f64,
    /// (iii) `‖E (x−μ)(x−μ)ᵀA(x−μ)‖ / (‖A‖_op^{1/2} tr(A²))`.
    pub third_moment_constant: f64,
    /// The same with `‖v̂‖` replaced by `‖v̂‖ + 3·se`; stable even when the
    /// vector vanishes, as it does for symmetric laws.
    pub third_moment_constant_upper: f64,
    pub third_moment_se: f64,
}

/// Number of cyclic shifts used to pair samples for the two-point moment.
const PAIR_SHIFTS: usize = 16;

/// Empirical versions of the moment inequalities for logconcave laws.
pub fn moment_inequality_check(samples: &SampleMatrix, k: u32) -> Result<MomentReport> {
    if !(3..=4).contains(&k) {
        return Err(Error::invalid("moment order k must be 3 or 4"));
    }
    let m = samples.len();
    if m < 2 * PAIR_SHIFTS {
        return Err(Error::invalid(format!("need at least {} samples", 2 * PAIR_SHIFTS)));
    }
    let (mu, cov) = estimate_mean_cov(samples)?;
    let mf = m as f64;
    let norms_sq: Vec<f64> = samples.rows().map(norm_sq).collect();
    let second = norms_sq.iter().sum::<f64>() / mf;
    let kth = norms_sq.iter().map(|s| s.powf(k as f64 / 2.0)).sum::<f64>() / mf;
    let bound = (2.0 * k as f64).powi(k as i32) * second.powf(k as f64 / 2.0);

    let centered: Vec<Vec<f64>> = samples
        .rows()
        .map(|x| x.iter().zip(&mu).map(|(a, b)| a - b).collect())
        .collect();
    let mut pair_sum = 0.0;
    for s in 1..=PAIR_SHIFTS {
        for i in 0..m {
            pair_sum += dot(&centered[i], &centered[(i + s) % m]).abs().powi(3);
        }
    }
    let pair_mean = pair_sum / (mf * PAIR_SHIFTS as f64);
    let tr2 = cov.trace_sq();

    let n = samples.dim();
    let a = cov.matrix();
    let w: Vec<Vec<f64>> = centered
        .iter()
        .map(|d| {
            let q = dot(d, &mat_vec(a, d));
            d.iter().map(|v| v * q).collect()
        })
        .collect();
    let mut v = vec![0.0; n];
    let mut var = vec![0.0; n];
    for j in 0..n {
        let col: Vec<f64> = w.iter().map(|r| r[j]).collect();
        let (mean, vv) = mean_var(&col);
        v[j] = mean;
        var[j] = vv / mf;
    }
    let se = var.iter().sum::<f64>().sqrt();
    let scale = cov.op_norm().sqrt() * tr2;
    Ok(MomentReport {
        k,
        norm_moment: kth,
        norm_moment_bound: bound,
        norm_moment_constant: kth / second.powf(k as f64 / 2.0),
        norm_moment_ok: kth <= bound,
        inner_product_constant: pair_mean / tr2.powf(1.5),
        third_moment_constant: norm(&v) / scale,
        third_moment_constant_upper: (norm(&v) + 3.0 * se) / scale,
        third_moment_se: se / scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleCell {
    pub cell_id: usize,
    pub depth: usize,
    pub weight: f64,
    pub max_variance: f64,
    pub second_variance: f64,
    pub rel_measure: f64,
    /// The split of this cell was skipped because no balanced cut was found.
    pub split_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct NeedleConfig {
    pub eps: f64,
    pub max_depth: usize,
    pub k: usize,
    /// `None` means `n`.
    pub thin: Option<usize>,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        NeedleConfig {
            eps: 0.5,
            max_depth: 8,
            k: 1000,
            thin: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NeedleReport {
    pub measure: f64,
    /// Leaves of the decomposition.
    pub cells: Vec<NeedleCell>,
    /// `(variance threshold, mass fraction of cells with max variance ≤ threshold)`.
    pub curve: Vec<(f64, f64)>,
    pub skipped_splits: usize,
}

const ANGLE_BISECTIONS: usize = 40;

struct Pending {
    rows: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    start: Vec<f64>,
    depth: usize,
    weight: f64,
}

/// Recursive bisection of the body into pieces that each keep `E`'s relative
/// measure, until the pieces are `ε`-thin (second-largest variance ≤ ε²) or
/// `max_depth` is reached.
pub fn needle_decompose(
    density: &DensitySpec,
    set: &TestSet,
    cfg: &NeedleConfig,
    rng: &mut RngStream,
) -> Result<NeedleReport> {
    let n = density.dim();
    if set.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: set.dim(),
        });
    }
    if !(cfg.eps > 0.0) || cfg.k < 2 {
        return Err(Error::invalid("needle decomposition needs ε > 0 and k ≥ 2"));
    }
    let thin = cfg.thin.unwrap_or(n).max(1);
    let body = density.body().clone();
    let mut queue = vec![Pending {
        rows: Vec::new(),
        offsets: Vec::new(),
        start: warm_start(density, WalkKind::HitAndRun, default_delta(n), rng)?,
        depth: 0,
        weight: 1.0,
    }];
    let mut cells = Vec::new();
    let mut measure = f64::NAN;
    let mut skipped = 0;
    while let Some(cell) = queue.pop() {
        let cell_body = if cell.rows.is_empty() {
            body.clone()
        } else {
            body.slice(cell.rows.clone(), cell.offsets.clone(), cell.start.clone())?
        };
        let cell_density = DensitySpec::new(cell_body.clone(), density.kind().clone())?;
        let mut chain = ChainState::new(cell.start.clone(), WalkKind::HitAndRun, default_delta(n));
        let samples = run_chain(&cell_density, &mut chain, n * n, cfg.k, thin, rng)?;
        let (center, cov) = estimate_mean_cov(&samples)?;
        let (eig, vecs) = sym_eigen(cov.matrix());
        let inside: Vec<bool> = samples.rows().map(|x| set.contains(x)).collect();
        let a = inside.iter().filter(|&&b| b).count() as f64 / samples.len() as f64;
        if cell.depth == 0 {
            measure = a;
            if !(0.25..=0.75).contains(&a) {
                return Err(Error::invalid(format!(
                    "set measure {a:.3} is outside [0.25, 0.75]"
                )));
            }
        }
        let second = if n >= 2 { eig[1] } else { 0.0 };
        let mut leaf = NeedleCell {
            cell_id: cells.len(),
            depth: cell.depth,
            weight: cell.weight,
            max_variance: eig[0],
            second_variance: second,
            rel_measure: a,
            split_failed: false,
        };
        if n < 2 || second <= cfg.eps * cfg.eps || cell.depth >= cfg.max_depth {
            cells.push(leaf);
            continue;
        }
        let v1: Vec<f64> = vecs.column(0).iter().cloned().collect();
        let mut v2 = rng.normal_vec(n);
        let proj = dot(&v2, &v1);
        axpy(-proj, &v1, &mut v2);
        let len = norm(&v2);
        v2.iter_mut().for_each(|x| *x /= len);
        let normal = |theta: f64| -> Vec<f64> { v1.iter().zip(&v2).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect() };
        let centered: Vec<Vec<f64>> = samples.rows().map(|x| x.iter().zip(&center).map(|(p, q)| p - q).collect()).collect();
        let g: Vec<f64> = inside.iter().map(|&b| if b { 1.0 - a } else { -a }).collect();
        let balance = |theta: f64| -> (f64, f64) {
            let u = normal(theta);
            let vals: Vec<f64> = centered
                .iter()
                .zip(&g)
                .map(|(d, gi)| if dot(&u, d) <= 0.0 { *gi } else { 0.0 })
                .collect();
            let e = Estimate::mean_of(&vals, "needle_balance");
            (e.value, e.std_error)
        };
        let f0 = balance(0.0).0;
        let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
        let theta = if f0 == 0.0 {
            0.0
        } else {
            for _ in 0..ANGLE_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                let fm = balance(mid).0;
                if fm == 0.0 {
                    hi = mid;
                    break;
                }
                if (fm > 0.0) == (f0 > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        let (fval, fse) = balance(theta);
        let u = normal(theta);
        let b = dot(&u, &center);
        let side: Vec<bool> = samples.rows().map(|x| dot(&u, x) <= b).collect();
        let left = side.iter().filter(|&&s| s).count();
        if fval.abs() > 2.0 * fse.max(1.0 / samples.len() as f64) || left == 0 || left == side.len() {
            leaf.split_failed = true;
            skipped += 1;
            cells.push(leaf);
            continue;
        }
        let frac = left as f64 / side.len() as f64;
        let deepest = |want: bool| -> Option<Vec<f64>> {
            samples
                .rows()
                .zip(&side)
                .filter(|(_, s)| **s == want)
                .map(|(x, _)| {
                    let slack = (dot(&u, x) - b).abs().min(cell_body.depth(x).unwrap_or(0.0));
                    (slack, x)
                })
                .filter(|(s, _)| *s > 0.0)
                .max_by(|p, q| p.0.total_cmp(&q.0))
                .map(|(_, x)| x.to_vec())
        };
        let (Some(start_l), Some(start_r)) = (deepest(true), deepest(false)) else {
            leaf.split_failed = true;
            skipped += 1;
            cells.push(leaf);
            continue;
        };
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        for (row, off, start, w) in [(u.clone(), b, start_l, frac), (neg, -b, start_r, 1.0 - frac)] {
            let mut rows = cell.rows.clone();
            let mut offsets = cell.offsets.clone();
            rows.push(row);
            offsets.push(off);
            queue.push(Pending {
                rows,
                offsets,
                start,
                depth: cell.depth + 1,
                weight: cell.weight * w,
            });
        }
    }
    cells.sort_by_key(|c| c.cell_id);
    let mut thresholds: Vec<f64> = cells.iter().map(|c| c.max_variance).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let curve = thresholds
        .iter()
        .map(|&tau| {
            let mass = cells.iter().filter(|c| c.max_variance <= tau).fold(0.0, |acc, c| acc + c.weight);
            (tau, mass)
        })
        .collect();
    Ok(NeedleReport {
        measure,
        cells,
        curve,
        skipped_splits: skipped,
    })
}

/// Mass fraction of cells whose largest variance is at most `threshold`.
pub fn mass_below(report: &NeedleReport, threshold: f64) -> f64 {
    report
        .cells
        .iter()
        .filter(|c| c.max_variance <= threshold)
        .fold(0.0, |acc, c| acc + c.weight)
}

pub fn write_needle_cells<W: Write>(cells: &[NeedleCell], w: &mut W) -> io::Result<()> {
    writeln!(w, "cell_id,depth,weight,max_variance,rel_measure")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{},{}",
            c.cell_id,
            c.depth,
            fmt_float(c.weight),
            fmt_float(c.max_variance),
            fmt_float(c.rel_measure)
        )?;
    }
    Ok(())
}

/// Distance of `(mean, cov)` from the closed form at time `t`, in operator norm.
pub fn closed_form_cov_error(cov: &CovMatrix, t: f64) -> f64 {
    let n = cov.dim();
    cov.op_dist(&(DMatrix::identity(n, n) / (1.0 + t)))
}

/// `‖m − c/(1+t)‖`.
pub fn closed_form_mean_error(mean: &[f64], c: &[f64], t: f64) -> f64 {
    let expect: Vec<f64> = c.iter().map(|v| v / (1.0 + t)).collect();
    dist_sq(mean, &expect).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stieltjes_known_values() {
        assert!((stieltjes_potential(&CovMatrix::identity(7)) - 2.0).abs() < 1e-12);
        assert!((stieltjes_potential(&CovMatrix::zeros(1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_values() {
        let (m, c) = sloc_closed_form(0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert_eq!(c.matrix(), &DMatrix::identity(2, 2));
        let (_, c) = sloc_closed_form(1.0, &[0.0; 4]).unwrap();
        assert!((c.trace_sq() - 1.0).abs() < 1e-15);
        let (m, _) = sloc_closed_form(3.0, &[4.0, 0.0]).unwrap();
        assert_eq!(m, vec![1.0, 0.0]);
    }

    #[test]
    fn default_q_values() {
        assert_eq!(default_q(1), 2);
        assert_eq!(default_q(8), 6);
    }

    #[test]
    fn moment_order_is_checked() {
        let s = SampleMatrix::from_rows(1, &vec![vec![0.0]; 64]).unwrap();
        assert!(moment_inequality_check(&s, 2).unwrap_err().is_input_error());
    }
}

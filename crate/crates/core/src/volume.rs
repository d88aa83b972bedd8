//! Volume by telescoping products of annealed expectations, optimization by
//! Boltzmann annealing, and a sampled-centroid cutting-plane method.

use std::io::{self, Write};

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::body::{ln_ball_volume, Body, BodyKind};
use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::estimate::{mean_var, Estimate, DEFAULT_BATCHES};
use crate::linalg::{dist_sq, dot, mat_vec, norm};
use crate::rng::RngStream;
use crate::samples::{fmt_float, SampleMatrix};
use crate::special::{chi_square_tail, gamma_tail, ln_gamma};
use crate::walks::{default_delta, step, warm_start, ChainState, WalkKind};

/// Truncation error allowed for the analytic integral of the first phase.
pub const START_TRUNCATION: f64 = 1e-6;
/// Relative variance of a phase ratio above which the run is aborted.
pub const MAX_RELATIVE_VARIANCE: f64 = 10.0;
/// DFK ratios `vol(K_i)/vol(K_{i+1})` below this trigger a warning.
pub const DFK_RATIO_WARNING: f64 = 0.4;
/// Gaussian cooling requires `R/r ≤ c√n`.
pub const WELL_ROUNDED_FACTOR: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    DfkBall,
    LvExponential,
    GaussianCooling,
}

impl ScheduleKind {
    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::DfkBall => "dfk_ball",
            ScheduleKind::LvExponential => "lv_exponential",
            ScheduleKind::GaussianCooling => "gaussian_cooling",
        }
    }

    fn default_walk(self) -> WalkKind {
        match self {
            ScheduleKind::DfkBall => WalkKind::BallWalk,
            _ => WalkKind::HitAndRun,
        }
    }
}

/// A cooling schedule. For DFK `params` are radii `2^{i/n}r` about the interior
/// point; otherwise they are the coefficients `α_i` (or `a_i`), ending with 0
/// for the final uniform phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealSchedule {
    pub kind: ScheduleKind,
    pub params: Vec<f64>,
    pub samples_per_phase: usize,
    pub center: Vec<f64>,
    /// Log of the integral of the first density, in closed form.
    pub log_start_integral: f64,
    /// Upper bound on the relative error of `log_start_integral`.
    pub truncation_bound: f64,
    /// Cooling factor between consecutive positive parameters.
    pub factor: f64,
}

/// `R + ‖x0‖`: radius of a ball about `x0` containing the body.
fn radius_about(body: &Body) -> f64 {
    body.outer_radius() + norm(body.interior_point())
}

/// Smallest `x` with `tail(x) ≤ target`, by bisection (`tail` decreasing).
fn tail_quantile(tail: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut hi = 1.0;
    while tail(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn cool(start: f64, stop: f64, factor: f64) -> Vec<f64> {
    let mut params = vec![start];
    let mut p = start;
    while p > stop {
        p /= factor;
        params.push(p);
    }
    params.push(0.0);
    params
}

impl AnnealSchedule {
    /// `K_i = 2^{i/n} r B(x0) ∩ K` for `i = 0..=m`, `m = ⌈n log2(R'/r)⌉`.
    pub fn dfk(body: &Body, k: usize) -> Self {
        let n = body.dim() as f64;
        let r = body.inner_radius();
        let big = radius_about(body);
        let m = (n * (big / r).log2()).ceil().max(0.0) as usize;
        let params = (0..=m).map(|i| r * 2f64.powf(i as f64 / n)).collect();
        AnnealSchedule {
            kind: ScheduleKind::DfkBall,
            params,
            samples_per_phase: k,
            center: body.interior_point().to_vec(),
            log_start_integral: ln_ball_volume(body.dim(), r),
            truncation_bound: 0.0,
            factor: 2f64.powf(1.0 / n),
        }
    }

    /// `exp(−α_i‖x − x0‖)` with `α_0 = max(2n/r, α*)`, where `α*` puts at most
    /// `1e-6` of the unrestricted mass outside `x0 + rB`, cooled by `1 + 1/√n`
    /// until `α ≤ 1/R'`, then a uniform phase.
    pub fn lv(body: &Body, k: usize) -> Self {
        let n = body.dim();
        let nf = n as f64;
        let r = body.inner_radius();
        let x = tail_quantile(|x| gamma_tail(n, x), START_TRUNCATION);
        let alpha0 = (2.0 * nf / r).max(x / r);
        let factor = 1.0 + 1.0 / nf.sqrt();
        let params = cool(alpha0, 1.0 / radius_about(body), factor);
        AnnealSchedule {
            kind: ScheduleKind::LvExponential,
            params,
            samples_per_phase: k,
            center: body.interior_point().to_vec(),
            log_start_integral: ln_ball_volume(n, 1.0) + ln_gamma(nf + 1.0) - nf * alpha0.ln(),
            truncation_bound: gamma_tail(n, alpha0 * r),
            factor,
        }
    }

    /// `exp(−(a_i/2)‖x − x0‖²)` with `a_0 = max(4n/r², a*)` (χ² truncation
    /// `≤ 1e-6`), the same cooling factor as [`AnnealSchedule::lv`], down to
    /// `a ≤ 1/R'²`, then a uniform phase.
    pub fn gaussian_cooling(body: &Body, k: usize) -> Result<Self> {
        let n = body.dim();
        let nf = n as f64;
        let r = body.inner_radius();
        let big = radius_about(body);
        if big / r > WELL_ROUNDED_FACTOR * nf.sqrt() {
            return Err(Error::invalid(format!(
                "body is not well rounded: R/r = {:.3} exceeds {WELL_ROUNDED_FACTOR}·√n",
                big / r
            )));
        }
        let x = tail_quantile(|x| chi_square_tail(n, x), START_TRUNCATION);
        let a0 = (4.0 * nf / (r * r)).max(x / (r * r));
        let factor = 1.0 + 1.0 / nf.sqrt();
        let params = cool(a0, 1.0 / (big * big), factor);
        Ok(AnnealSchedule {
            kind: ScheduleKind::GaussianCooling,
            params,
            samples_per_phase: k,
            center: body.interior_point().to_vec(),
            log_start_integral: 0.5 * nf * (2.0 * std::f64::consts::PI / a0).ln(),
            truncation_bound: chi_square_tail(n, a0 * r * r),
            factor,
        })
    }

    pub fn build(kind: ScheduleKind, body: &Body, k: usize) -> Result<Self> {
        match kind {
            ScheduleKind::DfkBall => Ok(Self::dfk(body, k)),
            ScheduleKind::LvExponential => Ok(Self::lv(body, k)),
            ScheduleKind::GaussianCooling => Self::gaussian_cooling(body, k),
        }
    }

    /// Number of ratios estimated.
    pub fn phases(&self) -> usize {
        self.params.len() - 1
    }

    /// Log of the (unnormalized) phase density at `x`, relative to the body.
    pub fn log_f(&self, i: usize, x: &[f64]) -> f64 {
        let p = self.params[i];
        match self.kind {
            ScheduleKind::DfkBall => {
                if dist_sq(x, &self.center) <= p * p {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScheduleKind::LvExponential => -p * dist_sq(x, &self.center).sqrt(),
            ScheduleKind::GaussianCooling => -0.5 * p * dist_sq(x, &self.center),
        }
    }

    /// The density sampled in phase `i` of the estimator.
    fn sampling_density(&self, body: &Body, i: usize) -> Result<DensitySpec> {
        let p = self.params[i];
        match self.kind {
            ScheduleKind::DfkBall => Ok(DensitySpec::uniform(body.intersect_ball(self.center.clone(), p)?)),
            _ if p == 0.0 => Ok(DensitySpec::uniform(body.clone())),
            ScheduleKind::LvExponential => DensitySpec::exponential(body.clone(), self.center.clone(), p),
            ScheduleKind::GaussianCooling => DensitySpec::gaussian(body.clone(), self.center.clone(), p),
        }
    }
}

/// Mean and standard error of `Y = f_next(X)/f_cur(X)` over chain samples from
/// `f_cur`, computed in log scale.
pub fn ratio_estimator(
    samples: &SampleMatrix,
    log_f_next: impl Fn(&[f64]) -> f64,
    log_f_cur: impl Fn(&[f64]) -> f64,
) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::invalid("ratio estimator needs samples"));
    }
    let ys: Vec<f64> = samples
        .rows()
        .map(|x| {
            let d = log_f_next(x) - log_f_cur(x);
            if d.is_nan() {
                0.0
            } else {
                d.exp()
            }
        })
        .collect();
    if ys.iter().all(|&y| y == 0.0) {
        return Err(Error::Estimation(
            "every ratio is zero: the consecutive densities look disjoint".into(),
        ));
    }
    Ok(Estimate::batch_mean_of(&ys, DEFAULT_BATCHES, "annealing_ratio"))
}

/// `log Z_0 + Σ log ratio_i`.
pub fn telescope(log_start: f64, ratios: &[f64]) -> f64 {
    log_start + ratios.iter().map(|r| r.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct VolumeConfig {
    pub samples_per_phase: usize,
    /// `None` picks the ball walk for DFK and hit-and-run otherwise.
    pub walk: Option<WalkKind>,
    /// `None` means `n`.
    pub thin: Option<usize>,
    /// Steps discarded at the start of each phase; `None` means `n²`.
    pub burn_in: Option<usize>,
    pub chains: usize,
    pub delta: Option<f64>,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            samples_per_phase: 1000,
            walk: None,
            thin: None,
            burn_in: None,
            chains: 1,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub param: f64,
    pub ratio: f64,
    pub se: f64,
    pub acceptance: f64,
    pub relative_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeResult {
    pub volume: Estimate,
    pub log_volume: f64,
    pub schedule: AnnealSchedule,
    pub phases: Vec<PhaseRecord>,
    pub warnings: Vec<String>,
}

struct Chain {
    state: ChainState,
    rng: RngStream,
}

/// Runs every chain for `burn_in` steps then `per_chain` recorded samples,
/// concatenating the output in chain order.
fn run_phase(
    density: &DensitySpec,
    chains: &mut [Chain],
    per_chain: usize,
    burn_in: usize,
    thin: usize,
) -> Result<(SampleMatrix, f64)> {
    let parts = chains
        .par_iter_mut()
        .map(|c| -> Result<SampleMatrix> {
            c.state.reset_counters();
            for _ in 0..burn_in {
                step(density, &mut c.state, &mut c.rng)?;
            }
            let mut out = SampleMatrix::with_capacity(density.dim(), per_chain);
            for _ in 0..per_chain {
                for _ in 0..thin {
                    step(density, &mut c.state, &mut c.rng)?;
                }
                out.push(&c.state.x)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = SampleMatrix::with_capacity(density.dim(), per_chain * chains.len());
    for p in &parts {
        all.extend(p)?;
    }
    let acc = chains.iter().map(|c| c.state.acceptance_rate()).sum::<f64>() / chains.len() as f64;
    Ok((all, acc))
}

fn start_chains(
    density: &DensitySpec,
    cfg: &VolumeConfig,
    walk: WalkKind,
    rng: &mut RngStream,
) -> Result<Vec<Chain>> {
    let n = density.dim();
    let delta = cfg.delta.unwrap_or_else(|| default_delta(n));
    (0..cfg.chains.max(1))
        .map(|j| {
            let mut crng = rng.fork(j as u64);
            let x0 = warm_start(density, walk, delta, &mut crng)?;
            Ok(Chain {
                state: ChainState::new(x0, walk, delta),
                rng: crng,
            })
        })
        .collect()
}

/// Runs the annealing estimator for `schedule` on `body`.
pub fn anneal_volume(
    body: &Body,
    schedule: AnnealSchedule,
    cfg: &VolumeConfig,
    rng: &mut RngStream,
) -> Result<VolumeResult> {
    let n = body.dim();
    if cfg.samples_per_phase < 2 * DEFAULT_BATCHES {
        return Err(Error::invalid(format!(
            "samples_per_phase must be at least {}",
            2 * DEFAULT_BATCHES
        )));
    }
    if schedule.truncation_bound > 0.0 {
        log::info!(
            "{}: first-phase integral truncation bound {:.3e}",
            schedule.kind.label(),
            schedule.truncation_bound
        );
    }
    let walk = cfg.walk.unwrap_or_else(|| schedule.kind.default_walk());
    let thin = cfg.thin.unwrap_or(n).max(1);
    let burn_in = cfg.burn_in.unwrap_or(n * n);
    let per_chain = cfg.samples_per_phase.div_ceil(cfg.chains.max(1));
    let dfk = schedule.kind == ScheduleKind::DfkBall;

    let mut phases = Vec::with_capacity(schedule.phases());
    let mut warnings = Vec::new();
    let mut ratios = Vec::with_capacity(schedule.phases());
    let mut rel_var_sum = 0.0;
    let mut chains: Option<Vec<Chain>> = None;
    for i in 0..schedule.phases() {
        // DFK samples the larger body K_{i+1} and estimates vol(K_i)/vol(K_{i+1});
        // the density schedules sample f_i and estimate ∫f_{i+1}/∫f_i.
        let (sample_idx, other_idx) = if dfk { (i + 1, i) } else { (i, i + 1) };
        let density = schedule.sampling_density(body, sample_idx)?;
        let chains = match chains.as_mut() {
            Some(c) => {
                for ch in c.iter_mut() {
                    if density.log_density(&ch.state.x) == f64::NEG_INFINITY {
                        return Err(Error::Estimation(format!("phase {i}: warm start left the support")));
                    }
                }
                c
            }
            None => chains.insert(start_chains(&density, cfg, walk, rng)?),
        };
        let (samples, acceptance) = run_phase(&density, chains, per_chain, burn_in, thin)?;
        let est = ratio_estimator(
            &samples,
            |x| schedule.log_f(other_idx, x),
            |x| schedule.log_f(sample_idx, x),
        )
        .map_err(|e| match e {
            Error::Estimation(m) => Error::Estimation(format!("phase {i}: {m}")),
            other => other,
        })?;
        let ys: Vec<f64> = samples
            .rows()
            .map(|x| (schedule.log_f(other_idx, x) - schedule.log_f(sample_idx, x)).exp())
            .collect();
        let (mean, var) = mean_var(&ys);
        let rel_var = var / (mean * mean);
        if !dfk && rel_var > MAX_RELATIVE_VARIANCE {
            return Err(Error::Estimation(format!(
                "phase {i}: relative variance {rel_var:.2} of the ratio exceeds {MAX_RELATIVE_VARIANCE}"
            )));
        }
        if dfk && est.value < DFK_RATIO_WARNING {
            let msg = format!(
                "phase {i}: ratio {:.3} below {DFK_RATIO_WARNING}; consecutive bodies differ by more than a factor 2",
                est.value
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        rel_var_sum += (est.std_error / est.value).powi(2);
        phases.push(PhaseRecord {
            phase: i,
            param: schedule.params[sample_idx],
            ratio: est.value,
            se: est.std_error,
            acceptance,
            relative_variance: rel_var,
        });
        ratios.push(if dfk { 1.0 / est.value } else { est.value });
    }
    let log_volume = telescope(schedule.log_start_integral, &ratios);
    let volume = log_volume.exp();
    let total = phases.len() * cfg.samples_per_phase;
    Ok(VolumeResult {
        volume: Estimate::new(volume, volume * rel_var_sum.sqrt(), total, schedule.kind.label()),
        log_volume,
        schedule,
        phases,
        warnings,
    })
}

/// Ball-sequence estimator: `vol(rB)·Π vol(K_{i+1})/vol(K_i)`.
pub fn dfk_volume(body: &Body, cfg: &VolumeConfig, rng: &mut RngStream) -> Result<VolumeResult> {
    anneal_volume(body, AnnealSchedule::dfk(body, cfg.samples_per_phase), cfg, rng)
}

/// Exponential annealing from a sharply peaked density down to uniform.
pub fn lv_annealing_volume(body: &Body, cfg: &VolumeConfig, rng: &mut RngStream) -> Result<VolumeResult> {
    anneal_volume(body, AnnealSchedule::lv(body, cfg.samples_per_phase), cfg, rng)
}

/// Gaussian cooling for well-rounded bodies.
pub fn gaussian_cooling_volume(body: &Body, cfg: &VolumeConfig, rng: &mut RngStream) -> Result<VolumeResult> {
    let schedule = AnnealSchedule::gaussian_cooling(body, cfg.samples_per_phase)?;
    anneal_volume(body, schedule, cfg, rng)
}

pub fn write_phase_trace<W: Write>(phases: &[PhaseRecord], w: &mut W) -> io::Result<()> {
    writeln!(w, "phase,param,ratio,se,acceptance")?;
    for p in phases {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.phase,
            fmt_float(p.param),
            fmt_float(p.ratio),
            fmt_float(p.se),
            fmt_float(p.acceptance)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct OptimizeConfig {
    pub eps: f64,
    /// `None` means `10·n`.
    pub samples_per_phase: Option<usize>,
    pub walk: WalkKind,
    /// `None` means `n`.
    pub thin: Option<usize>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            eps: 0.1,
            samples_per_phase: None,
            walk: WalkKind::HitAndRun,
            thin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizePhase {
    pub phase: usize,
    pub alpha: f64,
    pub mean_value: f64,
    pub se: f64,
    pub best_value: f64,
    /// `n/α`, the bound on `E c·X − min` at this temperature.
    pub gap_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub alpha0: f64,
    pub alpha_final: f64,
    /// Number of times α was raised.
    pub phase_count: usize,
    pub trace: Vec<OptimizePhase>,
    /// Phases where `mean − best` exceeded `n/α` by more than 3 se.
    pub guarantee_violations: Vec<usize>,
}

/// Samples `e^{−α c·x}` on the body for `α_i = α_0 e^{i/√n}`, `α_0 = 1/(‖c‖R')`,
/// until `α ≥ n/ε`, and returns the best point seen.
pub fn anneal_optimize(
    body: &Body,
    cost: &[f64],
    cfg: &OptimizeConfig,
    rng: &mut RngStream,
) -> Result<OptimizeResult> {
    let n = body.dim();
    if cost.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cost.len(),
        });
    }
    let cnorm = norm(cost);
    if !(cnorm > 0.0) {
        return Err(Error::invalid("cost vector must be nonzero"));
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::invalid("ε must be positive"));
    }
    let nf = n as f64;
    let alpha0 = 1.0 / (cnorm * radius_about(body));
    let alpha_final = nf / cfg.eps;
    let count = (nf.sqrt() * (alpha_final / alpha0).ln()).ceil().max(0.0) as usize;
    let k = cfg.samples_per_phase.unwrap_or(10 * n).max(2);
    let thin = cfg.thin.unwrap_or(n).max(1);
    let delta = default_delta(n);

    let first = DensitySpec::boltzmann(body.clone(), alpha0, cost.to_vec())?;
    let x0 = warm_start(&first, cfg.walk, delta, rng)?;
    let mut state = ChainState::new(x0, cfg.walk, delta);
    let mut best = (state.x.clone(), dot(cost, &state.x));
    let mut trace = Vec::with_capacity(count + 1);
    let mut violations = Vec::new();
    for i in 0..=count {
        let alpha = alpha0 * (i as f64 / nf.sqrt()).exp();
        let density = DensitySpec::boltzmann(body.clone(), alpha, cost.to_vec())?;
        let mut values = Vec::with_capacity(k);
        for _ in 0..k {
            for _ in 0..thin {
                step(&density, &mut state, rng).map_err(unbounded_hint)?;
            }
            let v = dot(cost, &state.x);
            if v < best.1 {
                best = (state.x.clone(), v);
            }
            values.push(v);
        }
        let est = Estimate::mean_of(&values, "boltzmann_mean");
        let gap_bound = nf / alpha;
        if est.value - best.1 > gap_bound + 3.0 * est.std_error {
            violations.push(i);
        }
        trace.push(OptimizePhase {
            phase: i,
            alpha,
            mean_value: est.value,
            se: est.std_error,
            best_value: best.1,
            gap_bound,
        });
    }
    Ok(OptimizeResult {
        point: best.0,
        value: best.1,
        alpha0,
        alpha_final: trace.last().map(|t| t.alpha).unwrap_or(alpha0),
        phase_count: count,
        trace,
        guarantee_violations: violations,
    })
}

fn unbounded_hint(e: Error) -> Error {
    match e {
        Error::Chord(m) => Error::Chord(format!("{m} (is the body bounded in the cost direction?)")),
        other => other,
    }
}

pub fn write_optimize_trace<W: Write>(trace: &[OptimizePhase], w: &mut W) -> io::Result<()> {
    writeln!(w, "phase,alpha,mean_value,se,best_value,gap_bound")?;
    for p in trace {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.phase,
            fmt_float(p.alpha),
            fmt_float(p.mean_value),
            fmt_float(p.se),
            fmt_float(p.best_value),
            fmt_float(p.gap_bound)
        )?;
    }
    Ok(())
}

/// Answers membership queries with a separating direction on NO.
pub trait SeparationOracle: Sync {
    fn dim(&self) -> usize;

    /// `None` if `x ∈ K`; otherwise `a ≠ 0` with `K ⊆ {y : a·y ≤ a·x}`.
    fn separate(&self, x: &[f64]) -> Option<Vec<f64>>;

    /// A ball `x0 + rB ⊆ K` guaranteed by the oracle, used to detect
    /// inconsistent answers.
    fn inner_ball(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// Separating direction for an analytic body, if `x` is outside.
pub fn body_separator(body: &Body, x: &[f64]) -> Result<Option<Vec<f64>>> {
    if body.contains(x) {
        return Ok(None);
    }
    let a = match body.kind() {
        BodyKind::Ball { center, .. } => x.iter().zip(center).map(|(a, b)| a - b).collect(),
        BodyKind::Cube { lo, hi } => {
            let n = x.len();
            let (mut worst, mut a) = (0.0, vec![0.0; n]);
            for i in 0..n {
                let (over, sign) = if x[i] > hi[i] { (x[i] - hi[i], 1.0) } else { (lo[i] - x[i], -1.0) };
                if over > worst {
                    worst = over;
                    a = vec![0.0; n];
                    a[i] = sign;
                }
            }
            a
        }
        BodyKind::Simplex => {
            let n = x.len();
            let sum: f64 = x.iter().sum();
            if sum > 1.0 {
                vec![1.0; n]
            } else {
                let i = (0..n).min_by(|&i, &j| x[i].total_cmp(&x[j])).expect("n > 0");
                let mut a = vec![0.0; n];
                a[i] = -1.0;
                a
            }
        }
        BodyKind::Polytope { rows, offsets } => worst_row(rows, offsets, x),
        BodyKind::Ellipsoid { center, shape_inv, .. } => {
            let d: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
            mat_vec(shape_inv, &d)
        }
        BodyKind::BallIntersection { base, center, radius } => {
            if dist_sq(x, center) > radius * radius {
                x.iter().zip(center).map(|(a, b)| a - b).collect()
            } else {
                return body_separator(base, x);
            }
        }
        BodyKind::Sliced { base, rows, offsets } => {
            if rows.iter().zip(offsets).any(|(a, &b)| dot(a, x) > b) {
                worst_row(rows, offsets, x)
            } else {
                return body_separator(base, x);
            }
        }
        BodyKind::Transformed { base, map } => {
            // K = T(B): a separator a' of T⁻¹x for B maps to M⁻ᵀa'.
            let y = map.apply_inverse(x);
            match body_separator(base, &y)? {
                Some(a) => mat_vec(&map.inverse_matrix().transpose(), &a),
                None => return Ok(None),
            }
        }
        BodyKind::Oracle(_) => {
            return Err(Error::invalid("membership-only bodies have no separation oracle"));
        }
    };
    Ok(Some(a))
}

fn worst_row(rows: &[Vec<f64>], offsets: &[f64], x: &[f64]) -> Vec<f64> {
    rows.iter()
        .zip(offsets)
        .max_by(|(a, b), (c, d)| {
            ((dot(a, x) - **b) / norm(a)).total_cmp(&((dot(c, x) - **d) / norm(c)))
        })
        .map(|(a, _)| a.clone())
        .expect("at least one row")
}

impl SeparationOracle for Body {
    fn dim(&self) -> usize {
        Body::dim(self)
    }

    fn separate(&self, x: &[f64]) -> Option<Vec<f64>> {
        body_separator(self, x).ok().flatten()
    }

    fn inner_ball(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.interior_point().to_vec(), self.inner_radius()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CutPlaneConfig {
    /// `None` means `10·n` samples per centroid estimate.
    pub samples_per_iter: Option<usize>,
    /// `None` means `n`.
    pub thin: Option<usize>,
    /// `None` means `10·n`.
    pub burn_in: Option<usize>,
}

impl Default for CutPlaneConfig {
    fn default() -> Self {
        CutPlaneConfig {
            samples_per_iter: None,
            thin: None,
            burn_in: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Feasibility {
    Feasible { point: Vec<f64> },
    /// The accumulated cuts `rows·x ≤ offsets` whose intersection with `RB`
    /// is too small to contain the guaranteed inner ball.
    Infeasible { rows: Vec<Vec<f64>>, offsets: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct CutPlaneOutcome {
    pub result: Feasibility,
    pub iterations: usize,
    pub max_iterations: usize,
    /// Fraction of each iteration's samples kept by its cut.
    pub retained_fractions: Vec<f64>,
}

/// `⌈3n ln(R/r)⌉`.
pub fn cutting_plane_iteration_cap(n: usize, big: f64, r: f64) -> usize {
    (3.0 * n as f64 * (big / r).ln()).ceil().max(1.0) as usize
}

/// Lower bound `1/e − √(n/m)` on the expected mass kept by a cut through the
/// mean of `m` samples.
pub fn bv04_cut_fraction(n: usize, m: usize) -> f64 {
    (-1.0f64).exp() - (n as f64 / m as f64).sqrt()
}

/// Cutting-plane feasibility: queries the mean of samples from the current
/// outer set `RB ∩ cuts`, and on NO cuts through that mean.
pub fn cutting_plane_feasibility(
    oracle: &dyn SeparationOracle,
    outer_radius: f64,
    inner_radius: f64,
    cfg: &CutPlaneConfig,
    rng: &mut RngStream,
) -> Result<CutPlaneOutcome> {
    let n = oracle.dim();
    if !(outer_radius > inner_radius && inner_radius > 0.0) {
        return Err(Error::invalid("cutting plane needs R > r > 0"));
    }
    let m = cfg.samples_per_iter.unwrap_or(10 * n).max(2);
    let thin = cfg.thin.unwrap_or(n).max(1);
    let burn_in = cfg.burn_in.unwrap_or(10 * n);
    let max_iterations = cutting_plane_iteration_cap(n, outer_radius, inner_radius);
    let ball = Body::ball(n, outer_radius)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    let mut start = vec![0.0; n];
    let mut retained_fractions = Vec::new();
    for it in 1..=max_iterations {
        let outer = if rows.is_empty() {
            ball.clone()
        } else {
            ball.slice(rows.clone(), offsets.clone(), start.clone())?
        };
        let density = DensitySpec::uniform(outer.clone());
        let mut state = ChainState::new(start.clone(), WalkKind::HitAndRun, default_delta(n));
        let samples = crate::walks::run_chain(&density, &mut state, burn_in, m, thin, rng)?;
        let (mean, _) = crate::isotropy::estimate_mean_cov(&samples)?;
        let a = match oracle.separate(&mean) {
            None => {
                return Ok(CutPlaneOutcome {
                    result: Feasibility::Feasible { point: mean },
                    iterations: it,
                    max_iterations,
                    retained_fractions,
                })
            }
            Some(a) => a,
        };
        let alen = norm(&a);
        if !(alen > 0.0 && alen.is_finite()) || a.len() != n {
            return Err(Error::OracleInconsistent("separating direction is zero or malformed".into()));
        }
        let b = dot(&a, &mean);
        if let Some((x0, r)) = oracle.inner_ball() {
            if dot(&a, &x0) + r * alen > b + 1e-9 * alen * outer_radius {
                return Err(Error::OracleInconsistent(format!(
                    "iteration {it}: the cut removes part of the guaranteed inner ball"
                )));
            }
        }
        let kept: Vec<&[f64]> = samples.rows().filter(|x| dot(&a, x) < b).collect();
        retained_fractions.push(kept.len() as f64 / samples.len() as f64);
        let mut best: Option<(f64, &[f64])> = None;
        for x in kept {
            let slack = ((b - dot(&a, x)) / alen).min(outer.depth(x).unwrap_or(0.0));
            if slack > 0.0 && best.is_none_or(|(s, _)| slack > s) {
                best = Some((slack, x));
            }
        }
        let Some((_, next)) = best else {
            return Err(Error::Estimation(format!(
                "iteration {it}: no sample survived the cut; increase samples_per_iter"
            )));
        };
        start = next.to_vec();
        rows.push(a);
        offsets.push(b);
    }
    Ok(CutPlaneOutcome {
        result: Feasibility::Infeasible { rows, offsets },
        iterations: max_iterations,
        max_iterations,
        retained_fractions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrunbaumReport {
    pub halfspaces: usize,
    pub min_fraction: f64,
    pub mean_fraction: f64,
}

/// For `count` random directions `u`, the sample mass of the smaller side of
/// `{u·(x − centroid) ≥ 0}`.
pub fn grunbaum_check(
    samples: &SampleMatrix,
    centroid: &[f64],
    count: usize,
    rng: &mut RngStream,
) -> Result<GrunbaumReport> {
    if samples.is_empty() || count == 0 {
        return Err(Error::invalid("Grunbaum check needs samples and directions"));
    }
    let n = samples.dim();
    let m = samples.len() as f64;
    let fractions: Vec<f64> = (0..count)
        .map(|_| {
            let u = rng.unit_vector(n);
            let c = dot(&u, centroid);
            let p = samples.rows().filter(|x| dot(&u, x) >= c).count() as f64 / m;
            p.min(1.0 - p)
        })
        .collect();
    Ok(GrunbaumReport {
        halfspaces: count,
        min_fraction: fractions.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_fraction: fractions.iter().sum::<f64>() / count as f64,
    })
}

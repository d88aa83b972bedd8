//! Geometric random walks and the chain driver.

pub mod chord_sampler;
pub mod exact;

use serde::{Deserialize, Serialize};

use crate::body::Body;
use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::linalg::{along, axpy, unit};
use crate::rng::RngStream;
use crate::samples::SampleMatrix;

pub use chord_sampler::sample_chord;
pub use exact::{exact_point, exact_samples, uniform_point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkKind {
    BallWalk,
    MetropolisBall,
    HitAndRun,
    CoordinateHitAndRun,
}

impl WalkKind {
    pub fn label(self) -> &'static str {
        match self {
            WalkKind::BallWalk => "ball_walk",
            WalkKind::MetropolisBall => "metropolis_ball",
            WalkKind::HitAndRun => "hit_and_run",
            WalkKind::CoordinateHitAndRun => "coordinate_hit_and_run",
        }
    }
}

/// Default ball-walk radius `1/√n`.
pub fn default_delta(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub steps_taken: u64,
    pub proposals_accepted: u64,
    pub kind: WalkKind,
    /// Step radius; only used by the ball walks.
    pub delta: f64,
}

impl ChainState {
    pub fn new(x: Vec<f64>, kind: WalkKind, delta: f64) -> Self {
        ChainState {
            x,
            steps_taken: 0,
            proposals_accepted: 0,
            kind,
            delta,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps_taken == 0 {
            0.0
        } else {
            self.proposals_accepted as f64 / self.steps_taken as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.steps_taken = 0;
        self.proposals_accepted = 0;
    }
}

/// Uniform proposal in the δ-ball around `x`; moves only if it lands in the body.
pub fn ball_walk_step(body: &Body, state: &mut ChainState, rng: &mut RngStream) {
    let n = body.dim();
    let mut y = state.x.clone();
    axpy(state.delta, &rng.in_unit_ball(n), &mut y);
    state.steps_taken += 1;
    if body.contains(&y) {
        state.x = y;
        state.proposals_accepted += 1;
    }
}

/// Metropolis filter `min{1, Q(y)/Q(x)}` over a δ-ball proposal, in log scale.
pub fn metropolis_step(density: &DensitySpec, state: &mut ChainState, rng: &mut RngStream) {
    let n = density.dim();
    let mut y = state.x.clone();
    axpy(state.delta, &rng.in_unit_ball(n), &mut y);
    state.steps_taken += 1;
    let ly = density.log_density(&y);
    if ly == f64::NEG_INFINITY {
        return;
    }
    let lx = density.log_density(&state.x);
    let log_ratio = ly - lx;
    if log_ratio >= 0.0 || rng.uniform_open().ln() < log_ratio {
        state.x = y;
        state.proposals_accepted += 1;
    }
}

fn chord_move(
    density: &DensitySpec,
    state: &mut ChainState,
    u: &[f64],
    rng: &mut RngStream,
) -> Result<()> {
    let body = density.body();
    let mut ch = body.chord_along(&state.x, u);
    if !(ch.lo.is_finite() && ch.hi.is_finite()) {
        return Err(Error::Chord("chord is unbounded".into()));
    }
    let slack = 1e-9 * (ch.hi - ch.lo).abs().max(1e-12);
    if ch.lo > slack || ch.hi < -slack || ch.lo.is_nan() || ch.hi.is_nan() {
        return Err(Error::Chord(format!(
            "current point is outside the body (chord [{}, {}])",
            ch.lo, ch.hi
        )));
    }
    ch.lo = ch.lo.min(0.0);
    ch.hi = ch.hi.max(0.0);
    let line = density.line(&state.x, u);
    let t = sample_chord(&line, ch.lo, ch.hi, rng);
    state.steps_taken += 1;
    // round-off at an endpoint may leave the body; pull back towards x
    let mut s = t;
    for _ in 0..4 {
        let y = along(&state.x, s, u);
        if body.contains(&y) {
            state.x = y;
            state.proposals_accepted += 1;
            return Ok(());
        }
        s *= 1.0 - 1e-9;
    }
    Ok(())
}

/// Hit-and-run: uniform direction, then an exact draw from the density
/// restricted to the chord.
pub fn hit_and_run_step(
    density: &DensitySpec,
    state: &mut ChainState,
    rng: &mut RngStream,
) -> Result<()> {
    let u = rng.unit_vector(density.dim());
    chord_move(density, state, &u, rng)
}

/// Hit-and-run along a uniformly chosen coordinate axis.
pub fn coordinate_hit_and_run_step(
    density: &DensitySpec,
    state: &mut ChainState,
    rng: &mut RngStream,
) -> Result<()> {
    let n = density.dim();
    let u = unit(n, rng.index(n));
    chord_move(density, state, &u, rng)
}

/// One step of whichever walk `state.kind` names. The ball walk ignores the
/// density and walks uniformly on its body.
pub fn step(density: &DensitySpec, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
    match state.kind {
        WalkKind::BallWalk => {
            ball_walk_step(density.body(), state, rng);
            Ok(())
        }
        WalkKind::MetropolisBall => {
            metropolis_step(density, state, rng);
            Ok(())
        }
        WalkKind::HitAndRun => hit_and_run_step(density, state, rng),
        WalkKind::CoordinateHitAndRun => coordinate_hit_and_run_step(density, state, rng),
    }
}

/// Advances `burn_in` steps, then records `n_samples` points, one every `thin`
/// steps.
pub fn run_chain(
    density: &DensitySpec,
    state: &mut ChainState,
    burn_in: usize,
    n_samples: usize,
    thin: usize,
    rng: &mut RngStream,
) -> Result<SampleMatrix> {
    if thin == 0 {
        return Err(Error::invalid("thin must be at least 1"));
    }
    if state.x.len() != density.dim() {
        return Err(Error::DimensionMismatch {
            expected: density.dim(),
            got: state.x.len(),
        });
    }
    if density.log_density(&state.x) == f64::NEG_INFINITY {
        return Err(Error::NotInterior);
    }
    for _ in 0..burn_in {
        step(density, state, rng)?;
    }
    let mut out = SampleMatrix::with_capacity(density.dim(), n_samples);
    for _ in 0..n_samples {
        for _ in 0..thin {
            step(density, state, rng)?;
        }
        out.push(&state.x)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub kind: WalkKind,
    /// Ball-walk radius; `None` means `1/√n`.
    pub delta: Option<f64>,
    /// `None` means `100·n²` steps.
    pub burn_in: Option<usize>,
    /// `None` means `n` steps per recorded sample.
    pub thin: Option<usize>,
    pub n_samples: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            kind: WalkKind::HitAndRun,
            delta: None,
            burn_in: None,
            thin: None,
            n_samples: 1000,
        }
    }
}

impl WalkConfig {
    pub fn delta_for(&self, n: usize) -> f64 {
        self.delta.unwrap_or_else(|| default_delta(n))
    }

    pub fn burn_in_for(&self, n: usize) -> usize {
        self.burn_in.unwrap_or(100 * n * n)
    }

    pub fn thin_for(&self, n: usize) -> usize {
        self.thin.unwrap_or(n).max(1)
    }

    /// Chain from `x0` with this configuration.
    pub fn run(
        &self,
        density: &DensitySpec,
        x0: Vec<f64>,
        rng: &mut RngStream,
    ) -> Result<(SampleMatrix, ChainState)> {
        let n = density.dim();
        let mut state = ChainState::new(x0, self.kind, self.delta_for(n));
        let samples = run_chain(
            density,
            &mut state,
            self.burn_in_for(n),
            self.n_samples,
            self.thin_for(n),
            rng,
        )?;
        Ok((samples, state))
    }
}

/// Starting point that is (close to) a draw from the target: an exact draw when
/// one is available, otherwise `100·n²` steps of `kind` from the interior point.
pub fn warm_start(
    density: &DensitySpec,
    kind: WalkKind,
    delta: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if let Some(p) = exact_point(density, rng) {
        return Ok(p);
    }
    let n = density.dim();
    let mut state = ChainState::new(density.body().interior_point().to_vec(), kind, delta);
    for _ in 0..100 * n * n {
        step(density, &mut state, rng)?;
    }
    Ok(state.x)
}

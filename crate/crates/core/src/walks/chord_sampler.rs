//! Sampling from the restriction of a logconcave density to a chord.
//!
//! The chord is first narrowed to the window where the log-density is within
//! `WINDOW_NATS` of its maximum (located by golden-section search, valid because
//! the restriction is concave). The window is split into 64 panels integrated by
//! Simpson's rule; the inverse CDF is found by locating the panel and bisecting
//! inside it to a relative tolerance of 1e-8.
//!
//! Restrictions that are linear or quadratic in `t` (uniform, Boltzmann and
//! Gaussian-tilted targets) are drawn exactly instead.

use crate::density::LineDensity;
use crate::rng::RngStream;

pub const PANELS: usize = 64;
const WINDOW_NATS: f64 = 36.0;
const INVERSE_TOL: f64 = 1e-8;

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let ft = f(t);
    // endpoints can beat the interior when the maximum sits on the boundary
    [(t, ft), (a, f(a)), (b, f(b))]
        .into_iter()
        .fold((t, ft), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// Where `f` first drops to `level` when walking from `from` towards `to`
/// (returns `to` if it never does). `f(from) ≥ level` is assumed.
fn level_crossing(f: &impl Fn(f64) -> f64, from: f64, to: f64, level: f64) -> f64 {
    if f(to) >= level {
        return to;
    }
    let (mut inside, mut outside) = (from, to);
    for _ in 0..60 {
        let mid = 0.5 * (inside + outside);
        if f(mid) >= level {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    outside
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

/// Draws `t ∈ [lo, hi]` with density proportional to `exp(line(t))`.
pub fn sample_chord(line: &LineDensity, lo: f64, hi: f64, rng: &mut RngStream) -> f64 {
    if !(hi > lo) {
        return lo;
    }
    if line.is_constant() {
        return lo + (hi - lo) * rng.uniform();
    }
    if line.norm_terms.iter().all(|t| t[0] == 0.0) {
        if line.curv == 0.0 {
            return truncated_exponential(line.lin, lo, hi, rng);
        }
        if line.curv > 0.0 {
            let sd = 1.0 / line.curv.sqrt();
            let m = line.lin / line.curv;
            let z = truncated_normal((lo - m) / sd, (hi - m) / sd, rng);
            return (m + sd * z).clamp(lo, hi);
        }
    }
    let f = |t: f64| line.eval(t);
    let (mode, fmax) = golden_max(&f, lo, hi);
    let level = fmax - WINDOW_NATS;
    let a = level_crossing(&f, mode, lo, level);
    let b = level_crossing(&f, mode, hi, level);
    if !(b > a) {
        return mode;
    }
    let g = |t: f64| (f(t) - fmax).exp();
    let h = (b - a) / PANELS as f64;
    let knots: Vec<f64> = (0..=PANELS).map(|i| a + h * i as f64).collect();
    let gk: Vec<f64> = knots.iter().map(|&t| g(t)).collect();
    let mut cum = Vec::with_capacity(PANELS + 1);
    cum.push(0.0);
    for i in 0..PANELS {
        let mass = simpson(gk[i], g(knots[i] + 0.5 * h), gk[i + 1], h).max(0.0);
        cum.push(cum[i] + mass);
    }
    let total = cum[PANELS];
    if !(total > 0.0) {
        return mode;
    }
    let target = rng.uniform() * total;
    let k = cum.partition_point(|&c| c <= target).clamp(1, PANELS) - 1;
    let need = target - cum[k];
    let (t0, g0) = (knots[k], gk[k]);
    let (mut lo_t, mut hi_t) = (t0, knots[k + 1]);
    let tol = INVERSE_TOL * (b - a).max(f64::MIN_POSITIVE);
    while hi_t - lo_t > tol {
        let mid = 0.5 * (lo_t + hi_t);
        let part = simpson(g0, g(0.5 * (t0 + mid)), g(mid), mid - t0);
        if part < need {
            lo_t = mid;
        } else {
            hi_t = mid;
        }
    }
    0.5 * (lo_t + hi_t)
}

/// Density `∝ e^{λt}` on `[lo, hi]` by inversion.
pub fn truncated_exponential(lambda: f64, lo: f64, hi: f64, rng: &mut RngStream) -> f64 {
    let len = hi - lo;
    if lambda == 0.0 || !(len * lambda.abs() > 1e-300) {
        return lo + len * rng.uniform();
    }
    let u = rng.uniform();
    let mu = lambda.abs();
    let offset = -(u * (-mu * len).exp_m1()).ln_1p() / mu;
    let t = if lambda < 0.0 { lo + offset } else { hi - offset };
    t.clamp(lo, hi)
}

/// Standard normal conditioned on `[a, b]` (Robert 1995): plain rejection for
/// wide intervals around the origin, translated-exponential proposals in the
/// tails and uniform proposals for short intervals.
pub fn truncated_normal(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    if !(b > a) {
        return a;
    }
    if a > 0.0 {
        return one_sided(a, b, rng);
    }
    if b < 0.0 {
        return -one_sided(-b, -a, rng);
    }
    if b - a >= 2.5 {
        loop {
            let z = rng.normal();
            if z >= a && z <= b {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.uniform();
        if rng.uniform_open().ln() <= -0.5 * z * z {
            return z;
        }
    }
}

fn one_sided(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    if (b - a) * lambda >= 1.0 {
        loop {
            let z = a - rng.uniform_open().ln() / lambda;
            if z > b {
                continue;
            }
            let d = z - lambda;
            if rng.uniform_open().ln() <= -0.5 * d * d {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.uniform();
        if rng.uniform_open().ln() <= 0.5 * (a * a - z * z) {
            return z;
        }
    }
}

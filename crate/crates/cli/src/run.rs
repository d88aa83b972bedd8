use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use kls_core::diagnostics::{self, TestSet};
use kls_core::isotropy::{estimate_mean_cov, iterated_gaussian_isotropy, write_isotropy_log};
use kls_core::linalg::unit;
use kls_core::sloc::{mass_below, needle_decompose, sloc_run, write_needle_cells, write_trajectories};
use kls_core::volume::{
    anneal_optimize, anneal_volume, cutting_plane_feasibility, write_optimize_trace, write_phase_trace,
    AnnealSchedule, Feasibility,
};
use kls_core::walks::exact_samples;
use kls_core::{Body, DensitySpec, RngStream, SampleMatrix};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Command, ExperimentConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunError {
    /// Bad configuration or arguments.
    Input(String),
    /// The computation itself failed.
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Input(m) => write!(f, "input error: {m}"),
            RunError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<kls_core::Error> for RunError {
    fn from(e: kls_core::Error) -> Self {
        if e.is_input_error() {
            RunError::Input(e.to_string())
        } else {
            RunError::Runtime(e.to_string())
        }
    }
}

/// Anything built straight from the configuration is the user's to fix.
fn input(e: kls_core::Error) -> RunError {
    RunError::Input(e.to_string())
}

fn io_err(path: &Path, e: io::Error) -> RunError {
    RunError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct Meta {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_sha256: String,
    seed: u64,
}

/// SHA-256 of the canonical JSON form of the configuration; seed, thread count
/// and output directory are excluded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("configuration serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

/// File name stem shared by every output of a run.
pub fn output_stem(command: Command, seed: u64) -> String {
    format!("{}_seed{seed}", command.name())
}

struct Outputs {
    dir: PathBuf,
    stem: String,
    meta: Meta,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn path(&self, suffix: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.{ext}", self.stem))
    }

    fn json<T: Serialize>(&mut self, suffix: &str, result: &T) -> Result<(), RunError> {
        let path = self.path(suffix, "json");
        let doc = json!({ "meta": &self.meta, "result": result });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| RunError::Runtime(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, suffix: &str, write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), RunError> {
        let path = self.path(suffix, "csv");
        let m = &self.meta;
        let mut buf = format!(
            "# {} {} command={} config_sha256={} seed={}\n",
            m.tool, m.version, m.command, m.config_sha256, m.seed
        )
        .into_bytes();
        write(&mut buf).map_err(|e| io_err(&path, e))?;
        fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs `command` on a worker pool of `cfg.threads` threads (all cores when
/// unset), writing its outputs to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, command: Command, out: &Path) -> Result<RunReport, RunError> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(RunError::Input(format!(
                "configuration is for `{}` but `{}` was requested",
                c.name(),
                command.name()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| RunError::Input(format!("{}: {e}", out.display())))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| RunError::Runtime(e.to_string()))?;
    let mut outputs = Outputs {
        dir: out.to_path_buf(),
        stem: output_stem(command, cfg.seed),
        meta: Meta {
            tool: "kls",
            version: VERSION,
            command: command.name(),
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
        },
        files: Vec::new(),
    };
    let summary = pool.install(|| {
        let mut rng = RngStream::new(cfg.seed, 0);
        match command {
            Command::Sample => sample(cfg, &mut outputs, &mut rng),
            Command::Constants => constants(cfg, &mut outputs, &mut rng),
            Command::Volume => volume(cfg, &mut outputs, &mut rng),
            Command::Optimize => optimize(cfg, &mut outputs, &mut rng),
            Command::Cutplane => cutplane(cfg, &mut outputs, &mut rng),
            Command::Sloc => sloc(cfg, &mut outputs, &mut rng),
            Command::Needles => needles(cfg, &mut outputs, &mut rng),
            Command::Isotropy => isotropy(cfg, &mut outputs, &mut rng),
        }
    })?;
    Ok(RunReport {
        summary: format!("{}: {summary}", command.name()),
        files: outputs.files,
    })
}

fn body(cfg: &ExperimentConfig) -> Result<Body, RunError> {
    cfg.body
        .as_ref()
        .ok_or_else(|| RunError::Input("this command needs a [body] table".into()))?
        .build()
        .map_err(input)
}

fn density(cfg: &ExperimentConfig) -> Result<DensitySpec, RunError> {
    cfg.density.build(body(cfg)?).map_err(input)
}

/// Halfspace through the interior point with normal `e₁`.
fn default_set(density: &DensitySpec) -> Result<TestSet, RunError> {
    let n = density.dim();
    let x0 = density.body().interior_point();
    TestSet::halfspace(&unit(n, 0), x0[0]).map_err(input)
}

/// Draws per the `[walk]` table, with the acceptance rate.
fn draw(cfg: &ExperimentConfig, density: &DensitySpec, rng: &mut RngStream) -> Result<(SampleMatrix, f64), RunError> {
    let w = &cfg.walk;
    if w.exact {
        let s = exact_samples(density, w.walk.n_samples, rng).ok_or_else(|| {
            RunError::Input("this density has no exact sampler; set walk.exact = false".into())
        })?;
        return Ok((s, 1.0));
    }
    let x0 = density.body().interior_point().to_vec();
    let (s, state) = w.walk.run(density, x0, rng)?;
    Ok((s, state.acceptance_rate()))
}

fn sample(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let d = density(cfg)?;
    let (s, acceptance) = draw(cfg, &d, &mut rng.fork(0))?;
    let (mean, cov) = estimate_mean_cov(&s)?;
    let n = s.dim();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cov.matrix()[(i, j)]).collect()).collect();
    out.csv("", |w| s.write_csv(w))?;
    out.json(
        "_summary",
        &json!({
            "n": n,
            "m": s.len(),
            "exact": cfg.walk.exact,
            "walk": cfg.walk.walk.kind.label(),
            "acceptance_rate": acceptance,
            "mean": mean,
            "covariance": rows,
        }),
    )?;
    let mean_norm = kls_core::linalg::norm(&mean);
    Ok(format!(
        "{} draws in n = {n}, acceptance {acceptance:.4}, |mean| = {mean_norm:.4}",
        s.len()
    ))
}

fn constants(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let d = density(cfg)?;
    let (s, _) = draw(cfg, &d, &mut rng.fork(0))?;
    let report = diagnostics::constants_report(&s, &mut rng.fork(1))?;
    let c = &cfg.constants;
    let mixing = match (c.conductance, c.warmness) {
        (Some(phi), Some(m)) => {
            let (lo, hi) = diagnostics::mixing_bounds(phi, m)?;
            let steps = c.tv_eps.map(|eps| diagnostics::steps_for_tv(phi, m, eps)).transpose()?;
            Some(json!({
                "conductance": phi,
                "warmness": m,
                "tv_bound_at_zero": diagnostics::conductance_tv_bound(phi, m, 0)?,
                "mixing_lower": lo,
                "mixing_upper": hi,
                "tv_eps": c.tv_eps,
                "steps_for_tv": steps,
            }))
        }
        _ => None,
    };
    let moments = c
        .moment_order
        .map(|k| kls_core::sloc::moment_inequality_check(&s, k))
        .transpose()?;
    out.json(
        "",
        &json!({
            "m": s.len(),
            "n": s.dim(),
            "report": &report,
            "mixing": mixing,
            "moments": moments,
        }),
    )?;
    let psi = &report.psi_halfspace;
    Ok(format!(
        "psi_halfspace = {:.4} ± {:.4} (m = {}, n = {})",
        psi.value,
        psi.std_error,
        s.len(),
        s.dim()
    ))
}

fn volume(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let b = body(cfg)?;
    let v = &cfg.volume;
    let schedule = AnnealSchedule::build(v.schedule, &b, v.config.samples_per_phase).map_err(input)?;
    let r = anneal_volume(&b, schedule, &v.config, rng)?;
    out.csv("_phases", |w| write_phase_trace(&r.phases, w))?;
    out.json("", &json!({ "exact_volume": b.volume(), "estimate": &r }))?;
    Ok(format!(
        "volume = {:.6} ± {:.6} ({}, {} phases)",
        r.volume.value,
        r.volume.std_error,
        v.schedule.label(),
        r.phases.len()
    ))
}

fn optimize(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let b = body(cfg)?;
    let o = &cfg.optimize;
    let cost = o
        .cost
        .as_ref()
        .ok_or_else(|| RunError::Input("optimize needs `optimize.cost`".into()))?;
    let r = anneal_optimize(&b, cost, &o.config, rng)?;
    out.csv("_trace", |w| write_optimize_trace(&r.trace, w))?;
    out.json("", &r)?;
    let last = r.trace.last();
    Ok(format!(
        "value = {:.6} (last phase mean {:.6} ± {:.6}, {} phases)",
        r.value,
        last.map_or(f64::NAN, |p| p.mean_value),
        last.map_or(f64::NAN, |p| p.se),
        r.phase_count
    ))
}

fn cutplane(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let b = body(cfg)?;
    let c = &cfg.cutplane;
    let big = c.outer_radius.unwrap_or(b.outer_radius());
    let r = c.inner_radius.unwrap_or(b.inner_radius());
    let o = cutting_plane_feasibility(&b, big, r, &c.config, rng)?;
    out.json("", &o)?;
    Ok(match &o.result {
        Feasibility::Feasible { .. } => format!("feasible after {} of {} iterations", o.iterations, o.max_iterations),
        Feasibility::Infeasible { .. } => format!("infeasible after {} iterations", o.iterations),
    })
}

fn sloc(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let d = density(cfg)?;
    let sets = if cfg.sloc.sets.is_empty() {
        vec![default_set(&d)?]
    } else {
        cfg.sloc.sets.clone()
    };
    let r = sloc_run(&d, &sets, &cfg.sloc.config, rng)?;
    out.csv("_trajectories", |w| write_trajectories(&r.records, &sets, w))?;
    out.json("", &r.summary)?;
    let s = &r.summary.sets[0];
    Ok(format!(
        "g_T = {:.4} ± {:.4} against g_0 = {:.4} ({} runs to T = {:.6}, balance {:.2})",
        s.g_t_mean, s.combined_se, s.g0_mean, cfg.sloc.config.n_runs, r.summary.t_end, s.balance_frequency
    ))
}

fn needles(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let d = density(cfg)?;
    let set = match &cfg.needles.set {
        Some(s) => s.clone(),
        None => default_set(&d)?,
    };
    let r = needle_decompose(&d, &set, &cfg.needles.config, rng)?;
    out.csv("_cells", |w| write_needle_cells(&r.cells, w))?;
    out.json("", &r)?;
    let eps2 = cfg.needles.config.eps.powi(2);
    let thin = r.cells.iter().filter(|c| c.second_variance <= eps2).fold(0.0, |acc, c| acc + c.weight);
    Ok(format!(
        "{} cells, set measure {:.4}, ε-thin mass {:.4}, mass with max variance ≤ 1: {:.4}",
        r.cells.len(),
        r.measure,
        thin,
        mass_below(&r, 1.0)
    ))
}

fn isotropy(cfg: &ExperimentConfig, out: &mut Outputs, rng: &mut RngStream) -> Result<String, RunError> {
    let b = body(cfg)?;
    let r = iterated_gaussian_isotropy(&b, &cfg.isotropy, rng)?;
    out.csv("_log", |w| write_isotropy_log(&r.log, w))?;
    let n = b.dim();
    let m = r.map.matrix();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    out.json(
        "",
        &json!({
            "converged": r.converged,
            "iterations": r.log.len(),
            "matrix": rows,
            "shift": r.map.shift(),
            "log": &r.log,
        }),
    )?;
    let last = r.log.last();
    Ok(format!(
        "{} after {} iterations, spectrum [{:.4}, {:.4}]",
        if r.converged { "converged" } else { "not converged" },
        r.log.len(),
        last.map_or(f64::NAN, |l| l.min_eig),
        last.map_or(f64::NAN, |l| l.max_eig)
    ))
}

//! Experiment configuration: a TOML document with a few top-level keys and one
//! table per concern.
//!
//! ```toml
//! seed = 1
//!
//! [body]
//! kind = "cube"
//! n = 4
//!
//! [walk]
//! kind = "ball_walk"
//! n_samples = 2000
//! ```
//!
//! Every problem found is reported, each with its line number.

use std::fmt;
use std::ops::Range;

use kls_core::diagnostics::TestSet;
use kls_core::isotropy::IsotropyConfig;
use kls_core::sloc::{Control, Horizon, NeedleConfig, SlocConfig, SlocOptions};
use kls_core::volume::{CutPlaneConfig, OptimizeConfig, ScheduleKind, VolumeConfig};
use kls_core::walks::{WalkConfig, WalkKind};
use kls_core::{Body, DensitySpec};
use serde::Serialize;
use toml::de::{DeTable, DeValue};
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Sample,
    Constants,
    Volume,
    Optimize,
    Cutplane,
    Sloc,
    Needles,
    Isotropy,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Sample,
        Command::Constants,
        Command::Volume,
        Command::Optimize,
        Command::Cutplane,
        Command::Sloc,
        Command::Needles,
        Command::Isotropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Constants => "constants",
            Command::Volume => "volume",
            Command::Optimize => "optimize",
            Command::Cutplane => "cutplane",
            Command::Sloc => "sloc",
            Command::Needles => "needles",
            Command::Isotropy => "isotropy",
        }
    }

    pub fn from_name(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BodyShape {
    Ball { n: usize, radius: f64, center: Option<Vec<f64>> },
    Cube { n: usize, half_width: f64 },
    IsotropicCube { n: usize },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Simplex { n: usize },
    IsotropicSimplex { n: usize },
    Ellipsoid { center: Option<Vec<f64>>, semi_axes: Vec<f64> },
    Polytope {
        rows: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        interior: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
    },
    /// The ball of radius `10√n`, a stand-in for `ℝⁿ` under Gaussian-type
    /// densities.
    WholeSpace { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BodySpec {
    pub shape: BodyShape,
    /// Weaker guarantees than the derived ones.
    pub inner_radius: Option<f64>,
    pub outer_radius: Option<f64>,
}

impl BodySpec {
    pub fn dim(&self) -> usize {
        match &self.shape {
            BodyShape::Ball { n, .. }
            | BodyShape::Cube { n, .. }
            | BodyShape::IsotropicCube { n }
            | BodyShape::Simplex { n }
            | BodyShape::IsotropicSimplex { n }
            | BodyShape::WholeSpace { n } => *n,
            BodyShape::Box { lo, .. } => lo.len(),
            BodyShape::Ellipsoid { semi_axes, .. } => semi_axes.len(),
            BodyShape::Polytope { interior, .. } => interior.len(),
        }
    }

    pub fn build(&self) -> kls_core::Result<Body> {
        let body = match &self.shape {
            BodyShape::Ball { n, radius, center } => match center {
                Some(c) => Body::ball_at(c.clone(), *radius)?,
                None => Body::ball(*n, *radius)?,
            },
            BodyShape::Cube { n, half_width } => Body::cube(*n, *half_width)?,
            BodyShape::IsotropicCube { n } => Body::isotropic_cube(*n)?,
            BodyShape::Box { lo, hi } => Body::axis_box(lo.clone(), hi.clone())?,
            BodyShape::Simplex { n } => Body::simplex(*n)?,
            BodyShape::IsotropicSimplex { n } => Body::isotropic_simplex(*n)?,
            BodyShape::Ellipsoid { center, semi_axes } => {
                let c = center.clone().unwrap_or_else(|| vec![0.0; semi_axes.len()]);
                Body::ellipsoid(c, semi_axes)?
            }
            BodyShape::Polytope {
                rows,
                offsets,
                interior,
                inner_radius,
                outer_radius,
            } => Body::polytope(rows.clone(), offsets.clone(), interior.clone(), *inner_radius, *outer_radius)?,
            BodyShape::WholeSpace { n } => Body::ball(*n, 10.0 * (*n as f64).sqrt())?,
        };
        if self.inner_radius.is_none() && self.outer_radius.is_none() {
            return Ok(body);
        }
        let inner = self.inner_radius.unwrap_or(body.inner_radius());
        let outer = self.outer_radius.unwrap_or(body.outer_radius());
        body.with_guarantee_radii(inner, outer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityChoice {
    Uniform,
    Gaussian { center: Option<Vec<f64>>, a: f64 },
    Exponential { center: Option<Vec<f64>>, alpha: f64 },
    Boltzmann { alpha: f64, cost: Vec<f64> },
}

impl DensityChoice {
    pub fn build(&self, body: Body) -> kls_core::Result<DensitySpec> {
        let n = body.dim();
        match self {
            DensityChoice::Uniform => Ok(DensitySpec::uniform(body)),
            DensityChoice::Gaussian { center, a } => {
                DensitySpec::gaussian(body, center.clone().unwrap_or_else(|| vec![0.0; n]), *a)
            }
            DensityChoice::Exponential { center, alpha } => {
                DensitySpec::exponential(body, center.clone().unwrap_or_else(|| vec![0.0; n]), *alpha)
            }
            DensityChoice::Boltzmann { alpha, cost } => DensitySpec::boltzmann(body, *alpha, cost.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkSection {
    #[serde(flatten)]
    pub walk: WalkConfig,
    /// Use exact draws when the density has an exact sampler.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeSection {
    pub schedule: ScheduleKind,
    #[serde(flatten)]
    pub config: VolumeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeSection {
    pub cost: Option<Vec<f64>>,
    #[serde(flatten)]
    pub config: OptimizeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutplaneSection {
    /// `None` uses the body's own guarantees.
    pub outer_radius: Option<f64>,
    pub inner_radius: Option<f64>,
    #[serde(flatten)]
    pub config: CutPlaneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlocSection {
    #[serde(flatten)]
    pub config: SlocConfig,
    /// Empty means one halfspace through the interior point, normal `e₁`.
    pub sets: Vec<TestSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedlesSection {
    #[serde(flatten)]
    pub config: NeedleConfig,
    pub set: Option<TestSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsSection {
    /// Conductance and warmness for the plug-in mixing bounds.
    pub conductance: Option<f64>,
    pub warmness: Option<f64>,
    pub tv_eps: Option<f64>,
    /// Order of the moment-inequality check, 3 or 4.
    pub moment_order: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    #[serde(skip)]
    pub seed: u64,
    /// Worker threads; `None` means all available cores. Never affects output.
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub out: Option<String>,
    pub body: Option<BodySpec>,
    pub density: DensityChoice,
    pub walk: WalkSection,
    pub volume: VolumeSection,
    pub optimize: OptimizeSection,
    pub cutplane: CutplaneSection,
    pub sloc: SlocSection,
    pub needles: NeedlesSection,
    pub isotropy: IsotropyConfig,
    pub constants: ConstantsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            seed: 0,
            threads: None,
            out: None,
            body: None,
            density: DensityChoice::Uniform,
            walk: WalkSection {
                walk: WalkConfig::default(),
                exact: false,
            },
            volume: VolumeSection {
                schedule: ScheduleKind::DfkBall,
                config: VolumeConfig::default(),
            },
            optimize: OptimizeSection {
                cost: None,
                config: OptimizeConfig::default(),
            },
            cutplane: CutplaneSection {
                outer_radius: None,
                inner_radius: None,
                config: CutPlaneConfig::default(),
            },
            sloc: SlocSection {
                config: SlocConfig::default(),
                sets: Vec::new(),
            },
            needles: NeedlesSection {
                config: NeedleConfig::default(),
                set: None,
            },
            isotropy: IsotropyConfig::default(),
            constants: ConstantsSection {
                conductance: None,
                warmness: None,
                tv_eps: None,
                moment_order: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Every problem found in a configuration, in line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

struct Ctx<'s> {
    src: &'s str,
    errors: Vec<ConfigError>,
}

impl Ctx<'_> {
    fn line(&self, span: &Range<usize>) -> usize {
        let end = span.start.min(self.src.len());
        self.src[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err(&mut self, span: &Range<usize>, message: String) {
        let line = self.line(span);
        self.errors.push(ConfigError { line, message });
    }
}

type Value<'i> = Spanned<DeValue<'i>>;

/// One table of the document, tracking which keys were read.
struct Section<'a, 'i> {
    path: String,
    span: Range<usize>,
    entries: Vec<(&'a Spanned<std::borrow::Cow<'i, str>>, &'a Value<'i>)>,
    used: Vec<bool>,
}

impl<'a, 'i> Section<'a, 'i> {
    fn new(path: &str, span: Range<usize>, table: &'a DeTable<'i>) -> Self {
        let entries: Vec<_> = table.iter().collect();
        let used = vec![false; entries.len()];
        Section {
            path: path.to_string(),
            span,
            entries,
            used,
        }
    }

    fn key(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a Value<'i>> {
        let i = self.entries.iter().position(|(k, _)| k.get_ref().as_ref() == key)?;
        self.used[i] = true;
        Some(self.entries[i].1)
    }

    fn has(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k.get_ref().as_ref() == key)
    }

    fn missing(&self, ctx: &mut Ctx, key: &str) {
        ctx.err(&self.span, format!("missing key `{}`", self.key(key)));
    }

    fn mismatch(&self, ctx: &mut Ctx, key: &str, v: &Value, want: &str) {
        ctx.err(
            &v.span(),
            format!("`{}` must be {want}, found {}", self.key(key), v.get_ref().type_str()),
        );
    }

    fn table(&mut self, ctx: &mut Ctx, key: &str) -> Option<Section<'a, 'i>> {
        let v = self.get(key)?;
        match v.get_ref() {
            DeValue::Table(t) => Some(Section::new(&self.key(key), v.span(), t)),
            _ => {
                self.mismatch(ctx, key, v, "a table");
                None
            }
        }
    }

    fn tables(&mut self, ctx: &mut Ctx, key: &str) -> Vec<Section<'a, 'i>> {
        let Some(v) = self.get(key) else { return Vec::new() };
        let path = self.key(key);
        match v.get_ref() {
            DeValue::Array(items) => items
                .iter()
                .enumerate()
                .filter_map(|(i, item)| match item.get_ref() {
                    DeValue::Table(t) => Some(Section::new(&format!("{path}[{i}]"), item.span(), t)),
                    _ => {
                        ctx.err(&item.span(), format!("`{path}[{i}]` must be a table"));
                        None
                    }
                })
                .collect(),
            DeValue::Table(t) => vec![Section::new(&path, v.span(), t)],
            _ => {
                self.mismatch(ctx, key, v, "an array of tables");
                Vec::new()
            }
        }
    }

    fn f64(&mut self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        let v = self.get(key)?;
        match number(v.get_ref()) {
            Some(x) => Some(x),
            None => {
                self.mismatch(ctx, key, v, "a number");
                None
            }
        }
    }

    fn f64_in(&mut self, ctx: &mut Ctx, key: &str, ok: impl Fn(f64) -> bool, what: &str) -> Option<f64> {
        let x = self.f64(ctx, key)?;
        if ok(x) {
            Some(x)
        } else {
            let span = self.get(key).map(|v| v.span()).unwrap_or(self.span.clone());
            ctx.err(&span, format!("`{}` = {x} is out of range: must be {what}", self.key(key)));
            None
        }
    }

    fn positive(&mut self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        self.f64_in(ctx, key, |x| x > 0.0 && x.is_finite(), "positive and finite")
    }

    fn finite(&mut self, ctx: &mut Ctx, key: &str) -> Option<f64> {
        self.f64_in(ctx, key, f64::is_finite, "finite")
    }

    fn int(&mut self, ctx: &mut Ctx, key: &str) -> Option<i128> {
        let v = self.get(key)?;
        match v.get_ref() {
            DeValue::Integer(i) => match i128::from_str_radix(i.as_str(), i.radix()) {
                Ok(x) => Some(x),
                Err(_) => {
                    ctx.err(&v.span(), format!("`{}` is not a representable integer", self.key(key)));
                    None
                }
            },
            _ => {
                self.mismatch(ctx, key, v, "an integer");
                None
            }
        }
    }

    fn int_in(&mut self, ctx: &mut Ctx, key: &str, lo: i128, hi: i128) -> Option<i128> {
        let x = self.int(ctx, key)?;
        if (lo..=hi).contains(&x) {
            Some(x)
        } else {
            let span = self.get(key).map(|v| v.span()).unwrap_or(self.span.clone());
            ctx.err(&span, format!("`{}` = {x} is out of range: must lie in [{lo}, {hi}]", self.key(key)));
            None
        }
    }

    /// Integer `≥ min`.
    fn count(&mut self, ctx: &mut Ctx, key: &str, min: usize) -> Option<usize> {
        self.int_in(ctx, key, min as i128, u32::MAX as i128).map(|x| x as usize)
    }

    fn boolean(&mut self, ctx: &mut Ctx, key: &str) -> Option<bool> {
        let v = self.get(key)?;
        match v.get_ref() {
            DeValue::Boolean(b) => Some(*b),
            _ => {
                self.mismatch(ctx, key, v, "a boolean");
                None
            }
        }
    }

    fn string(&mut self, ctx: &mut Ctx, key: &str) -> Option<String> {
        let v = self.get(key)?;
        match v.get_ref() {
            DeValue::String(s) => Some(s.to_string()),
            _ => {
                self.mismatch(ctx, key, v, "a string");
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, ctx: &mut Ctx, key: &str, options: &[(&str, T)]) -> Option<T> {
        let s = self.string(ctx, key)?;
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, t)) => Some(*t),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                let span = self.get(key).map(|v| v.span()).unwrap_or(self.span.clone());
                ctx.err(
                    &span,
                    format!("`{}` = \"{s}\" is not one of {}", self.key(key), names.join(", ")),
                );
                None
            }
        }
    }

    fn vector(&mut self, ctx: &mut Ctx, key: &str) -> Option<Vec<f64>> {
        let v = self.get(key)?;
        let out = vector(v.get_ref());
        match out {
            Some(x) if x.iter().all(|c| c.is_finite()) => Some(x),
            Some(_) => {
                ctx.err(&v.span(), format!("`{}` must have finite entries", self.key(key)));
                None
            }
            None => {
                self.mismatch(ctx, key, v, "an array of numbers");
                None
            }
        }
    }

    fn matrix(&mut self, ctx: &mut Ctx, key: &str) -> Option<Vec<Vec<f64>>> {
        let v = self.get(key)?;
        let rows = match v.get_ref() {
            DeValue::Array(items) => items.iter().map(|r| vector(r.get_ref())).collect::<Option<Vec<_>>>(),
            _ => None,
        };
        if rows.is_none() {
            self.mismatch(ctx, key, v, "an array of arrays of numbers");
        }
        rows
    }

    fn required<T>(&self, ctx: &mut Ctx, key: &str, v: Option<T>) -> Option<T> {
        if v.is_none() && !self.has(key) {
            self.missing(ctx, key);
        }
        v
    }

    /// Reports every key that was never read.
    fn finish(self, ctx: &mut Ctx) {
        for (i, (k, _)) in self.entries.iter().enumerate() {
            if !self.used[i] {
                ctx.err(&k.span(), format!("unknown key `{}`", self.key(k.get_ref())));
            }
        }
    }
}

fn number(v: &DeValue) -> Option<f64> {
    match v {
        DeValue::Float(f) => f.as_str().parse().ok(),
        DeValue::Integer(i) => i64::from_str_radix(i.as_str(), i.radix()).ok().map(|x| x as f64),
        _ => None,
    }
}

fn vector(v: &DeValue) -> Option<Vec<f64>> {
    match v {
        DeValue::Array(items) => items.iter().map(|x| number(x.get_ref())).collect(),
        _ => None,
    }
}

const WALKS: [(&str, WalkKind); 4] = [
    ("ball_walk", WalkKind::BallWalk),
    ("metropolis_ball", WalkKind::MetropolisBall),
    ("hit_and_run", WalkKind::HitAndRun),
    ("coordinate_hit_and_run", WalkKind::CoordinateHitAndRun),
];

/// Parses and validates a configuration, collecting every error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut ctx = Ctx {
        src: text,
        errors: Vec::new(),
    };
    let (doc, syntax) = DeTable::parse_recoverable(text);
    for e in syntax {
        let span = e.span().unwrap_or(0..0);
        ctx.err(&span, format!("syntax error: {}", e.message()));
    }
    let mut cfg = ExperimentConfig::default();
    let mut root = Section::new("", 0..0, doc.get_ref());

    if let Some(name) = root.string(&mut ctx, "command") {
        match Command::from_name(&name) {
            Some(c) => cfg.command = Some(c),
            None => {
                let span = root.get("command").unwrap().span();
                ctx.err(&span, format!("unknown command \"{name}\""));
            }
        }
    }
    if let Some(s) = root.int_in(&mut ctx, "seed", 0, u64::MAX as i128) {
        cfg.seed = s as u64;
    }
    cfg.threads = root.count(&mut ctx, "threads", 1);
    cfg.out = root.string(&mut ctx, "out");

    if let Some(mut s) = root.table(&mut ctx, "body") {
        cfg.body = parse_body(&mut ctx, &mut s);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "density") {
        if let Some(d) = parse_density(&mut ctx, &mut s) {
            cfg.density = d;
        }
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "walk") {
        parse_walk(&mut ctx, &mut s, &mut cfg.walk);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "volume") {
        parse_volume(&mut ctx, &mut s, &mut cfg.volume);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "optimize") {
        parse_optimize(&mut ctx, &mut s, &mut cfg.optimize);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "cutplane") {
        parse_cutplane(&mut ctx, &mut s, &mut cfg.cutplane);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "sloc") {
        parse_sloc(&mut ctx, &mut s, &mut cfg.sloc);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "needles") {
        parse_needles(&mut ctx, &mut s, &mut cfg.needles);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "isotropy") {
        parse_isotropy(&mut ctx, &mut s, &mut cfg.isotropy);
        s.finish(&mut ctx);
    }
    if let Some(mut s) = root.table(&mut ctx, "constants") {
        parse_constants(&mut ctx, &mut s, &mut cfg.constants);
        s.finish(&mut ctx);
    }
    root.finish(&mut ctx);

    if let Some(b) = &cfg.body {
        check_dims(&mut ctx, &cfg, b.dim());
    }
    if ctx.errors.is_empty() {
        Ok(cfg)
    } else {
        let mut errors = ctx.errors;
        errors.sort_by_key(|e| e.line);
        Err(ConfigErrors(errors))
    }
}

fn parse_body(ctx: &mut Ctx, s: &mut Section) -> Option<BodySpec> {
    let kinds = [
        ("ball", 0),
        ("cube", 1),
        ("isotropic_cube", 2),
        ("box", 3),
        ("simplex", 4),
        ("isotropic_simplex", 5),
        ("ellipsoid", 6),
        ("polytope", 7),
        ("whole_space", 8),
    ];
    let kind = s.choice(ctx, "kind", &kinds);
    let kind = s.required(ctx, "kind", kind);
    let inner_radius = s.positive(ctx, "inner_radius");
    let outer_radius = s.positive(ctx, "outer_radius");
    let Some(kind) = kind else {
        // no kind: the remaining keys cannot be judged
        s.used.iter_mut().for_each(|u| *u = true);
        return None;
    };
    let dim = |s: &mut Section, ctx: &mut Ctx| {
        let n = s.count(ctx, "n", 1);
        s.required(ctx, "n", n)
    };
    let shape = match kind {
        0 => {
            let n = dim(s, ctx);
            let radius = s.positive(ctx, "radius").unwrap_or(1.0);
            let center = s.vector(ctx, "center");
            BodyShape::Ball {
                n: n?,
                radius,
                center,
            }
        }
        1 => {
            let n = dim(s, ctx);
            let half_width = s.positive(ctx, "half_width").unwrap_or(1.0);
            BodyShape::Cube { n: n?, half_width }
        }
        2 => BodyShape::IsotropicCube { n: dim(s, ctx)? },
        3 => {
            let lo = s.vector(ctx, "lo");
            let lo = s.required(ctx, "lo", lo);
            let hi = s.vector(ctx, "hi");
            let hi = s.required(ctx, "hi", hi);
            let (lo, hi) = (lo?, hi?);
            if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| a >= b) {
                ctx.err(&s.span, format!("`{}` and `{}` must have equal positive length with lo < hi", s.key("lo"), s.key("hi")));
                return None;
            }
            BodyShape::Box { lo, hi }
        }
        4 => BodyShape::Simplex { n: dim(s, ctx)? },
        5 => BodyShape::IsotropicSimplex { n: dim(s, ctx)? },
        6 => {
            let center = s.vector(ctx, "center");
            let semi_axes = s.vector(ctx, "semi_axes");
            let semi_axes = s.required(ctx, "semi_axes", semi_axes)?;
            if semi_axes.is_empty() || semi_axes.iter().any(|a| *a <= 0.0) {
                ctx.err(&s.span, format!("`{}` must be nonempty and positive", s.key("semi_axes")));
                return None;
            }
            BodyShape::Ellipsoid { center, semi_axes }
        }
        7 => {
            let rows = s.matrix(ctx, "rows");
            let rows = s.required(ctx, "rows", rows);
            let offsets = s.vector(ctx, "offsets");
            let offsets = s.required(ctx, "offsets", offsets);
            let interior = s.vector(ctx, "interior");
            let interior = s.required(ctx, "interior", interior);
            // for a polytope the guarantees are part of the definition
            let inner = s.required(ctx, "inner_radius", inner_radius);
            let outer = s.required(ctx, "outer_radius", outer_radius);
            return Some(BodySpec {
                shape: BodyShape::Polytope {
                    rows: rows?,
                    offsets: offsets?,
                    interior: interior?,
                    inner_radius: inner?,
                    outer_radius: outer?,
                },
                inner_radius: None,
                outer_radius: None,
            });
        }
        _ => BodyShape::WholeSpace { n: dim(s, ctx)? },
    };
    Some(BodySpec {
        shape,
        inner_radius,
        outer_radius,
    })
}

fn parse_density(ctx: &mut Ctx, s: &mut Section) -> Option<DensityChoice> {
    let kinds = [("uniform", 0), ("gaussian", 1), ("exponential", 2), ("boltzmann", 3)];
    let kind = s.choice(ctx, "kind", &kinds);
    let Some(kind) = s.required(ctx, "kind", kind) else {
        s.used.iter_mut().for_each(|u| *u = true);
        return None;
    };
    match kind {
        0 => Some(DensityChoice::Uniform),
        1 => Some(DensityChoice::Gaussian {
            center: s.vector(ctx, "center"),
            a: s.positive(ctx, "a").unwrap_or(1.0),
        }),
        2 => {
            let center = s.vector(ctx, "center");
            let alpha = s.positive(ctx, "alpha");
            Some(DensityChoice::Exponential {
                center,
                alpha: s.required(ctx, "alpha", alpha)?,
            })
        }
        _ => {
            let alpha = s.positive(ctx, "alpha");
            let alpha = s.required(ctx, "alpha", alpha);
            let cost = s.vector(ctx, "cost");
            let cost = s.required(ctx, "cost", cost);
            Some(DensityChoice::Boltzmann {
                alpha: alpha?,
                cost: cost?,
            })
        }
    }
}

fn parse_walk(ctx: &mut Ctx, s: &mut Section, w: &mut WalkSection) {
    if let Some(k) = s.choice(ctx, "kind", &WALKS) {
        w.walk.kind = k;
    }
    w.walk.delta = s.positive(ctx, "delta");
    w.walk.burn_in = s.count(ctx, "burn_in", 0);
    w.walk.thin = s.count(ctx, "thin", 1);
    if let Some(m) = s.count(ctx, "n_samples", 1) {
        w.walk.n_samples = m;
    }
    if let Some(e) = s.boolean(ctx, "exact") {
        w.exact = e;
    }
}

fn parse_volume(ctx: &mut Ctx, s: &mut Section, v: &mut VolumeSection) {
    let schedules = [
        ("dfk_ball", ScheduleKind::DfkBall),
        ("lv_exponential", ScheduleKind::LvExponential),
        ("gaussian_cooling", ScheduleKind::GaussianCooling),
    ];
    if let Some(k) = s.choice(ctx, "schedule", &schedules) {
        v.schedule = k;
    }
    if let Some(k) = s.count(ctx, "samples_per_phase", 40) {
        v.config.samples_per_phase = k;
    }
    v.config.walk = s.choice(ctx, "walk", &WALKS);
    v.config.thin = s.count(ctx, "thin", 1);
    v.config.burn_in = s.count(ctx, "burn_in", 0);
    if let Some(c) = s.count(ctx, "chains", 1) {
        v.config.chains = c;
    }
    v.config.delta = s.positive(ctx, "delta");
}

fn parse_optimize(ctx: &mut Ctx, s: &mut Section, o: &mut OptimizeSection) {
    o.cost = s.vector(ctx, "cost");
    if let Some(c) = &o.cost {
        if c.iter().all(|v| *v == 0.0) {
            ctx.err(&s.span, format!("`{}` must be nonzero", s.key("cost")));
        }
    }
    if let Some(e) = s.positive(ctx, "eps") {
        o.config.eps = e;
    }
    o.config.samples_per_phase = s.count(ctx, "samples_per_phase", 2);
    if let Some(k) = s.choice(ctx, "walk", &WALKS) {
        o.config.walk = k;
    }
    o.config.thin = s.count(ctx, "thin", 1);
}

fn parse_cutplane(ctx: &mut Ctx, s: &mut Section, c: &mut CutplaneSection) {
    c.outer_radius = s.positive(ctx, "outer_radius");
    c.inner_radius = s.positive(ctx, "inner_radius");
    if let (Some(r), Some(big)) = (c.inner_radius, c.outer_radius) {
        if r >= big {
            ctx.err(&s.span, format!("`{}` must be smaller than `{}`", s.key("inner_radius"), s.key("outer_radius")));
        }
    }
    c.config.samples_per_iter = s.count(ctx, "samples_per_iter", 2);
    c.config.thin = s.count(ctx, "thin", 1);
    c.config.burn_in = s.count(ctx, "burn_in", 0);
}

fn parse_set(ctx: &mut Ctx, s: &mut Section) -> Option<TestSet> {
    let kinds = [("halfspace", 0), ("slab", 1), ("ball", 2)];
    let kind = s.choice(ctx, "kind", &kinds);
    let Some(kind) = s.required(ctx, "kind", kind) else {
        s.used.iter_mut().for_each(|u| *u = true);
        return None;
    };
    let build = |r: kls_core::Result<TestSet>, ctx: &mut Ctx, s: &Section| match r {
        Ok(t) => Some(t),
        Err(e) => {
            ctx.err(&s.span, format!("`{}`: {e}", s.path));
            None
        }
    };
    match kind {
        0 => {
            let normal = s.vector(ctx, "normal");
            let normal = s.required(ctx, "normal", normal);
            let offset = s.finite(ctx, "offset").unwrap_or(0.0);
            build(TestSet::halfspace(&normal?, offset), ctx, s)
        }
        1 => {
            let normal = s.vector(ctx, "normal");
            let normal = s.required(ctx, "normal", normal);
            let lo = s.finite(ctx, "lo");
            let lo = s.required(ctx, "lo", lo);
            let hi = s.finite(ctx, "hi");
            let hi = s.required(ctx, "hi", hi);
            build(TestSet::slab(&normal?, lo?, hi?), ctx, s)
        }
        _ => {
            let center = s.vector(ctx, "center");
            let center = s.required(ctx, "center", center);
            let radius = s.positive(ctx, "radius");
            let radius = s.required(ctx, "radius", radius);
            build(TestSet::ball(center?, radius?), ctx, s)
        }
    }
}

fn parse_sloc(ctx: &mut Ctx, s: &mut Section, c: &mut SlocSection) {
    let t_end = s.positive(ctx, "t_end");
    let t_scale = s.positive(ctx, "t_scale");
    match (t_end, t_scale) {
        (Some(_), Some(_)) => ctx.err(
            &s.span,
            format!("`{}` and `{}` are mutually exclusive", s.key("t_end"), s.key("t_scale")),
        ),
        (Some(t), None) => c.config.horizon = Horizon::Absolute(t),
        (None, Some(k)) => c.config.horizon = Horizon::PotentialScaled(k),
        (None, None) => {}
    }
    c.config.h = s.positive(ctx, "h");
    c.config.steps = s.count(ctx, "steps", 1);
    if let (Some(h), Some(t)) = (c.config.h, t_end) {
        if h > t {
            ctx.err(&s.span, format!("`{}` = {h} exceeds `{}` = {t}", s.key("h"), s.key("t_end")));
        }
    }
    if let Some(r) = s.count(ctx, "n_runs", 1) {
        c.config.n_runs = r;
    }
    c.config.record_every = s.count(ctx, "record_every", 1);
    parse_sloc_options(ctx, s, &mut c.config.options);
    for mut t in s.tables(ctx, "sets") {
        if let Some(set) = parse_set(ctx, &mut t) {
            c.sets.push(set);
        }
        t.finish(ctx);
    }
}

fn parse_sloc_options(ctx: &mut Ctx, s: &mut Section, o: &mut SlocOptions) {
    o.k = s.count(ctx, "k", 40);
    o.thin = s.count(ctx, "thin", 1);
    o.q = s.int_in(ctx, "q", 2, 64).map(|q| q as u32);
    let controls = [("identity", Control::Identity), ("inverse_sqrt_cov", Control::InverseSqrtCov)];
    if let Some(k) = s.choice(ctx, "control", &controls) {
        o.control = k;
    }
    if let Some(b) = s.boolean(ctx, "closed_form") {
        o.closed_form = b;
    }
}

fn parse_needles(ctx: &mut Ctx, s: &mut Section, c: &mut NeedlesSection) {
    if let Some(e) = s.positive(ctx, "eps") {
        c.config.eps = e;
    }
    if let Some(d) = s.count(ctx, "max_depth", 0) {
        c.config.max_depth = d;
    }
    if let Some(k) = s.count(ctx, "k", 2) {
        c.config.k = k;
    }
    c.config.thin = s.count(ctx, "thin", 1);
    if let Some(mut t) = s.table(ctx, "set") {
        c.set = parse_set(ctx, &mut t);
        t.finish(ctx);
    }
}

fn parse_isotropy(ctx: &mut Ctx, s: &mut Section, c: &mut IsotropyConfig) {
    if let Some(m) = s.count(ctx, "max_iters", 1) {
        c.max_iters = m;
    }
    if let Some(v) = s.positive(ctx, "eig_lo") {
        c.eig_lo = v;
    }
    if let Some(v) = s.positive(ctx, "eig_hi") {
        c.eig_hi = v;
    }
    if c.eig_lo > c.eig_hi {
        ctx.err(&s.span, format!("`{}` must not exceed `{}`", s.key("eig_lo"), s.key("eig_hi")));
    }
    c.samples_per_iter = s.count(ctx, "samples_per_iter", 2);
    if let Some(k) = s.choice(ctx, "walk", &WALKS) {
        c.walk = k;
    }
    c.thin = s.count(ctx, "thin", 1);
}

fn parse_constants(ctx: &mut Ctx, s: &mut Section, c: &mut ConstantsSection) {
    c.conductance = s.f64_in(ctx, "conductance", |x| x > 0.0 && x <= 1.0, "in (0, 1]");
    c.warmness = s.f64_in(ctx, "warmness", |x| x >= 1.0 && x.is_finite(), "at least 1");
    c.tv_eps = s.f64_in(ctx, "tv_eps", |x| x > 0.0 && x < 1.0, "in (0, 1)");
    if c.conductance.is_some() != c.warmness.is_some() {
        ctx.err(
            &s.span,
            format!("`{}` and `{}` must be given together", s.key("conductance"), s.key("warmness")),
        );
    }
    c.moment_order = s.int_in(ctx, "moment_order", 3, 4).map(|k| k as u32);
}

/// Dimension agreement between the body and every vector-valued key.
fn check_dims(ctx: &mut Ctx, cfg: &ExperimentConfig, n: usize) {
    let mut check = |what: &str, len: usize| {
        if len != n {
            ctx.errors.push(ConfigError {
                line: 1,
                message: format!("`{what}` has length {len}, but the body has dimension {n}"),
            });
        }
    };
    match &cfg.body.as_ref().unwrap().shape {
        BodyShape::Ball { center: Some(c), .. } => check("body.center", c.len()),
        BodyShape::Ellipsoid { center: Some(c), .. } => check("body.center", c.len()),
        BodyShape::Polytope { rows, .. } => {
            for r in rows {
                check("body.rows", r.len());
            }
        }
        _ => {}
    }
    match &cfg.density {
        DensityChoice::Gaussian { center: Some(c), .. } | DensityChoice::Exponential { center: Some(c), .. } => {
            check("density.center", c.len())
        }
        DensityChoice::Boltzmann { cost, .. } => check("density.cost", cost.len()),
        _ => {}
    }
    if let Some(c) = &cfg.optimize.cost {
        check("optimize.cost", c.len());
    }
    for t in &cfg.sloc.sets {
        check("sloc.sets", t.dim());
    }
    if let Some(t) = &cfg.needles.set {
        check("needles.set", t.dim());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sample_config() {
        let cfg = parse_config("seed = 1\n[body]\nkind = \"cube\"\nn = 4\n[walk]\nkind = \"ball_walk\"\n").unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.walk.walk.kind, WalkKind::BallWalk);
        assert_eq!(cfg.body.unwrap().dim(), 4);
    }

    #[test]
    fn negative_delta_names_the_key() {
        let e = parse_config("[walk]\ndelta = -1\n").unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].line, 2);
        assert!(e.0[0].message.contains("walk.delta"), "{e}");
    }

    #[test]
    fn every_error_is_reported() {
        let text = "seed = -3\n[walk]\nthin = 0\nspeed = 2\n[sloc]\ncontrol = \"none\"\n";
        let e = parse_config(text).unwrap_err();
        let lines: Vec<usize> = e.0.iter().map(|x| x.line).collect();
        assert_eq!(lines, vec![1, 3, 4, 6], "{e}");
        assert!(e.0[2].message.contains("unknown key `walk.speed`"));
    }

    #[test]
    fn type_mismatch_and_missing_keys() {
        let e = parse_config("[body]\nkind = \"ball\"\nradius = \"big\"\n").unwrap_err();
        let text = e.to_string();
        assert!(text.contains("missing key `body.n`"), "{text}");
        assert!(text.contains("`body.radius` must be a number, found string"), "{text}");
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = parse_config("seed = 1\n[body\n").unwrap_err();
        assert_eq!(e.0[0].line, 2);
    }

    #[test]
    fn sloc_sets_and_dimension_check() {
        let text = "[body]\nkind = \"isotropic_cube\"\nn = 3\n[sloc]\nt_scale = 0.25\n\
                    [[sloc.sets]]\nkind = \"halfspace\"\nnormal = [1, 0, 0]\n\
                    [[sloc.sets]]\nkind = \"ball\"\ncenter = [0, 0]\nradius = 1.0\n";
        let e = parse_config(text).unwrap_err();
        assert!(e.to_string().contains("`sloc.sets` has length 2"), "{e}");
        let ok = text.replace("center = [0, 0]", "center = [0, 0, 0]");
        let cfg = parse_config(&ok).unwrap();
        assert_eq!(cfg.sloc.sets.len(), 2);
        assert_eq!(cfg.sloc.config.horizon, Horizon::PotentialScaled(0.25));
    }

    #[test]
    fn every_body_kind_builds() {
        for body in [
            "kind = \"ball\"\nn = 2\nradius = 2.0\ncenter = [0.5, 0]",
            "kind = \"cube\"\nn = 2\nhalf_width = 0.5",
            "kind = \"isotropic_cube\"\nn = 2",
            "kind = \"box\"\nlo = [0, 0]\nhi = [1, 2]",
            "kind = \"simplex\"\nn = 2",
            "kind = \"isotropic_simplex\"\nn = 2",
            "kind = \"ellipsoid\"\nsemi_axes = [1, 3]",
            "kind = \"polytope\"\nrows = [[1, 0], [-1, 0], [0, 1], [0, -1]]\noffsets = [1, 1, 1, 1]\ninterior = [0, 0]\ninner_radius = 0.5\nouter_radius = 2",
            "kind = \"whole_space\"\nn = 2",
            "kind = \"cube\"\nn = 2\ninner_radius = 0.5\nouter_radius = 3",
        ] {
            let cfg = parse_config(&format!("[body]\n{body}\n")).unwrap();
            let b = cfg.body.unwrap().build().unwrap();
            assert_eq!(b.dim(), 2, "{body}");
        }
    }
}

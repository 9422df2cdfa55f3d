//! Experiment configuration: an INI file with `[family]`, `[run]` and
//! `[tolerances]` sections.
//!
//! ```ini
//! [family]
//! v1 = const:1            ; or poly:c0,c1,c2
//! beta = 1
//! mu = 0.3
//! delta_exponent = 0.3
//! delta_scale = 0.05
//! step = poly             ; tanh | poly
//! bump = cosine           ; cosine | quartic
//! split = symmetric       ; upper | symmetric | <lower fraction>
//!
//! [run]
//! eps_list = 0.04, 0.02, 0.01
//! kappa = 0.2
//! kappa0 = 0.05
//! dt = auto
//! n_paths = 5000
//! T = 0.05
//! lambda = 50
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use narrowtube_core::{BaseProfile, BumpShape, ExampleFamilySpec, StepShape, WallSplit};
use serde::Serialize;
use thiserror::Error;

pub const SEED_ENV: &str = "NARROWTUBE_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("[{section}] {key}: {msg}")]
    Value { section: &'static str, key: String, msg: String },
    #[error("missing [{section}] {key}")]
    Missing { section: &'static str, key: &'static str },
    #[error("unknown key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("{0}")]
    Invalid(String),
}

/// Time step for the path samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DtPolicy {
    /// Module defaults: `min(1e-6, ε²/25)` in the tube, `min(1e-6, (δ/10)²)`
    /// for the hat process.
    Auto,
    Fixed(f64),
}

impl DtPolicy {
    pub fn resolve(self, default: f64) -> f64 {
        match self {
            DtPolicy::Auto => default,
            DtPolicy::Fixed(dt) => dt,
        }
    }
}

/// Vertical start position on the cross-section above `start_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StartY {
    Mid,
    /// Fraction of the cross-section, 0 at the lower wall and 1 at the upper.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SimulatorKind {
    Tube,
    Hat,
    Ctmc,
}

impl SimulatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimulatorKind::Tube => "tube",
            SimulatorKind::Hat => "hat",
            SimulatorKind::Ctmc => "ctmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub eps_list: Vec<f64>,
    pub kappa: f64,
    pub kappa0: f64,
    /// Exit radii for the linear-coefficient fit of the CTMC exit time.
    pub kappa_list: Vec<f64>,
    pub dt: DtPolicy,
    pub n_paths: usize,
    /// Horizon of the marginal experiments.
    #[serde(rename = "T")]
    pub horizon: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Not part of the config hash: results do not depend on it.
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub output: PathBuf,
    pub start_x: f64,
    pub start_y: StartY,
    pub t_max: f64,
    pub ctmc_nodes: usize,
    pub hat: bool,
    /// `(nx, ny)` of the finite-difference exit-time oracle, if requested.
    pub fd_grid: Option<(usize, usize)>,
    pub local_time_paths: usize,
    pub simulators: Vec<SimulatorKind>,
    pub test_functions: usize,
    pub violation_shift: f64,
    pub control: Option<SimulatorKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub p_plus_abs: f64,
    pub p_plus_sigma: f64,
    pub exit_time_rel: f64,
    pub ctmc_rel: f64,
    pub theta_rel: f64,
    pub agreement_sigma: f64,
    pub agreement_rel: f64,
    pub fd_abs: f64,
    pub ks_max: f64,
    pub ks_noise: f64,
    pub ks_y_max: f64,
    pub resolvent_sigma: f64,
    pub control_sigma: f64,
    pub zeta: f64,
    pub derivative_bound: f64,
    pub xi_slack: f64,
    pub region: (f64, f64),
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            p_plus_abs: 0.02,
            p_plus_sigma: 3.0,
            exit_time_rel: 0.10,
            ctmc_rel: 0.02,
            theta_rel: 0.10,
            agreement_sigma: 3.0,
            agreement_rel: 0.05,
            fd_abs: 1e-3,
            ks_max: 0.05,
            ks_noise: 0.01,
            ks_y_max: 0.02,
            resolvent_sigma: 3.0,
            control_sigma: 5.0,
            zeta: 0.1,
            derivative_bound: 10.0,
            xi_slack: 0.05,
            region: (0.5, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub family: ExampleFamilySpec,
    pub run: RunConfig,
    pub tolerances: Tolerances,
}

/// Command-line and environment overrides, in decreasing priority after
/// the command line: config file, then [`SEED_ENV`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub env_seed: Option<String>,
}

impl Overrides {
    pub fn from_env(self) -> Self {
        Self { env_seed: std::env::var(SEED_ENV).ok(), ..self }
    }
}

type Section = BTreeMap<String, String>;

struct Reader {
    name: &'static str,
    entries: Section,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value { section: self.name, key: key.to_string(), msg: msg.into() }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            Some(s) => parse_f64(&s).map_err(|m| self.err(key, m)),
            None => Ok(default),
        }
    }

    fn f64_req(&mut self, key: &'static str) -> Result<f64, ConfigError> {
        let s = self.take(key).ok_or(ConfigError::Missing { section: self.name, key })?;
        parse_f64(&s).map_err(|m| self.err(key, m))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key) {
            Some(s) => s.trim().parse().map_err(|_| self.err(key, format!("expected a non-negative integer, got {s:?}"))),
            None => Ok(default),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key).as_deref().map(str::trim) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(s) => Err(self.err(key, format!("expected true or false, got {s:?}"))),
        }
    }

    fn list_or(&mut self, key: &str, default: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        match self.take(key) {
            Some(s) => parse_list(&s).map_err(|m| self.err(key, m)),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_keys().next() {
            Some(key) => Err(ConfigError::UnknownKey { section: self.name.to_string(), key }),
            None => Ok(()),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("expected a number, got {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_f64).collect()
}

fn parse_v1(s: &str) -> Result<BaseProfile, String> {
    let (kind, args) = s.trim().split_once(':').ok_or_else(|| format!("expected const:c or poly:c0,c1,c2, got {s:?}"))?;
    let args = parse_list(args)?;
    match (kind.trim(), args.as_slice()) {
        ("const", [c]) => Ok(BaseProfile::Const(*c)),
        ("poly", [c0, c1, c2]) => Ok(BaseProfile::Poly([*c0, *c1, *c2])),
        ("const", _) => Err("const takes one coefficient".into()),
        ("poly", _) => Err("poly takes three coefficients c0,c1,c2".into()),
        (k, _) => Err(format!("unknown profile kind {k:?}")),
    }
}

fn parse_step(s: &str) -> Result<StepShape, String> {
    match s.trim() {
        "tanh" | "smoothed-step-tanh" => Ok(StepShape::Tanh),
        "poly" | "smoothed-step-poly" => Ok(StepShape::Poly),
        o => Err(format!("unknown step shape {o:?}")),
    }
}

fn parse_bump(s: &str) -> Result<BumpShape, String> {
    match s.trim() {
        "cosine" | "cosine-bump" => Ok(BumpShape::Cosine),
        "quartic" | "quartic-bump" => Ok(BumpShape::Quartic),
        o => Err(format!("unknown bump shape {o:?}")),
    }
}

fn parse_split(s: &str) -> Result<WallSplit, String> {
    match s.trim() {
        "upper" => Ok(WallSplit::UPPER_ONLY),
        "symmetric" => Ok(WallSplit::SYMMETRIC),
        o => {
            let f = parse_f64(o)?;
            if (0.0..=1.0).contains(&f) {
                Ok(WallSplit { lower_fraction: f })
            } else {
                Err(format!("lower fraction {f} outside [0, 1]"))
            }
        }
    }
}

fn parse_seed(s: &str) -> Result<u64, String> {
    s.trim().parse().map_err(|_| format!("expected an unsigned integer seed, got {s:?}"))
}

fn parse_simulators(s: &str) -> Result<Vec<SimulatorKind>, String> {
    let mut out: Vec<SimulatorKind> = s.split(',').map(parse_simulator).collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn parse_simulator(s: &str) -> Result<SimulatorKind, String> {
    match s.trim() {
        "tube" => Ok(SimulatorKind::Tube),
        "hat" => Ok(SimulatorKind::Hat),
        "ctmc" => Ok(SimulatorKind::Ctmc),
        o => Err(format!("unknown simulator {o:?}")),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.trim().split_once('x').ok_or_else(|| format!("expected NXxNY, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad grid size {t:?}"));
    Ok((p(a)?, p(b)?))
}

/// Drops a trailing `# ...` or `; ...` comment that follows whitespace.
fn strip_comment(v: &str) -> &str {
    let cut = v.char_indices().find(|&(i, c)| (c == '#' || c == ';') && v[..i].ends_with([' ', '\t'])).map(|(i, _)| i);
    v[..cut.unwrap_or(v.len())].trim_end()
}

fn sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let ini = ini::Ini::load_from_str_noescape(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (name, props) in ini.iter() {
        let entries: Section = props.iter().map(|(k, v)| (k.to_string(), strip_comment(v).to_string())).collect();
        match name {
            None if entries.is_empty() => {}
            None => {
                let key = entries.into_keys().next().unwrap_or_default();
                return Err(ConfigError::UnknownKey { section: "(top level)".into(), key });
            }
            Some(n) => {
                if !matches!(n, "family" | "run" | "tolerances") {
                    return Err(ConfigError::Syntax(format!("unknown section [{n}]")));
                }
                out.insert(n.to_string(), entries);
            }
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut secs = sections(text)?;
        let mut reader = |name: &'static str| Reader { name, entries: secs.remove(name).unwrap_or_default() };
        let mut fam = reader("family");
        let mut run = reader("run");
        let mut tol = reader("tolerances");

        let v1_text = fam.take("v1").ok_or(ConfigError::Missing { section: "family", key: "v1" })?;
        let v1 = parse_v1(&v1_text).map_err(|m| fam.err("v1", m))?;
        let beta = fam.f64_or("beta", 0.0)?;
        let mu = fam.f64_or("mu", 0.0)?;
        let r = fam.f64_or("delta_exponent", 0.3)?;
        let mut family = ExampleFamilySpec::new(v1, beta, mu, r)
            .with_delta_scale(fam.f64_or("delta_scale", 1.0)?)
            .with_halfwidth(fam.f64_or("halfwidth", ExampleFamilySpec::DEFAULT_HALFWIDTH)?);
        let defaults = family;
        let step = match fam.take("step") {
            Some(s) => parse_step(&s).map_err(|m| fam.err("step", m))?,
            None => defaults.step,
        };
        let bump = match fam.take("bump") {
            Some(s) => parse_bump(&s).map_err(|m| fam.err("bump", m))?,
            None => defaults.bump,
        };
        family = family.with_shapes(step, bump);
        if let Some(s) = fam.take("split") {
            family = family.with_split(parse_split(&s).map_err(|m| fam.err("split", m))?);
        }
        fam.finish()?;

        let eps_text = run.take("eps_list").ok_or(ConfigError::Missing { section: "run", key: "eps_list" })?;
        let eps_list = parse_list(&eps_text).map_err(|m| run.err("eps_list", m))?;
        let kappa = run.f64_req("kappa")?;
        let kappa0 = run.f64_or("kappa0", 0.5 * kappa)?;
        let kappa_list = run.list_or("kappa_list", vec![kappa])?;
        let dt = match run.take("dt").as_deref().map(str::trim) {
            None | Some("auto") => DtPolicy::Auto,
            Some(s) => DtPolicy::Fixed(parse_f64(s).map_err(|m| run.err("dt", m))?),
        };
        let n_paths = run.usize_or("n_paths", 10_000)?;
        let horizon = run.f64_or("T", 0.05)?;
        let lambda = run.f64_or("lambda", 20.0)?;
        let file_seed = match run.take("seed") {
            Some(s) => Some(parse_seed(&s).map_err(|m| run.err("seed", m))?),
            None => None,
        };
        let env_seed = match &overrides.env_seed {
            Some(s) => Some(parse_seed(s).map_err(|m| ConfigError::Invalid(format!("{SEED_ENV}: {m}")))?),
            None => None,
        };
        let seed = overrides.seed.or(file_seed).or(env_seed).unwrap_or(0);
        let workers = run.usize_or("workers", 1)?;
        let workers = overrides.workers.unwrap_or(workers);
        let output = run.take("output").map(|s| PathBuf::from(s.trim())).unwrap_or_else(|| PathBuf::from("out"));
        let output = overrides.output.clone().unwrap_or(output);
        let start_x = run.f64_or("start_x", 0.0)?;
        let start_y = match run.take("start_y").as_deref().map(str::trim) {
            None | Some("mid") => StartY::Mid,
            Some(s) => StartY::Fraction(parse_f64(s).map_err(|m| run.err("start_y", m))?),
        };
        let t_max = run.f64_or("t_max", 10.0)?;
        let ctmc_nodes = run.usize_or("ctmc_nodes", 2001)?;
        let hat = run.bool_or("hat", false)?;
        let fd_grid = match run.take("fd_grid") {
            Some(s) => Some(parse_grid(&s).map_err(|m| run.err("fd_grid", m))?),
            None => None,
        };
        let local_time_paths = run.usize_or("local_time_paths", 0)?;
        let simulators = match run.take("simulators") {
            Some(s) => parse_simulators(&s).map_err(|m| run.err("simulators", m))?,
            None => vec![SimulatorKind::Tube, SimulatorKind::Ctmc],
        };
        let test_functions = run.usize_or("test_functions", 3)?;
        let violation_shift = run.f64_or("violation_shift", 0.5)?;
        let control = match run.take("control").as_deref().map(str::trim) {
            None => Some(SimulatorKind::Tube),
            Some("none") => None,
            Some(s) => Some(parse_simulator(s).map_err(|m| run.err("control", m))?),
        };
        run.finish()?;

        let d = Tolerances::default();
        let tolerances = Tolerances {
            p_plus_abs: tol.f64_or("p_plus_abs", d.p_plus_abs)?,
            p_plus_sigma: tol.f64_or("p_plus_sigma", d.p_plus_sigma)?,
            exit_time_rel: tol.f64_or("exit_time_rel", d.exit_time_rel)?,
            ctmc_rel: tol.f64_or("ctmc_rel", d.ctmc_rel)?,
            theta_rel: tol.f64_or("theta_rel", d.theta_rel)?,
            agreement_sigma: tol.f64_or("agreement_sigma", d.agreement_sigma)?,
            agreement_rel: tol.f64_or("agreement_rel", d.agreement_rel)?,
            fd_abs: tol.f64_or("fd_abs", d.fd_abs)?,
            ks_max: tol.f64_or("ks_max", d.ks_max)?,
            ks_noise: tol.f64_or("ks_noise", d.ks_noise)?,
            ks_y_max: tol.f64_or("ks_y_max", d.ks_y_max)?,
            resolvent_sigma: tol.f64_or("resolvent_sigma", d.resolvent_sigma)?,
            control_sigma: tol.f64_or("control_sigma", d.control_sigma)?,
            zeta: tol.f64_or("zeta", d.zeta)?,
            derivative_bound: tol.f64_or("derivative_bound", d.derivative_bound)?,
            xi_slack: tol.f64_or("xi_slack", d.xi_slack)?,
            region: match tol.take("region") {
                Some(s) => match parse_list(&s).map_err(|m| tol.err("region", m))?.as_slice() {
                    [a, b] => (*a, *b),
                    _ => return Err(tol.err("region", "expected two numbers k_lo, k_hi")),
                },
                None => d.region,
            },
        };
        tol.finish()?;

        let cfg = ExperimentConfig {
            family,
            run: RunConfig {
                eps_list,
                kappa,
                kappa0,
                kappa_list,
                dt,
                n_paths,
                horizon,
                lambda,
                seed,
                workers,
                output,
                start_x,
                start_y,
                t_max,
                ctmc_nodes,
                hat,
                fd_grid,
                local_time_paths,
                simulators,
                test_functions,
                violation_shift,
                control,
            },
            tolerances,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the invariants that do not depend on the command. The family's
    /// `r ∈ (0, 1/3)` bound is left to the commands, so that the assumption
    /// checker can evaluate families outside it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let f = &self.family;
        let r = f.delta_exponent;
        if !(r > 0.0 && r < 1.0) {
            return bad(format!("delta_exponent = {r} must lie in (0, 1)"));
        }
        let mut probe = *f;
        probe.delta_exponent = 0.25;
        probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let run = &self.run;
        if run.eps_list.is_empty() {
            return bad("eps_list is empty".into());
        }
        if let Some(e) = run.eps_list.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
            return bad(format!("eps = {e} outside (0, 1)"));
        }
        if run.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps_list must be strictly decreasing".into());
        }
        if !(run.kappa > 0.0 && run.kappa <= f.halfwidth) {
            return bad(format!("kappa = {} outside (0, halfwidth]", run.kappa));
        }
        if !(run.kappa0 > 0.0 && run.kappa0 < run.kappa) {
            return bad(format!("kappa0 = {} must satisfy 0 < kappa0 < kappa", run.kappa0));
        }
        if run.kappa_list.iter().any(|&k| !(k > 0.0 && k <= f.halfwidth)) {
            return bad("kappa_list entries must lie in (0, halfwidth]".into());
        }
        if let DtPolicy::Fixed(dt) = run.dt {
            if !(dt > 0.0) {
                return bad(format!("dt = {dt} must be positive"));
            }
        }
        if run.n_paths < 100 {
            return bad(format!("n_paths = {} is below 100", run.n_paths));
        }
        if !(run.horizon > 0.0) || !(run.lambda > 0.0) || !(run.t_max > 0.0) {
            return bad("T, lambda and t_max must be positive".into());
        }
        if !(run.start_x.abs() < run.kappa) {
            return bad(format!("start_x = {} must lie inside (-kappa, kappa)", run.start_x));
        }
        if let StartY::Fraction(q) = run.start_y {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("start_y = {q} outside [0, 1]"));
            }
        }
        if run.ctmc_nodes < 5 {
            return bad("ctmc_nodes must be at least 5".into());
        }
        if run.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if run.test_functions == 0 {
            return bad("test_functions must be at least 1".into());
        }
        if self.tolerances.region.0 <= 0.0 || self.tolerances.region.1 <= self.tolerances.region.0 {
            return bad("region must satisfy 0 < k_lo < k_hi".into());
        }
        Ok(())
    }
}

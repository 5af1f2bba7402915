//! Run configuration: a TOML document of `key = value` lines with optional
//! `[degree_distribution]` and `[solver]` tables.
//!
//! ```toml
//! ensemble = "raptor"          # random_linear | raptor | user_shape_file
//! inner_rate = 0.8
//! outer_rate = 0.99
//! epsilon = "0.01:0.09:0.01"   # start:stop:step, a list, or one value
//! n = [200, 400]
//! trials = 100000
//! seed = 1
//!
//! [degree_distribution]
//! 1 = 0.0098
//! 2 = 0.4590
//!
//! [solver]
//! bisection_tol = 1e-12
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use ecbound_core::{DegreeDistribution, EnsembleParams, RaptorParams, SolverSettings, TabulatedShape};
use serde::Deserialize;
use toml::Spanned;

pub const DEFAULT_FIELD_ORDER: u32 = 2;
pub const DEFAULT_TRIALS: u64 = 10_000;
pub const DEFAULT_SEED: u64 = 0;

/// Prefix of the config echo lines in CSV metadata.
pub const ECHO_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleConfig {
    RandomLinear(EnsembleParams),
    Raptor(RaptorParams),
    UserShape { params: EnsembleParams, shape_file: PathBuf },
}

impl EnsembleConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleConfig::RandomLinear(_) => "random_linear",
            EnsembleConfig::Raptor(_) => "raptor",
            EnsembleConfig::UserShape { .. } => "user_shape_file",
        }
    }

    pub fn ensemble_params(&self) -> EnsembleParams {
        match self {
            EnsembleConfig::RandomLinear(p) | EnsembleConfig::UserShape { params: p, .. } => *p,
            EnsembleConfig::Raptor(r) => r.ensemble_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ensemble: EnsembleConfig,
    /// Resolved erasure-probability grid.
    pub epsilon: Vec<f64>,
    pub n: Vec<usize>,
    pub awe_file: Option<PathBuf>,
    pub trials: u64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub solver: SolverSettings,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EpsilonValue {
    One(f64),
    List(Vec<f64>),
    Range(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CountValue {
    One(i64),
    List(Vec<i64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    omega_min: Option<Spanned<f64>>,
    omega_log_points: Option<Spanned<i64>>,
    omega_linear_points: Option<Spanned<i64>>,
    delta_grid_points: Option<Spanned<i64>>,
    positivity_tol: Option<Spanned<f64>>,
    bisection_tol: Option<Spanned<f64>>,
    raptor_scan_step: Option<Spanned<f64>>,
    system_tol: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    ensemble: Spanned<String>,
    rate: Option<Spanned<f64>>,
    field_order: Option<Spanned<i64>>,
    inner_rate: Option<Spanned<f64>>,
    outer_rate: Option<Spanned<f64>>,
    shape_file: Option<Spanned<String>>,
    awe_file: Option<Spanned<String>>,
    epsilon: Option<Spanned<EpsilonValue>>,
    n: Option<Spanned<CountValue>>,
    trials: Option<Spanned<i64>>,
    seed: Option<Spanned<i64>>,
    output: Option<Spanned<String>>,
    degree_distribution: Option<Spanned<BTreeMap<String, Spanned<f64>>>>,
    solver: Option<Spanned<RawSolver>>,
}

struct Ctx<'a> {
    text: &'a str,
    base: Option<&'a Path>,
}

impl Ctx<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn err<T>(&self, span: std::ops::Range<usize>, msg: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError {
            line: Some(self.line_of(span.start)),
            message: msg.into(),
        })
    }

    fn path(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        match self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    }
}

fn required<'a, T>(field: &'a Option<Spanned<T>>, name: &str, ensemble: &Spanned<String>, ctx: &Ctx) -> Result<&'a Spanned<T>, ConfigError> {
    match field {
        Some(v) => Ok(v),
        None => ctx.err(
            ensemble.span(),
            format!("ensemble {} requires `{name}`", ensemble.get_ref()),
        ),
    }
}

fn reject<T>(field: &Option<Spanned<T>>, name: &str, ensemble: &str, ctx: &Ctx) -> Result<(), ConfigError> {
    match field {
        Some(v) => ctx.err(v.span(), format!("`{name}` does not apply to ensemble {ensemble}")),
        None => Ok(()),
    }
}

/// Inclusive `start:stop:step` grid, rounded to 12 decimals.
pub fn resolve_range(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("range `{text}` is not start:stop:step"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start {
        return Err(format!("range `{text}` needs step > 0 and stop >= start"));
    }
    let k = ((stop - start) / step).round();
    if (start + k * step - stop).abs() > 1e-9 * stop.abs().max(1.0) {
        return Err(format!("range `{text}`: stop is not start plus a whole number of steps"));
    }
    if k > 1e6 {
        return Err(format!("range `{text}` has more than 1e6 points"));
    }
    let k = k as usize;
    Ok((0..=k)
        .map(|i| if i == k { stop } else { ((start + i as f64 * step) * 1e12).round() / 1e12 })
        .collect())
}

fn positive_count(v: &Spanned<i64>, name: &str, ctx: &Ctx) -> Result<usize, ConfigError> {
    if *v.get_ref() < 1 {
        return ctx.err(v.span(), format!("`{name}` must be at least 1"));
    }
    Ok(*v.get_ref() as usize)
}

fn finite_positive(v: &Spanned<f64>, name: &str, ctx: &Ctx) -> Result<f64, ConfigError> {
    let x = *v.get_ref();
    if !(x > 0.0 && x.is_finite()) {
        return ctx.err(v.span(), format!("`{name}` must be positive"));
    }
    Ok(x)
}

fn solver_settings(raw: &Option<Spanned<RawSolver>>, ctx: &Ctx) -> Result<SolverSettings, ConfigError> {
    let mut s = SolverSettings::default();
    let Some(raw) = raw else {
        return Ok(s);
    };
    let r = raw.get_ref();
    if let Some(v) = &r.omega_min {
        s.omega_min = finite_positive(v, "omega_min", ctx)?;
        if s.omega_min >= 1e-2 {
            return ctx.err(v.span(), "`omega_min` must be below 1e-2");
        }
    }
    if let Some(v) = &r.omega_log_points {
        s.omega_log_points = positive_count(v, "omega_log_points", ctx)?;
    }
    if let Some(v) = &r.omega_linear_points {
        s.omega_linear_points = positive_count(v, "omega_linear_points", ctx)?;
    }
    if let Some(v) = &r.delta_grid_points {
        s.delta_grid_points = positive_count(v, "delta_grid_points", ctx)?;
    }
    if let Some(v) = &r.positivity_tol {
        s.positivity_tol = finite_positive(v, "positivity_tol", ctx)?;
    }
    if let Some(v) = &r.bisection_tol {
        s.bisection_tol = finite_positive(v, "bisection_tol", ctx)?;
    }
    if let Some(v) = &r.raptor_scan_step {
        s.raptor_scan_step = finite_positive(v, "raptor_scan_step", ctx)?;
    }
    if let Some(v) = &r.system_tol {
        s.system_tol = finite_positive(v, "system_tol", ctx)?;
    }
    Ok(s)
}

fn ensemble_params(raw: &RawConfig, ctx: &Ctx) -> Result<EnsembleParams, ConfigError> {
    let rate = required(&raw.rate, "rate", &raw.ensemble, ctx)?;
    let q = match &raw.field_order {
        Some(q) if *q.get_ref() < 2 || *q.get_ref() > u32::MAX as i64 => {
            return ctx.err(q.span(), format!("field_order {} must be at least 2", q.get_ref()));
        }
        Some(q) => *q.get_ref() as u32,
        None => DEFAULT_FIELD_ORDER,
    };
    EnsembleParams::new(*rate.get_ref(), q).or_else(|e| ctx.err(rate.span(), e.to_string()))
}

fn degree_distribution(raw: &RawConfig, ctx: &Ctx) -> Result<DegreeDistribution, ConfigError> {
    let table = required(&raw.degree_distribution, "[degree_distribution]", &raw.ensemble, ctx)?;
    let mut terms = Vec::with_capacity(table.get_ref().len());
    for (k, v) in table.get_ref() {
        let d: u32 = match k.trim().parse() {
            Ok(d) if d > 0 => d,
            _ => return ctx.err(v.span(), format!("degree `{k}` is not a positive integer")),
        };
        terms.push((d, *v.get_ref(), v.span()));
    }
    terms.sort_by_key(|t| t.0);
    for w in terms.windows(2) {
        if w[0].0 == w[1].0 {
            return ctx.err(w[1].2.clone(), format!("degree {} listed twice", w[1].0));
        }
    }
    DegreeDistribution::new(terms.iter().map(|t| (t.0, t.1)).collect())
        .or_else(|e| ctx.err(table.span(), e.to_string()))
}

/// Parse and validate a config. Relative paths resolve against `base`.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ConfigError {
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    let ctx = Ctx { text, base };
    let name = raw.ensemble.get_ref().as_str();
    let ensemble = match name {
        "random_linear" => {
            reject(&raw.inner_rate, "inner_rate", name, &ctx)?;
            reject(&raw.outer_rate, "outer_rate", name, &ctx)?;
            reject(&raw.shape_file, "shape_file", name, &ctx)?;
            reject(&raw.degree_distribution, "degree_distribution", name, &ctx)?;
            EnsembleConfig::RandomLinear(ensemble_params(&raw, &ctx)?)
        }
        "raptor" => {
            reject(&raw.rate, "rate", name, &ctx)?;
            reject(&raw.shape_file, "shape_file", name, &ctx)?;
            if let Some(q) = &raw.field_order {
                if *q.get_ref() != 2 {
                    return ctx.err(q.span(), "raptor ensembles are binary: field_order must be 2");
                }
            }
            let ri = required(&raw.inner_rate, "inner_rate", &raw.ensemble, &ctx)?;
            let ro = required(&raw.outer_rate, "outer_rate", &raw.ensemble, &ctx)?;
            let omega = degree_distribution(&raw, &ctx)?;
            let params = RaptorParams::new(*ri.get_ref(), *ro.get_ref(), omega)
                .or_else(|e| ctx.err(ri.span(), e.to_string()))?;
            EnsembleConfig::Raptor(params)
        }
        "user_shape_file" => {
            reject(&raw.inner_rate, "inner_rate", name, &ctx)?;
            reject(&raw.outer_rate, "outer_rate", name, &ctx)?;
            reject(&raw.degree_distribution, "degree_distribution", name, &ctx)?;
            let params = ensemble_params(&raw, &ctx)?;
            let file = required(&raw.shape_file, "shape_file", &raw.ensemble, &ctx)?;
            let path = ctx.path(file.get_ref());
            TabulatedShape::from_file(params, &path).or_else(|e| ctx.err(file.span(), e.to_string()))?;
            EnsembleConfig::UserShape {
                params,
                shape_file: path,
            }
        }
        other => {
            return ctx.err(
                raw.ensemble.span(),
                format!("unknown ensemble `{other}` (expected random_linear, raptor or user_shape_file)"),
            )
        }
    };

    let epsilon = match &raw.epsilon {
        None => Vec::new(),
        Some(s) => {
            let grid = match s.get_ref() {
                EpsilonValue::One(x) => vec![*x],
                EpsilonValue::List(v) => v.clone(),
                EpsilonValue::Range(r) => resolve_range(r).or_else(|m| ctx.err(s.span(), m))?,
            };
            if grid.is_empty() {
                return ctx.err(s.span(), "epsilon grid is empty");
            }
            if grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return ctx.err(s.span(), "epsilon values must lie in [0, 1]");
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return ctx.err(s.span(), "epsilon grid must be strictly increasing");
            }
            grid
        }
    };

    let n = match &raw.n {
        None => Vec::new(),
        Some(s) => {
            let v = match s.get_ref() {
                CountValue::One(x) => vec![*x],
                CountValue::List(v) => v.clone(),
            };
            if v.is_empty() || v.iter().any(|&x| x < 1) {
                return ctx.err(s.span(), "n must be a positive integer or a nonempty list of them");
            }
            v.into_iter().map(|x| x as usize).collect()
        }
    };

    let trials = match &raw.trials {
        None => DEFAULT_TRIALS,
        Some(t) => positive_count(t, "trials", &ctx)? as u64,
    };
    let seed = match &raw.seed {
        None => DEFAULT_SEED,
        Some(s) if *s.get_ref() < 0 => return ctx.err(s.span(), "seed must be nonnegative"),
        Some(s) => *s.get_ref() as u64,
    };
    let awe_file = match &raw.awe_file {
        None => None,
        Some(f) => {
            let p = ctx.path(f.get_ref());
            if !p.is_file() {
                return ctx.err(f.span(), format!("awe_file {} not found", p.display()));
            }
            Some(p)
        }
    };

    Ok(RunConfig {
        ensemble,
        epsilon,
        n,
        awe_file,
        trials,
        seed,
        output: raw.output.as_ref().map(|o| ctx.path(o.get_ref())),
        solver: solver_settings(&raw.solver, &ctx)?,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text, path.parent())
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn quoted(p: &Path) -> String {
    toml::Value::String(p.to_string_lossy().into_owned()).to_string()
}

/// Canonical TOML for a config; parses back to an equal [`RunConfig`].
pub fn echo(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ensemble = \"{}\"", cfg.ensemble.name());
    match &cfg.ensemble {
        EnsembleConfig::RandomLinear(p) => {
            let _ = writeln!(s, "rate = {}\nfield_order = {}", f(p.rate), p.field_order);
        }
        EnsembleConfig::Raptor(r) => {
            let _ = writeln!(s, "inner_rate = {}\nouter_rate = {}", f(r.inner_rate), f(r.outer_rate));
        }
        EnsembleConfig::UserShape { params, shape_file } => {
            let _ = writeln!(s, "rate = {}\nfield_order = {}", f(params.rate), params.field_order);
            let _ = writeln!(s, "shape_file = {}", quoted(shape_file));
        }
    }
    if !cfg.epsilon.is_empty() {
        let v: Vec<String> = cfg.epsilon.iter().map(|&e| f(e)).collect();
        let _ = writeln!(s, "epsilon = [{}]", v.join(", "));
    }
    if !cfg.n.is_empty() {
        let v: Vec<String> = cfg.n.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "n = [{}]", v.join(", "));
    }
    if let Some(a) = &cfg.awe_file {
        let _ = writeln!(s, "awe_file = {}", quoted(a));
    }
    let _ = writeln!(s, "trials = {}\nseed = {}", cfg.trials, cfg.seed);
    if let Some(o) = &cfg.output {
        let _ = writeln!(s, "output = {}", quoted(o));
    }
    if let EnsembleConfig::Raptor(r) = &cfg.ensemble {
        s.push_str("\n[degree_distribution]\n");
        for &(d, p) in r.omega.terms() {
            let _ = writeln!(s, "{d} = {}", f(p));
        }
    }
    let t = &cfg.solver;
    let _ = write!(
        s,
        "\n[solver]\nomega_min = {}\nomega_log_points = {}\nomega_linear_points = {}\ndelta_grid_points = {}\n\
         positivity_tol = {}\nbisection_tol = {}\nraptor_scan_step = {}\nsystem_tol = {}\n",
        f(t.omega_min),
        t.omega_log_points,
        t.omega_linear_points,
        t.delta_grid_points,
        f(t.positivity_tol),
        f(t.bisection_tol),
        f(t.raptor_scan_step),
        f(t.system_tol),
    );
    s
}

/// Recover the config echoed in a CSV metadata preamble.
pub fn config_from_csv(csv: &str) -> Result<RunConfig, ConfigError> {
    let text: String = csv
        .lines()
        .filter_map(|l| l.strip_prefix(ECHO_PREFIX).or_else(|| (l == ECHO_PREFIX.trim_end()).then_some("")))
        .map(|l| format!("{l}\n"))
        .collect();
    parse_config(&text, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_resolution() {
        let g = resolve_range("0.05:0.45:0.05").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[2], 0.15);
        assert_eq!(g[8], 0.45);
        assert!(resolve_range("0.1:0.45:0.1").is_err());
        assert!(resolve_range("0.1:0.2").is_err());
        assert!(resolve_range("0.3:0.2:0.1").is_err());
    }

    #[test]
    fn error_lines() {
        let e = parse_config("ensemble = \"random_linear\"\nrate = 0.5\nbogus = 1\n", None).unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = parse_config("ensemble = \"random_linear\"\nrate = 1.5\n", None).unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = parse_config("ensemble = \"random_linear\"\nrate = 0.5\nepsilon = \"0:1\"\n", None).unwrap_err();
        assert_eq!(e.line, Some(3));
    }
}

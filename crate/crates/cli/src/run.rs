//! Subcommand execution and CSV rendering.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ecbound_core::exponent::{
    exponent_random_linear_closed_form, threshold_random_linear_closed_form, threshold_raptor_with,
};
use ecbound_core::simulate::{raptor_dimensions, LT_MODEL};
use ecbound_core::spectral::{RandomLinearShape, RaptorShape};
use ecbound_core::{
    awe_random_linear, bound_curve, monte_carlo, Ensemble, Error, ExponentSolver, SpectralShape, TabulatedShape,
    ThresholdResult, WeightEnumerator,
};

use crate::config::{echo, EnsembleConfig, RunConfig, ECHO_PREFIX};

pub const TOOL_NAME: &str = "ecbound";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ECBOUND_THREADS";

/// Metadata key whose line is excluded from determinism comparisons.
pub const TIMESTAMP_KEY: &str = "timestamp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Exponent,
    Threshold,
    FiniteBound,
    Simulate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Exponent => "exponent",
            Command::Threshold => "threshold",
            Command::FiniteBound => "finite-bound",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub cross_check: bool,
    /// Written as the `timestamp` metadata line when present.
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunError {
    Config(String),
    NonConvergence(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::NonConvergence(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::NonConvergence(m) => write!(f, "solver did not converge: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Convergence { .. } | Error::Bracket { .. } | Error::Evaluation { .. } => {
                RunError::NonConvergence(e.to_string())
            }
            _ => RunError::Config(e.to_string()),
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Config(msg.into()))
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

struct Table {
    meta: Vec<(String, String)>,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table {
            meta: Vec::new(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn meta(&mut self, k: impl Into<String>, v: impl fmt::Display) {
        self.meta.push((k.into(), v.to_string()));
    }
}

fn render(cmd: Command, cfg: &RunConfig, opts: &RunOptions, table: Table) -> Result<String, RunError> {
    let mut out = String::new();
    out.push_str(&format!("# tool = {TOOL_NAME} {TOOL_VERSION}\n"));
    out.push_str(&format!("# command = {}\n", cmd.as_str()));
    if let Some(t) = &opts.timestamp {
        out.push_str(&format!("# {TIMESTAMP_KEY} = {t}\n"));
    }
    for line in echo(cfg).lines() {
        out.push_str(ECHO_PREFIX);
        out.push_str(line);
        out.push('\n');
    }
    for (k, v) in &table.meta {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header).map_err(|e| RunError::Io(e.to_string()))?;
    for r in &table.rows {
        w.write_record(r).map_err(|e| RunError::Io(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| RunError::Io(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| RunError::Io(e.to_string()))?);
    Ok(out)
}

/// Lines of a CSV that take part in determinism comparisons.
pub fn comparable_lines(csv: &str) -> Vec<&str> {
    let ts = format!("# {TIMESTAMP_KEY} =");
    csv.lines().filter(|l| !l.starts_with(&ts)).collect()
}

/// Non-comment lines of a CSV.
pub fn csv_body(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

fn build_shape(cfg: &RunConfig) -> Result<Box<dyn SpectralShape>, RunError> {
    Ok(match &cfg.ensemble {
        EnsembleConfig::RandomLinear(p) => Box::new(RandomLinearShape::new(*p)),
        EnsembleConfig::Raptor(r) => Box::new(RaptorShape::new(r.clone())),
        EnsembleConfig::UserShape { params, shape_file } => Box::new(TabulatedShape::from_file(*params, shape_file)?),
    })
}

fn require_epsilon(cfg: &RunConfig, open: bool) -> Result<(), RunError> {
    if cfg.epsilon.is_empty() {
        return config_err(format!("`epsilon` is required"));
    }
    if open && cfg.epsilon.iter().any(|&e| e <= 0.0 || e >= 1.0) {
        return config_err("exponent needs epsilon values strictly inside (0, 1)");
    }
    Ok(())
}

fn run_exponent(cfg: &RunConfig, opts: &RunOptions) -> Result<Table, RunError> {
    require_epsilon(cfg, true)?;
    let rl = match (&cfg.ensemble, opts.cross_check) {
        (EnsembleConfig::RandomLinear(p), true) => Some(*p),
        (_, true) => return config_err("--cross-check for exponent needs ensemble = random_linear"),
        _ => None,
    };
    let shape = build_shape(cfg)?;
    let solver = ExponentSolver::with_settings(shape.as_ref(), cfg.solver);
    let curve = solver.curve(&cfg.epsilon)?;
    let mut table = if rl.is_some() {
        Table::new(&["epsilon", "E_G", "argmin_delta", "closed_form", "abs_diff"])
    } else {
        Table::new(&["epsilon", "E_G", "argmin_delta"])
    };
    table.meta("shape", shape.label());
    table.meta("gamma", fmt_f64(shape.gamma()));
    let mut max_diff: f64 = 0.0;
    for p in &curve.points {
        let mut row = vec![fmt_f64(p.epsilon), fmt_f64(p.value), fmt_f64(p.argmin_delta)];
        if let Some(params) = rl {
            let exact = exponent_random_linear_closed_form(params, p.epsilon);
            let d = (p.value - exact).abs();
            max_diff = max_diff.max(d);
            row.push(fmt_f64(exact));
            row.push(fmt_f64(d));
        }
        table.rows.push(row);
    }
    if rl.is_some() {
        table.meta("cross_check_max_abs_diff", fmt_f64(max_diff));
    }
    Ok(table)
}

fn threshold_row(r: &ThresholdResult) -> Vec<String> {
    let (r1, r2) = match r.residuals {
        Some([a, b]) => (Some(a), Some(b)),
        None => (None, None),
    };
    vec![
        fmt_f64(r.delta_star),
        r.method.as_str().to_string(),
        opt(r.lambda_hat),
        opt(r1),
        opt(r2),
        r.useful.to_string(),
    ]
}

fn run_threshold(cfg: &RunConfig, opts: &RunOptions) -> Result<Table, RunError> {
    let shape = build_shape(cfg)?;
    let solver = ExponentSolver::with_settings(shape.as_ref(), cfg.solver);
    let mut table = Table::new(&["delta_star", "method", "lambda_hat", "residual_f1", "residual_f2", "useful"]);
    table.meta("shape", shape.label());
    table.meta("gamma", fmt_f64(shape.gamma()));
    let primary = match &cfg.ensemble {
        EnsembleConfig::RandomLinear(p) => threshold_random_linear_closed_form(*p),
        EnsembleConfig::Raptor(r) => threshold_raptor_with(r, &cfg.solver)?,
        EnsembleConfig::UserShape { .. } => {
            if opts.cross_check {
                return config_err("--cross-check for threshold needs ensemble = random_linear or raptor");
            }
            solver.threshold()?
        }
    };
    table.rows.push(threshold_row(&primary));
    if opts.cross_check {
        let check = solver.threshold()?;
        table.meta("cross_check_abs_diff", fmt_f64((check.delta_star - primary.delta_star).abs()));
        table.rows.push(threshold_row(&check));
    }
    Ok(table)
}

fn run_finite_bound(cfg: &RunConfig) -> Result<Table, RunError> {
    require_epsilon(cfg, false)?;
    let params = cfg.ensemble.ensemble_params();
    let awes: Vec<WeightEnumerator> = match (&cfg.awe_file, &cfg.ensemble) {
        (Some(path), _) => {
            let awe = WeightEnumerator::from_file(path)?;
            if !cfg.n.is_empty() && cfg.n != [awe.n()] {
                return config_err(format!("n = {:?} conflicts with awe_file block length {}", cfg.n, awe.n()));
            }
            vec![awe]
        }
        (None, EnsembleConfig::RandomLinear(p)) => {
            if cfg.n.is_empty() {
                return config_err("`n` is required");
            }
            cfg.n.iter().map(|&n| awe_random_linear(n, *p)).collect::<Result<_, _>>()?
        }
        (None, _) => return config_err("finite-bound needs ensemble = random_linear or an awe_file"),
    };
    let mut table = Table::new(&["epsilon", "n", "bound", "log2_bound"]);
    for awe in &awes {
        if let Some(r) = awe.realized_rate() {
            table.meta(format!("realized_rate[n={}]", awe.n()), fmt_f64(r));
        }
        for p in bound_curve(awe, params, &cfg.epsilon)? {
            table.rows.push(vec![
                fmt_f64(p.epsilon),
                p.n.to_string(),
                fmt_f64(p.bound),
                fmt_f64(p.log2_bound.log2()),
            ]);
        }
    }
    Ok(table)
}

/// Seed of the `i`-th simulation point.
pub fn point_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) & (i64::MAX as u64)
}

fn run_simulate(cfg: &RunConfig) -> Result<Table, RunError> {
    require_epsilon(cfg, false)?;
    if cfg.n.is_empty() {
        return config_err("`n` is required");
    }
    let ensemble = match &cfg.ensemble {
        EnsembleConfig::RandomLinear(p) => Ensemble::RandomLinear(*p),
        EnsembleConfig::Raptor(r) => Ensemble::Raptor(r.clone()),
        EnsembleConfig::UserShape { .. } => return config_err("simulate needs ensemble = random_linear or raptor"),
    };
    let mut table = Table::new(&["epsilon", "n", "trials", "failures", "p_hat", "ci", "seed"]);
    table.meta("ci", "wilson_95_halfwidth");
    if let EnsembleConfig::Raptor(r) = &cfg.ensemble {
        table.meta("lt_model", LT_MODEL);
        for &n in &cfg.n {
            let (k, h) = raptor_dimensions(n, r)?;
            table.meta(format!("dimensions[n={n}]"), format!("k={k},h={h},realized_rate={}", fmt_f64(k as f64 / n as f64)));
        }
    }
    let mut resamples = 0u64;
    let mut i = 0;
    for &n in &cfg.n {
        for &e in &cfg.epsilon {
            let seed = point_seed(cfg.seed, i);
            i += 1;
            let est = monte_carlo(&ensemble, n, e, cfg.trials, seed)?;
            resamples += est.outer_resamples;
            table.rows.push(vec![
                fmt_f64(e),
                n.to_string(),
                est.trials.to_string(),
                est.failures.to_string(),
                fmt_f64(est.p_hat),
                fmt_f64(est.ci_halfwidth),
                seed.to_string(),
            ]);
        }
    }
    if matches!(cfg.ensemble, EnsembleConfig::Raptor(_)) {
        table.meta("outer_resamples", resamples);
    }
    Ok(table)
}

/// Run a subcommand and return the full CSV text.
pub fn run_command(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<String, RunError> {
    let table = match cmd {
        Command::Exponent => run_exponent(cfg, opts)?,
        Command::Threshold => run_threshold(cfg, opts)?,
        Command::FiniteBound => run_finite_bound(cfg)?,
        Command::Simulate => run_simulate(cfg)?,
    };
    render(cmd, cfg, opts, table)
}

/// Resolved plan printed by `--dry-run`.
pub fn plan(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<String, RunError> {
    let mut s = format!("{TOOL_NAME} {TOOL_VERSION}: {} (dry run)\n", cmd.as_str());
    let eps = cfg.epsilon.len();
    let line = match cmd {
        Command::Exponent => {
            require_epsilon(cfg, true)?;
            format!("evaluate E_G at {eps} epsilon points")
        }
        Command::Threshold => format!("compute delta* for ensemble {}", cfg.ensemble.name()),
        Command::FiniteBound => {
            require_epsilon(cfg, false)?;
            match &cfg.awe_file {
                Some(p) => format!("evaluate the bound at {eps} epsilon points using {}", p.display()),
                None => format!("evaluate the bound at {eps} epsilon points for n in {:?}", cfg.n),
            }
        }
        Command::Simulate => {
            require_epsilon(cfg, false)?;
            if cfg.n.is_empty() {
                return config_err("`n` is required");
            }
            format!(
                "simulate {} points ({} trials each, seed {})",
                eps * cfg.n.len(),
                cfg.trials,
                cfg.seed
            )
        }
    };
    s.push_str(&line);
    if opts.cross_check {
        s.push_str(" with cross-check");
    }
    s.push('\n');
    for l in echo(cfg).lines() {
        s.push_str(ECHO_PREFIX);
        s.push_str(l);
        s.push('\n');
    }
    Ok(s)
}

/// Write `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Apply the thread-count override from the environment.
pub fn configure_threads() -> Result<Option<usize>, RunError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => return config_err(format!("{THREADS_ENV} = `{v}` is not a positive integer")),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| RunError::Config(e.to_string()))?;
    Ok(Some(n))
}

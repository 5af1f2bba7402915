//! The exponent lower bound
//!
//! ```text
//! E_G(ε) = inf_{δ∈(0,1]} [ D(δ‖ε) + g⁺(δ) ],   g⁺(δ) = max{0, g(δ)},
//! g(δ)   = inf_{ω∈(0,δ]} h_δ(ω),               h_δ(ω) = −δ H_b(ω/δ) + H_b(ω) − G(ω),
//! ```
//!
//! and the threshold `δ* = sup{δ ∈ (0, 1−r] : g⁺(δ) > 0}`, which lower
//! bounds the ML decoding threshold of the ensemble.
//!
//! Infima over open intervals are discretized: the inner one on a grid that
//! is log-spaced near zero plus the analytic limit `h_δ(0⁺) = −γ`, the outer
//! one on a uniform δ grid; both are refined by golden-section search around
//! the best node.

use std::cell::Cell;
use std::f64::consts::LOG2_E;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    bisect_root, bisect_threshold, binary_entropy, golden_section, kl_divergence_interior, logistic, logit,
    Newton2,
};
use crate::spectral::{membership_in_p, EnsembleParams, RaptorParams, SpectralShape, LAMBDA_MIN};

/// Threshold lower bound for the 3GPP Raptor example obtained with the
/// general bound based on the ratio between the ensemble weight enumerator
/// and the random linear one. Stored for comparison only; never computed.
pub const GENERAL_BOUND_3GPP_THRESHOLD: f64 = 0.003827;

/// Discretization and tolerance knobs for [`ExponentSolver`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Smallest ω sampled by the inner infimum.
    pub omega_min: f64,
    /// Log-spaced ω nodes on `[omega_min, 1e-2]`.
    pub omega_log_points: usize,
    /// Uniform ω nodes on `(1e-2, 1]`.
    pub omega_linear_points: usize,
    /// Uniform δ nodes on `(0, 1]` for the outer infimum.
    pub delta_grid_points: usize,
    /// Values of `g⁺` at or below this are treated as zero when locating δ*.
    pub positivity_tol: f64,
    /// Width at which the δ* bisection stops.
    pub bisection_tol: f64,
    /// Step of the upward δ̂ scan in the Raptor 2×2 solver.
    pub raptor_scan_step: f64,
    /// Residual tolerance of the Raptor 2×2 solution.
    pub system_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            omega_min: 1e-9,
            omega_log_points: 256,
            omega_linear_points: 1024,
            delta_grid_points: 2048,
            positivity_tol: 1e-10,
            bisection_tol: 1e-12,
            raptor_scan_step: 1e-3,
            system_tol: 1e-10,
        }
    }
}

const OMEGA_SPLIT: f64 = 1e-2;
const DELTA_LOG_POINTS: usize = 64;
const DELTA_LOG_MIN: f64 = 1e-6;

/// `h_δ(ω) = −δ H_b(ω/δ) + H_b(ω) − G(ω)` for `0 < ω ≤ δ ≤ 1`.
pub fn h_delta(shape: &dyn SpectralShape, delta: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0 && omega <= delta && delta <= 1.0) {
        return Err(Error::argument(format!(
            "h_delta requires 0 < omega <= delta <= 1 (omega = {omega}, delta = {delta})"
        )));
    }
    Ok(h_unchecked(delta, omega, shape.eval(omega)))
}

#[inline]
fn h_unchecked(delta: f64, omega: f64, g: f64) -> f64 {
    let ratio = (omega / delta).min(1.0);
    -delta * binary_entropy(ratio) + binary_entropy(omega) - g
}

/// Location of the inner infimum `g(δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerMinimum {
    pub value: f64,
    /// `None` when the infimum is the `ω → 0⁺` limit `−γ`.
    pub argmin_omega: Option<f64>,
}

/// One sample of an exponent curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentPoint {
    pub epsilon: f64,
    pub value: f64,
    pub argmin_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentCurve {
    pub shape_label: String,
    pub points: Vec<ExponentPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    Bisection,
    ClosedForm,
    System2x2,
}

impl ThresholdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMethod::Bisection => "bisection",
            ThresholdMethod::ClosedForm => "closed_form",
            ThresholdMethod::System2x2 => "system_2x2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub delta_star: f64,
    pub method: ThresholdMethod,
    /// `λ̂₀` of the Raptor system solution.
    pub lambda_hat: Option<f64>,
    /// Residuals of the two system equations at the solution.
    pub residuals: Option<[f64; 2]>,
    pub evaluations: usize,
    /// False when `γ ≥ 0`: the bound carries no information and δ* = 0.
    pub useful: bool,
}

/// Evaluates `g⁺`, `E_G` and `δ*` for one shape, caching `G` on the inner ω
/// grid and `g⁺` on the outer δ grid.
pub struct ExponentSolver<'a> {
    shape: ShapeRef<'a>,
    settings: SolverSettings,
    omega_nodes: Vec<f64>,
    g_nodes: OnceLock<Vec<f64>>,
    delta_nodes: Vec<f64>,
    gplus_nodes: OnceLock<Vec<f64>>,
}

impl ExponentSolver<'static> {
    /// Solver owning a shared handle to its shape.
    pub fn shared(shape: Arc<dyn SpectralShape>, settings: SolverSettings) -> Self {
        Self::build(ShapeRef::Shared(shape), settings)
    }
}

enum ShapeRef<'a> {
    Borrowed(&'a dyn SpectralShape),
    Shared(Arc<dyn SpectralShape>),
}

impl<'a> ExponentSolver<'a> {
    pub fn new(shape: &'a dyn SpectralShape) -> Self {
        Self::with_settings(shape, SolverSettings::default())
    }

    pub fn with_settings(shape: &'a dyn SpectralShape, settings: SolverSettings) -> Self {
        Self::build(ShapeRef::Borrowed(shape), settings)
    }

    fn build(shape: ShapeRef<'a>, settings: SolverSettings) -> Self {
        let mut omega_nodes = Vec::with_capacity(settings.omega_log_points + settings.omega_linear_points);
        let nlog = settings.omega_log_points.max(2);
        let (l0, l1) = (settings.omega_min.ln(), OMEGA_SPLIT.ln());
        for i in 0..nlog {
            omega_nodes.push((l0 + (l1 - l0) * i as f64 / (nlog - 1) as f64).exp());
        }
        let nlin = settings.omega_linear_points.max(2);
        for i in 1..=nlin {
            omega_nodes.push(OMEGA_SPLIT + (1.0 - OMEGA_SPLIT) * i as f64 / nlin as f64);
        }

        let nd = settings.delta_grid_points.max(2);
        let mut delta_nodes = Vec::with_capacity(nd + DELTA_LOG_POINTS);
        let first = 1.0 / nd as f64;
        let (d0, d1) = (DELTA_LOG_MIN.ln(), first.ln());
        for i in 0..DELTA_LOG_POINTS {
            delta_nodes.push((d0 + (d1 - d0) * i as f64 / DELTA_LOG_POINTS as f64).exp());
        }
        for i in 1..=nd {
            delta_nodes.push(i as f64 / nd as f64);
        }

        ExponentSolver {
            shape,
            settings,
            omega_nodes,
            g_nodes: OnceLock::new(),
            delta_nodes,
            gplus_nodes: OnceLock::new(),
        }
    }

    pub fn shape(&self) -> &dyn SpectralShape {
        match &self.shape {
            ShapeRef::Borrowed(s) => *s,
            ShapeRef::Shared(s) => s.as_ref(),
        }
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    fn g_table(&self) -> &[f64] {
        self.g_nodes.get_or_init(|| self.omega_nodes.par_iter().map(|&w| self.shape().eval(w)).collect())
    }

    fn gplus_table(&self) -> &[f64] {
        self.gplus_nodes
            .get_or_init(|| self.delta_nodes.par_iter().map(|&d| self.g_plus_direct(d)).collect())
    }

    fn h(&self, delta: f64, omega: f64) -> f64 {
        h_unchecked(delta, omega, self.shape().eval(omega))
    }

    /// `g(δ) = inf_{ω∈(0,δ]} h_δ(ω)`.
    pub fn inner_minimum(&self, delta: f64) -> InnerMinimum {
        let nodes = &self.omega_nodes;
        let g = self.g_table();
        let k = nodes.partition_point(|&w| w < delta);

        // Candidates: nodes below δ, then ω = δ itself.
        let mut best_i = k;
        let mut best_v = self.h(delta, delta);
        for i in 0..k {
            let v = h_unchecked(delta, nodes[i], g[i]);
            if v < best_v {
                best_v = v;
                best_i = i;
            }
        }
        if best_v.is_nan() || g[..k].iter().any(|v| v.is_nan()) {
            return InnerMinimum {
                value: f64::NAN,
                argmin_omega: None,
            };
        }
        let node = |i: usize| if i < k { nodes[i] } else { delta };
        let (lo, hi) = if k == 0 {
            (delta * 1e-3, delta)
        } else {
            let lo = if best_i == 0 { nodes[0] * 0.5 } else { node(best_i - 1) };
            (lo, node((best_i + 1).min(k)))
        };
        let mut best = InnerMinimum {
            value: best_v,
            argmin_omega: Some(node(best_i)),
        };
        if hi > lo {
            let tol = (1e-11 * hi).max(1e-16);
            let refined = golden_section(&|w: f64| self.h(delta, w), lo, hi, tol);
            if refined.value < best.value {
                best = InnerMinimum {
                    value: refined.value,
                    argmin_omega: Some(refined.argmin),
                };
            }
        }
        let limit = -self.shape().gamma();
        if limit < best.value {
            best = InnerMinimum {
                value: limit,
                argmin_omega: None,
            };
        }
        best
    }

    /// NaN when the shape could not be evaluated on `(0, δ]`.
    fn g_plus_direct(&self, delta: f64) -> f64 {
        let v = self.inner_minimum(delta).value;
        if v.is_nan() {
            v
        } else {
            v.max(0.0)
        }
    }

    /// `g⁺(δ) = max{0, g(δ)}` for `0 < δ ≤ 1`.
    pub fn g_plus(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::argument(format!("g_plus: delta = {delta} not in (0, 1]")));
        }
        let v = self.g_plus_direct(delta);
        if v.is_nan() {
            return Err(Error::Domain(format!("shape evaluation failed near delta = {delta}")));
        }
        Ok(v)
    }

    fn objective(&self, delta: f64, epsilon: f64) -> f64 {
        kl_divergence_interior(delta, epsilon) + self.g_plus_direct(delta)
    }

    /// `E_G(ε)` and the minimizing δ.
    pub fn exponent(&self, epsilon: f64) -> Result<ExponentPoint> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("epsilon = {epsilon} not in (0, 1)")));
        }
        let nodes = &self.delta_nodes;
        let gp = self.gplus_table();
        if gp.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("shape evaluation failed on the delta grid".into()));
        }
        let mut best_i = 0;
        let mut best_v = f64::INFINITY;
        for (i, (&d, &g)) in nodes.iter().zip(gp).enumerate() {
            let v = kl_divergence_interior(d, epsilon) + g;
            if v < best_v {
                best_v = v;
                best_i = i;
            }
        }
        let mut best = ExponentPoint {
            epsilon,
            value: best_v,
            argmin_delta: nodes[best_i],
        };
        let lo = if best_i == 0 { nodes[0] * 0.5 } else { nodes[best_i - 1] };
        let hi = nodes[(best_i + 1).min(nodes.len() - 1)];
        if hi > lo {
            let refined = golden_section(&|d: f64| self.objective(d, epsilon), lo, hi, 1e-12);
            if refined.value < best.value {
                best.value = refined.value;
                best.argmin_delta = refined.argmin;
            }
        }
        // δ = ε zeroes the divergence term.
        let at_eps = self.g_plus_direct(epsilon);
        if at_eps <= best.value {
            best.value = at_eps;
            best.argmin_delta = epsilon;
        }
        if best.value.is_nan() {
            return Err(Error::Domain(format!("shape evaluation failed for epsilon = {epsilon}")));
        }
        best.value = best.value.max(0.0);
        Ok(best)
    }

    /// `E_G` on a strictly increasing grid inside `(0, 1)`.
    pub fn curve(&self, grid: &[f64]) -> Result<ExponentCurve> {
        validate_grid(grid)?;
        self.gplus_table();
        let points = grid
            .par_iter()
            .map(|&e| self.exponent(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExponentCurve {
            shape_label: self.shape().label(),
            points,
        })
    }

    /// δ* by bisection on `g⁺(δ) > positivity_tol` over `(δ_lo, 1 − r]`.
    pub fn threshold(&self) -> Result<ThresholdResult> {
        let evaluations = Cell::new(0usize);
        let not_useful = |evaluations: usize| ThresholdResult {
            delta_star: 0.0,
            method: ThresholdMethod::Bisection,
            lambda_hat: None,
            residuals: None,
            evaluations,
            useful: false,
        };
        if !(self.shape().gamma() < 0.0) {
            return Ok(not_useful(0));
        }
        let tol = self.settings.positivity_tol;
        let failed = Cell::new(None);
        let positive = |d: f64| {
            evaluations.set(evaluations.get() + 1);
            let v = self.g_plus_direct(d);
            if v.is_nan() && failed.get().is_none() {
                failed.set(Some(d));
            }
            v > tol
        };
        let hi = 1.0 - self.shape().params().rate;
        let lo = [1e-6, 1e-9].into_iter().find(|&d| d < hi && positive(d));
        let Some(lo) = lo.filter(|_| failed.get().is_none()) else {
            if let Some(d) = failed.get() {
                return Err(Error::Domain(format!("shape evaluation failed near delta = {d}")));
            }
            return Ok(not_useful(evaluations.get()));
        };
        let delta_star = if positive(hi) {
            hi
        } else {
            bisect_threshold(positive, lo, hi, self.settings.bisection_tol)?
        };
        if let Some(d) = failed.get() {
            return Err(Error::Domain(format!("shape evaluation failed near delta = {d}")));
        }
        Ok(ThresholdResult {
            delta_star,
            method: ThresholdMethod::Bisection,
            lambda_hat: None,
            residuals: None,
            evaluations: evaluations.get(),
            useful: true,
        })
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::argument("epsilon grid must lie inside (0, 1)"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::argument("epsilon grid must be strictly increasing"));
    }
    Ok(())
}

/// `g⁺(δ)` with default settings.
pub fn g_plus(shape: &dyn SpectralShape, delta: f64) -> Result<f64> {
    ExponentSolver::new(shape).g_plus(delta)
}

/// `E_G(ε)` with default settings; returns `(value, argmin δ)`.
pub fn exponent_lower_bound(shape: &dyn SpectralShape, epsilon: f64) -> Result<(f64, f64)> {
    let p = ExponentSolver::new(shape).exponent(epsilon)?;
    Ok((p.value, p.argmin_delta))
}

pub fn exponent_curve(shape: &dyn SpectralShape, grid: &[f64]) -> Result<ExponentCurve> {
    ExponentSolver::new(shape).curve(grid)
}

pub fn threshold_bisection(shape: &dyn SpectralShape) -> Result<ThresholdResult> {
    ExponentSolver::new(shape).threshold()
}

/// `ε_c = (1−r) / (1 + (q−1) r)`.
pub fn critical_epsilon(params: EnsembleParams) -> f64 {
    let q = params.field_order as f64;
    (1.0 - params.rate) / (1.0 + (q - 1.0) * params.rate)
}

/// Low-ε branch of the random linear exponent: `−log₂((1−ε)/q + ε) − r log₂q`.
pub fn random_linear_low_branch(params: EnsembleParams, epsilon: f64) -> f64 {
    let q = params.field_order as f64;
    -((1.0 - epsilon) / q + epsilon).log2() - params.rate * params.log2_q()
}

/// Middle branch of the random linear exponent: `D(1−r ‖ ε)`.
pub fn random_linear_mid_branch(params: EnsembleParams, epsilon: f64) -> f64 {
    kl_divergence_interior(1.0 - params.rate, epsilon)
}

/// Closed-form `E_G(ε)` of the random linear parity-check ensemble.
pub fn exponent_random_linear_closed_form(params: EnsembleParams, epsilon: f64) -> f64 {
    if epsilon >= 1.0 - params.rate {
        0.0
    } else if epsilon < critical_epsilon(params) {
        random_linear_low_branch(params, epsilon)
    } else {
        random_linear_mid_branch(params, epsilon)
    }
}

/// Residuals of the Raptor threshold system at `(δ̂, λ̂₀)`:
///
/// ```text
/// r_i(1−r_o) − r_i H_b(λ̂₀) − (1−δ̂) log₂(1−ρ(λ̂₀))
/// r_i log₂((1−λ̂₀)/λ̂₀) − (1−δ̂) ρ′(λ̂₀)/(1−ρ(λ̂₀)) log₂e
/// ```
pub fn raptor_system(params: &RaptorParams, delta: f64, lambda: f64) -> [f64; 2] {
    let rho = params.omega.rho(lambda);
    let rho_p = params.omega.rho_prime(lambda);
    let log_one_minus = (-rho).ln_1p() * LOG2_E;
    let ri = params.inner_rate;
    [
        params.precoder_redundancy() - ri * binary_entropy(lambda) - (1.0 - delta) * log_one_minus,
        ri * ((1.0 - lambda) / lambda).log2() - (1.0 - delta) * rho_p / (1.0 - rho) * LOG2_E,
    ]
}

const LAMBDA_SCAN_POINTS: usize = 512;

/// Smallest root of the second system equation in λ for fixed δ̂: the first
/// `+ → −` crossing scanning upward from `λ → 0⁺`.
fn lambda_hat_for(params: &RaptorParams, delta: f64, evaluations: &Cell<usize>) -> Option<f64> {
    let (t_lo, t_hi) = (logit(LAMBDA_MIN), logit(1.0 - LAMBDA_MIN));
    let f = |t: f64| {
        evaluations.set(evaluations.get() + 1);
        raptor_system(params, delta, logistic(t))[1]
    };
    let step = (t_hi - t_lo) / (LAMBDA_SCAN_POINTS - 1) as f64;
    let mut prev_t = t_lo;
    let mut prev = f(prev_t);
    for i in 1..LAMBDA_SCAN_POINTS {
        let t = t_lo + step * i as f64;
        let v = f(t);
        if prev > 0.0 && v <= 0.0 {
            let root = bisect_root(f, prev_t, t, 1e-14).ok()?;
            return Some(logistic(root.x));
        }
        prev_t = t;
        prev = v;
    }
    None
}

/// δ* for a Raptor ensemble as the smallest δ̂ solving the 2×2 threshold
/// system.
///
/// An upward scan of δ̂ (λ̂₀ eliminated through the second equation) brackets
/// the first sign change of the first equation; damped Newton polishes the
/// pair, with nested bisection as fallback.
pub fn threshold_raptor(params: &RaptorParams) -> Result<ThresholdResult> {
    threshold_raptor_with(params, &SolverSettings::default())
}

pub fn threshold_raptor_with(params: &RaptorParams, settings: &SolverSettings) -> Result<ThresholdResult> {
    if !membership_in_p(params) {
        return Err(Error::Precondition(
            "(r_i, r_o) outside the region where the Raptor shape has a negative limit at 0⁺".into(),
        ));
    }
    let evaluations = Cell::new(0usize);
    let residual1 = |delta: f64| -> Option<(f64, f64)> {
        let lambda = lambda_hat_for(params, delta, &evaluations)?;
        Some((raptor_system(params, delta, lambda)[0], lambda))
    };

    let upper = 1.0 - params.rate();
    let mut deltas: Vec<f64> = (0..6).map(|i| 1e-6 * 10f64.powf(i as f64 * 0.5)).collect();
    let mut d = settings.raptor_scan_step;
    while d < upper {
        deltas.push(d);
        d += settings.raptor_scan_step;
    }
    deltas.push(upper);

    let mut bracket = None;
    let mut prev: Option<f64> = None;
    for &delta in &deltas {
        let Some((r1, _)) = residual1(delta) else {
            prev = None;
            continue;
        };
        if r1 <= 0.0 {
            if let Some(p) = prev {
                bracket = Some((p, delta));
            }
            break;
        }
        prev = Some(delta);
    }
    let Some((a, b)) = bracket else {
        return Err(Error::Bracket { lo: deltas[0], hi: upper });
    };

    let mid = 0.5 * (a + b);
    let newton = residual1(mid).and_then(|(_, l)| {
        Newton2::with_tol(settings.system_tol * 1e-3)
            .solve(|x, y| {
                evaluations.set(evaluations.get() + 1);
                if !(y > 0.0 && y < 1.0) {
                    return [f64::NAN, f64::NAN];
                }
                raptor_system(params, x, y)
            }, [mid, l])
            .ok()
    });
    let (delta_star, lambda_hat) = match newton {
        Some([x, y]) if x.x >= a && x.x <= b => (x.x, y.x),
        _ => {
            let root = bisect_root(|d| residual1(d).map_or(f64::NAN, |r| r.0), a, b, 1e-15)?;
            let lambda = lambda_hat_for(params, root.x, &evaluations).ok_or(Error::Convergence {
                x: root.x,
                y: f64::NAN,
                residual: f64::INFINITY,
                iterations: root.iterations,
            })?;
            (root.x, lambda)
        }
    };
    let residuals = raptor_system(params, delta_star, lambda_hat);
    let worst = residuals[0].abs().max(residuals[1].abs());
    if !(worst < settings.system_tol) {
        return Err(Error::Convergence {
            x: delta_star,
            y: lambda_hat,
            residual: worst,
            iterations: evaluations.get(),
        });
    }
    if params.omega.rho(lambda_hat) > 1.0 - 1e-9 {
        return Err(Error::Domain(format!("rho(lambda_hat) approaches 1 at lambda_hat = {lambda_hat}")));
    }
    Ok(ThresholdResult {
        delta_star,
        method: ThresholdMethod::System2x2,
        lambda_hat: Some(lambda_hat),
        residuals: Some(residuals),
        evaluations: evaluations.get(),
        useful: true,
    })
}

/// δ* = 1 − r for the random linear ensemble.
pub fn threshold_random_linear_closed_form(params: EnsembleParams) -> ThresholdResult {
    ThresholdResult {
        delta_star: 1.0 - params.rate,
        method: ThresholdMethod::ClosedForm,
        lambda_hat: None,
        residuals: None,
        evaluations: 0,
        useful: true,
    }
}

//! Shared numerical kernel: base-2 entropies and divergences, log-domain
//! combinatorics, a grid + golden-section minimizer, bisection helpers and a
//! damped Newton solver for 2×2 systems.
//!
//! All logarithms are base 2. `0 · log 0` is taken to be `0` everywhere.

use crate::error::{Error, Result};

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Prob(f64);

impl Prob {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Prob(value))
        } else {
            Err(Error::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Prob> for f64 {
    fn from(p: Prob) -> f64 {
        p.0
    }
}

impl TryFrom<f64> for Prob {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Prob::new(value)
    }
}

/// A nonnegative quantity stored as its base-2 logarithm; `-∞` encodes zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogValue(pub f64);

impl LogValue {
    pub const ZERO: LogValue = LogValue(f64::NEG_INFINITY);
    pub const ONE: LogValue = LogValue(0.0);

    pub fn from_linear(x: f64) -> Self {
        LogValue(x.log2())
    }

    #[inline]
    pub fn log2(self) -> f64 {
        self.0
    }

    pub fn to_linear(self) -> f64 {
        self.0.exp2()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Product of the represented values.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: LogValue) -> LogValue {
        LogValue(self.0 + other.0)
    }

    /// Sum of the represented values.
    pub fn add(self, other: LogValue) -> LogValue {
        LogValue(log2_sum_exp2(&[self.0, other.0]))
    }

    pub fn min(self, other: LogValue) -> LogValue {
        LogValue(self.0.min(other.0))
    }
}

/// `log₂ Σ 2^{x_i}` with max-shift. Returns `-∞` for an empty slice or when
/// every term is `-∞`.
pub fn log2_sum_exp2(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp2()).sum();
    max + sum.log2()
}

/// `x · log₂ y` with the convention `0 · log 0 = 0`.
#[inline]
pub fn xlog2y(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.log2()
    }
}

/// Binary entropy `H_b(u) = −u log₂u − (1−u) log₂(1−u)`.
///
/// The endpoints return `0` by continuity. Arguments are expected in
/// `[0, 1]`; values outside yield `NaN`.
pub fn binary_entropy(u: f64) -> f64 {
    if u == 0.0 || u == 1.0 {
        return 0.0;
    }
    -xlog2y(u, u) - xlog2y(1.0 - u, 1.0 - u)
}

/// Binary KL divergence `D(u‖v) = u log₂(u/v) + (1−u) log₂((1−u)/(1−v))`.
///
/// `u` may sit on an endpoint (by continuity); `v ∈ {0, 1}` is only accepted
/// when `u` equals it, otherwise the divergence is infinite and a domain error
/// is returned.
pub fn kl_divergence(u: f64, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("kl_divergence({u}, {v}) outside [0,1]²")));
    }
    if v == 0.0 || v == 1.0 {
        return if u == v {
            Ok(0.0)
        } else {
            Err(Error::Domain(format!("kl_divergence({u}, {v}) is infinite")))
        };
    }
    Ok(kl_divergence_interior(u, v))
}

/// Unchecked divergence for `v ∈ (0,1)`, `u ∈ [0,1]`. Clamped at zero.
#[inline]
pub(crate) fn kl_divergence_interior(u: f64, v: f64) -> f64 {
    let a = if u == 0.0 { 0.0 } else { u * (u / v).log2() };
    let b = if u == 1.0 {
        0.0
    } else {
        (1.0 - u) * ((1.0 - u) / (1.0 - v)).log2()
    };
    (a + b).max(0.0)
}

/// Table of `log₂ k!` for `k = 0..=n_max`, built by cumulative summation.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    table: Vec<f64>,
}

impl LogFactorials {
    pub fn new(n_max: usize) -> Self {
        let mut table = Vec::with_capacity(n_max + 1);
        let mut acc = 0.0f64;
        table.push(0.0);
        for k in 1..=n_max {
            acc += (k as f64).log2();
            table.push(acc);
        }
        LogFactorials { table }
    }

    pub fn n_max(&self) -> usize {
        self.table.len() - 1
    }

    /// `log₂ C(n, k)`; panics if `n` exceeds the table.
    #[inline]
    pub fn log_binomial(&self, n: usize, k: usize) -> f64 {
        debug_assert!(k <= n);
        if k == 0 || k == n {
            return 0.0;
        }
        self.table[n] - self.table[k] - self.table[n - k]
    }
}

/// Exact `log₂ C(n, k)`.
pub fn log_binomial(n: usize, k: usize) -> Result<LogValue> {
    if k > n {
        return Err(Error::argument(format!("log_binomial: k = {k} > n = {n}")));
    }
    let k = k.min(n - k);
    // Sum of log₂((n-k+i)/i) keeps the result exact for small k without a
    // full factorial table.
    let value: f64 = (1..=k).map(|i| (((n - k + i) as f64) / (i as f64)).log2()).sum();
    Ok(LogValue(value))
}

/// Result of a one-dimensional minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub argmin: f64,
    pub value: f64,
}

/// Grid scan followed by golden-section refinement of the best bracket.
#[derive(Debug, Clone, Copy)]
pub struct Minimizer {
    /// Number of grid points on `[lo, hi]`, endpoints included.
    pub resolution: usize,
    /// Absolute width at which golden-section refinement stops.
    pub tol: f64,
}

impl Default for Minimizer {
    fn default() -> Self {
        Minimizer {
            resolution: 512,
            tol: 1e-10,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

impl Minimizer {
    pub fn new(resolution: usize, tol: f64) -> Self {
        Minimizer {
            resolution: resolution.max(3),
            tol,
        }
    }

    /// Minimize `f` over `[lo, hi]`. Non-finite values are treated as `+∞`,
    /// which lets callers clamp away singular endpoints.
    pub fn minimize<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> Result<Minimum> {
        if !(lo < hi) {
            return Err(Error::argument(format!("minimize: empty interval [{lo}, {hi}]")));
        }
        let n = self.resolution.max(3);
        let step = (hi - lo) / (n - 1) as f64;
        let at = |i: usize| if i == n - 1 { hi } else { lo + step * i as f64 };
        let mut best_i = usize::MAX;
        let mut best_v = f64::INFINITY;
        for i in 0..n {
            let v = f(at(i));
            if v.is_finite() && v < best_v {
                best_v = v;
                best_i = i;
            }
        }
        if best_i == usize::MAX {
            return Err(Error::Evaluation { lo, hi });
        }
        let a = at(best_i.saturating_sub(1));
        let b = at((best_i + 1).min(n - 1));
        let refined = golden_section(&f, a, b, self.tol);
        if refined.value < best_v {
            Ok(refined)
        } else {
            Ok(Minimum {
                argmin: at(best_i),
                value: best_v,
            })
        }
    }
}

/// Golden-section search on `[a, b]`; assumes local unimodality.
pub fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> Minimum {
    let eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    let mut iterations = 0;
    while (b - a).abs() > tol && iterations < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
        iterations += 1;
    }
    // Endpoints of the final bracket are candidates too: the minimum may sit
    // on the boundary of the original interval.
    let mut best = if fc <= fd {
        Minimum { argmin: c, value: fc }
    } else {
        Minimum { argmin: d, value: fd }
    };
    for x in [a, b] {
        let v = eval(x);
        if v < best.value {
            best = Minimum { argmin: x, value: v };
        }
    }
    best
}

/// Locate the crossover of a predicate that is `true` below it and `false`
/// above it.
pub fn bisect_threshold<P: FnMut(f64) -> bool>(mut p: P, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo < hi) || !p(lo) || p(hi) {
        return Err(Error::Bracket { lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if p(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// A root located inside an initial bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketedRoot {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Bisection on a sign change of `f` over `[lo, hi]`.
pub fn bisect_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<BracketedRoot> {
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(BracketedRoot { x: a, residual: 0.0, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(BracketedRoot { x: b, residual: 0.0, iterations: 0 });
    }
    if !(fa.signum() != fb.signum()) || fa.is_nan() || fb.is_nan() {
        return Err(Error::Bracket { lo, hi });
    }
    let mut iterations = 0;
    while b - a > tol && iterations < 300 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        iterations += 1;
        if fm == 0.0 {
            return Ok(BracketedRoot { x: mid, residual: 0.0, iterations });
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let x = 0.5 * (a + b);
    Ok(BracketedRoot {
        x,
        residual: f(x),
        iterations,
    })
}

/// Damped Newton iteration for `F: ℝ² → ℝ²` with a central finite-difference
/// Jacobian.
#[derive(Debug, Clone, Copy)]
pub struct Newton2 {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for Newton2 {
    fn default() -> Self {
        Newton2 {
            tol: 1e-12,
            max_iterations: 200,
            max_halvings: 40,
        }
    }
}

fn norm_inf(v: [f64; 2]) -> f64 {
    let n = v[0].abs().max(v[1].abs());
    if n.is_nan() {
        f64::INFINITY
    } else {
        n
    }
}

impl Newton2 {
    pub fn with_tol(tol: f64) -> Self {
        Newton2 { tol, ..Default::default() }
    }

    pub fn solve<F: Fn(f64, f64) -> [f64; 2]>(&self, f: F, x0: [f64; 2]) -> Result<[BracketedRoot; 2]> {
        let mut x = x0;
        let mut fx = f(x[0], x[1]);
        let mut norm = norm_inf(fx);
        for iteration in 0..=self.max_iterations {
            if norm < self.tol {
                return Ok([
                    BracketedRoot { x: x[0], residual: fx[0], iterations: iteration },
                    BracketedRoot { x: x[1], residual: fx[1], iterations: iteration },
                ]);
            }
            if iteration == self.max_iterations {
                break;
            }
            let jac = fd_jacobian(&f, x);
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let dx = [
                -(jac[1][1] * fx[0] - jac[0][1] * fx[1]) / det,
                -(-jac[1][0] * fx[0] + jac[0][0] * fx[1]) / det,
            ];
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=self.max_halvings {
                let trial = [x[0] + t * dx[0], x[1] + t * dx[1]];
                let ft = f(trial[0], trial[1]);
                let nt = norm_inf(ft);
                if nt < norm {
                    x = trial;
                    fx = ft;
                    norm = nt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::Convergence {
            x: x[0],
            y: x[1],
            residual: norm,
            iterations: self.max_iterations,
        })
    }
}

fn fd_jacobian<F: Fn(f64, f64) -> [f64; 2]>(f: &F, x: [f64; 2]) -> [[f64; 2]; 2] {
    let mut jac = [[0.0; 2]; 2];
    for j in 0..2 {
        let h = 6e-6 * x[j].abs().max(1e-4);
        let mut xp = x;
        let mut xm = x;
        xp[j] += h;
        xm[j] -= h;
        let fp = f(xp[0], xp[1]);
        let fm = f(xm[0], xm[1]);
        for i in 0..2 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Solve `F(x, y) = (0, 0)` from `x0` with default damping limits.
pub fn solve_2x2<F: Fn(f64, f64) -> [f64; 2]>(f: F, x0: [f64; 2], tol: f64) -> Result<[BracketedRoot; 2]> {
    Newton2::with_tol(tol).solve(f, x0)
}

/// Minimize with default settings.
pub fn minimize_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<Minimum> {
    Minimizer { tol, ..Default::default() }.minimize(f, lo, hi)
}

/// Logistic map and its inverse, used to search `(0, 1)` with resolution at
/// both ends.
#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_abs_diff_eq!(binary_entropy(0.11), 0.499_915_958_164_528, epsilon = 1e-14);
    }

    #[test]
    fn divergence_values() {
        assert_eq!(kl_divergence(0.3, 0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(0.5, 0.25).unwrap(), 0.207_518_749_639_421_85, epsilon = 1e-14);
        assert!(matches!(kl_divergence(0.5, 0.0), Err(Error::Domain(_))));
        assert_eq!(kl_divergence(0.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(0.0, 0.5).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(log_binomial(17, 0).unwrap().log2(), 0.0);
        assert_abs_diff_eq!(log_binomial(4, 2).unwrap().log2(), 6f64.log2(), epsilon = 1e-14);
        let v = log_binomial(10, 3).unwrap().log2();
        assert_abs_diff_eq!(v, 120f64.log2(), epsilon = 1e-13);
        let upper = 10.0 * binary_entropy(0.3);
        assert!(v <= upper && v >= upper - 11f64.log2());
        assert!(log_binomial(3, 4).is_err());
    }

    #[test]
    fn factorial_table_matches_direct() {
        let t = LogFactorials::new(200);
        for (n, k) in [(200, 100), (64, 3), (10, 10), (1, 0)] {
            assert_abs_diff_eq!(t.log_binomial(n, k), log_binomial(n, k).unwrap().log2(), epsilon = 1e-10);
        }
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log2_sum_exp2(&[]), f64::NEG_INFINITY);
        assert_eq!(log2_sum_exp2(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(log2_sum_exp2(&[1.0, 1.0]), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(LogValue::ONE.add(LogValue::ZERO).log2(), 0.0);
    }

    #[test]
    fn minimize_quadratic_and_boundary() {
        let m = minimize_1d(|x| (x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-9).unwrap();
        assert_abs_diff_eq!(m.argmin, 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(m.value, 0.0, epsilon = 1e-15);
        let m = minimize_1d(|x| x, 0.2, 0.8, 1e-10).unwrap();
        assert_eq!(m.argmin, 0.2);
    }

    #[test]
    fn minimize_rejects_nowhere_finite() {
        let e = minimize_1d(|_| f64::NAN, 0.0, 1.0, 1e-9).unwrap_err();
        assert!(matches!(e, Error::Evaluation { .. }));
    }

    #[test]
    fn minimize_skips_singular_endpoint() {
        let m = minimize_1d(|x: f64| -x.ln() + x, 0.0, 3.0, 1e-10).unwrap();
        assert_abs_diff_eq!(m.argmin, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn bisection_crossovers() {
        let x = bisect_threshold(|x| x < 0.5, 0.0, 1.0, 1e-8).unwrap();
        assert_abs_diff_eq!(x, 0.5, epsilon = 1e-8);
        let x = bisect_threshold(|x| x < 0.090771, 0.0, 1.0, 1e-10).unwrap();
        assert_abs_diff_eq!(x, 0.090771, epsilon = 1e-10);
        assert!(matches!(
            bisect_threshold(|x| x > 0.5, 0.0, 1.0, 1e-8),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn bisect_root_inside_bracket() {
        let r = bisect_root(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert_abs_diff_eq!(r.x, 2f64.sqrt(), epsilon = 1e-13);
        assert!(bisect_root(|x| x * x + 1.0, 0.0, 2.0, 1e-14).is_err());
    }

    #[test]
    fn newton_linear_and_quadratic() {
        let r = solve_2x2(|x, y| [x - 1.0, y - 2.0], [0.0, 0.0], 1e-12).unwrap();
        assert_abs_diff_eq!(r[0].x, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r[1].x, 2.0, epsilon = 1e-10);
        let r = solve_2x2(|x, y| [x * x - y, x - 0.5], [0.4, 0.1], 1e-12).unwrap();
        assert_abs_diff_eq!(r[0].x, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(r[1].x, 0.25, epsilon = 1e-10);
        assert!(r[0].residual.abs() < 1e-12 && r[1].residual.abs() < 1e-12);
    }

    #[test]
    fn newton_reports_best_iterate_on_failure() {
        // x² + 1 has no real root.
        let e = solve_2x2(|x, y| [x * x + 1.0, y], [0.3, 0.0], 1e-12).unwrap_err();
        assert!(matches!(e, Error::Convergence { residual, .. } if residual >= 1.0));
    }

    #[test]
    fn logistic_roundtrip() {
        for p in [1e-12, 0.01, 0.5, 0.99, 1.0 - 1e-12] {
            assert!((logistic(logit(p)) - p).abs() < 1e-15 + 1e-6 * p.min(1.0 - p));
        }
    }

    #[test]
    fn prob_validation() {
        assert!(Prob::new(0.3).is_ok());
        assert!(Prob::new(-0.1).is_err());
        assert!(Prob::new(1.5).is_err());
    }
}

//! Finite-length union bound on the ensemble-average ML block error
//! probability over the q-ary erasure channel:
//!
//! ```text
//! E[P_B] ≤ Σ_{e=1}^{n} C(n,e) ε^e (1−ε)^{n−e} · min{1, 1/(q−1) Σ_{w=1}^{e} C(e,w) 𝒜_w / C(n,w)}
//! ```
//!
//! Evaluated entirely in the log₂ domain.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{log2_sum_exp2, LogFactorials, LogValue};
use crate::spectral::{parse_two_columns, EnsembleParams};

/// Average weight enumerator `𝒜_w`, `w = 0..=n`, stored as `log₂ 𝒜_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEnumerator {
    n: usize,
    log_a: Vec<LogValue>,
    /// Number of parity checks for sampled-ensemble enumerators.
    redundancy: Option<usize>,
}

impl WeightEnumerator {
    /// Build from `log₂ 𝒜_w` for `w = 0..=n`. `𝒜_0` is forced to one.
    pub fn new(log_a: Vec<LogValue>) -> Result<Self> {
        if log_a.len() < 2 {
            return Err(Error::argument("weight enumerator needs n >= 1"));
        }
        if log_a.iter().any(|v| v.log2().is_nan() || v.log2() == f64::INFINITY) {
            return Err(Error::argument("weight enumerator entries must be finite or -inf"));
        }
        let mut log_a = log_a;
        log_a[0] = LogValue::ONE;
        Ok(WeightEnumerator {
            n: log_a.len() - 1,
            log_a,
            redundancy: None,
        })
    }

    /// Two-column text (`w log2_A`); missing weights are `𝒜_w = 0` and the
    /// block length is the largest weight listed.
    pub fn parse(text: &str) -> Result<Self> {
        let rows = parse_two_columns(text)?;
        let mut n = 0usize;
        let mut entries = Vec::with_capacity(rows.len());
        for (i, &(w, v)) in rows.iter().enumerate() {
            if w < 0.0 || w.fract() != 0.0 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("weight {w} is not a nonnegative integer"),
                });
            }
            let w = w as usize;
            n = n.max(w);
            entries.push((w, v));
        }
        let mut log_a = vec![LogValue::ZERO; n + 1];
        for (w, v) in entries {
            log_a[w] = LogValue(v);
        }
        WeightEnumerator::new(log_a)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::argument(format!("cannot read {}: {e}", path.display())))?;
        WeightEnumerator::parse(&text)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_a(&self) -> &[LogValue] {
        &self.log_a
    }

    pub fn redundancy(&self) -> Option<usize> {
        self.redundancy
    }

    /// Realized rate `1 − m/n` when the redundancy is known.
    pub fn realized_rate(&self) -> Option<f64> {
        self.redundancy.map(|m| 1.0 - m as f64 / self.n as f64)
    }
}

/// `m = round((1−r) n)`.
pub fn redundancy_for(n: usize, rate: f64) -> usize {
    ((1.0 - rate) * n as f64).round() as usize
}

/// Expected weight enumerator of the random linear parity-check ensemble:
/// `𝒜_w = C(n,w) (q−1)^w q^{−m}` for `w ≥ 1`, `𝒜_0 = 1`.
pub fn awe_random_linear(n: usize, params: EnsembleParams) -> Result<WeightEnumerator> {
    if n == 0 {
        return Err(Error::argument("block length must be positive"));
    }
    let m = redundancy_for(n, params.rate);
    let lf = LogFactorials::new(n);
    let q = params.field_order as f64;
    let log_qm1 = (q - 1.0).log2();
    let mut log_a: Vec<LogValue> = (0..=n)
        .map(|w| LogValue(lf.log_binomial(n, w) + w as f64 * log_qm1 - m as f64 * params.log2_q()))
        .collect();
    log_a[0] = LogValue::ONE;
    Ok(WeightEnumerator {
        n,
        log_a,
        redundancy: Some(m),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteBoundResult {
    pub epsilon: f64,
    pub n: usize,
    pub log2_bound: LogValue,
    /// The bound clamped to `[0, 1]`.
    pub bound: f64,
}

/// `e · log₂ ε + (n−e) · log₂(1−ε)` with `0 · log 0 = 0`.
fn log2_bernoulli_pattern(epsilon: f64, e: usize, n: usize) -> f64 {
    let a = if e == 0 { 0.0 } else { e as f64 * epsilon.log2() };
    let b = if e == n { 0.0 } else { (n - e) as f64 * (-epsilon).ln_1p() * std::f64::consts::LOG2_E };
    a + b
}

struct BoundKernel<'a> {
    awe: &'a WeightEnumerator,
    lf: LogFactorials,
    log_qm1: f64,
}

impl<'a> BoundKernel<'a> {
    fn new(awe: &'a WeightEnumerator, params: EnsembleParams) -> Self {
        BoundKernel {
            awe,
            lf: LogFactorials::new(awe.n),
            log_qm1: ((params.field_order - 1) as f64).log2(),
        }
    }

    /// `min{0, log₂(1/(q−1) Σ_w C(e,w) 𝒜_w / C(n,w))}` for each `e = 1..=n`.
    fn inner_terms(&self) -> Vec<f64> {
        let n = self.awe.n;
        let mut terms = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(n);
        for e in 1..=n {
            buf.clear();
            for w in 1..=e {
                let la = self.awe.log_a[w].log2();
                if la == f64::NEG_INFINITY {
                    continue;
                }
                buf.push(self.lf.log_binomial(e, w) + la - self.lf.log_binomial(n, w));
            }
            let inner = log2_sum_exp2(&buf) - self.log_qm1;
            terms.push(inner.min(0.0));
        }
        terms
    }

    fn evaluate(&self, inner: &[f64], epsilon: f64) -> FiniteBoundResult {
        let n = self.awe.n;
        let terms: Vec<f64> = (1..=n)
            .map(|e| self.lf.log_binomial(n, e) + log2_bernoulli_pattern(epsilon, e, n) + inner[e - 1])
            .collect();
        let log2_bound = log2_sum_exp2(&terms).min(0.0);
        FiniteBoundResult {
            epsilon,
            n,
            log2_bound: LogValue(log2_bound),
            bound: log2_bound.exp2().clamp(0.0, 1.0),
        }
    }
}

/// Evaluate the union bound at one erasure probability.
pub fn evaluate_bound(awe: &WeightEnumerator, params: EnsembleParams, epsilon: f64) -> Result<FiniteBoundResult> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon = {epsilon} outside [0, 1]")));
    }
    let kernel = BoundKernel::new(awe, params);
    let inner = kernel.inner_terms();
    Ok(kernel.evaluate(&inner, epsilon))
}

/// Evaluate the bound on an increasing grid; the inner sums are shared.
pub fn bound_curve(awe: &WeightEnumerator, params: EnsembleParams, grid: &[f64]) -> Result<Vec<FiniteBoundResult>> {
    if grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Domain("epsilon grid outside [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::argument("epsilon grid must be increasing"));
    }
    let kernel = BoundKernel::new(awe, params);
    let inner = kernel.inner_terms();
    Ok(grid.iter().map(|&e| kernel.evaluate(&inner, e)).collect())
}

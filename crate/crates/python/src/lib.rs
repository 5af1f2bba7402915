//! Python module `ecbound`: spectral shapes, exponent and threshold bounds,
//! the finite-length bound and the erasure-channel simulator.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use ecbound_core::exponent::{critical_epsilon as core_critical_epsilon, threshold_raptor as core_threshold_raptor};
use ecbound_core::simulate::{sample_random_linear as core_sample_random_linear, SimulationEstimate as CoreEstimate};
use ecbound_core::spectral::{membership_in_p, RandomLinearShape, RaptorShape};
use ecbound_core::{self as core, Error, SolverSettings, SpectralShape};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Convergence { .. } | Error::Bracket { .. } | Error::Evaluation { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(frozen, skip_from_py_object, name = "EnsembleParams", module = "ecbound")]
#[derive(Clone, Copy)]
struct PyEnsembleParams(core::EnsembleParams);

#[pymethods]
impl PyEnsembleParams {
    #[new]
    #[pyo3(signature = (rate, field_order = 2))]
    fn new(rate: f64, field_order: u32) -> PyResult<Self> {
        core::EnsembleParams::new(rate, field_order).py().map(Self)
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.0.rate
    }

    #[getter]
    fn field_order(&self) -> u32 {
        self.0.field_order
    }

    fn __repr__(&self) -> String {
        format!("EnsembleParams(rate={}, field_order={})", self.0.rate, self.0.field_order)
    }
}

#[pyclass(frozen, skip_from_py_object, name = "RaptorParams", module = "ecbound")]
#[derive(Clone)]
struct PyRaptorParams(core::RaptorParams);

#[pymethods]
impl PyRaptorParams {
    /// `degrees` is a list of `(degree, probability)` pairs.
    #[new]
    fn new(inner_rate: f64, outer_rate: f64, degrees: Vec<(u32, f64)>) -> PyResult<Self> {
        let omega = core::DegreeDistribution::new(degrees).py()?;
        core::RaptorParams::new(inner_rate, outer_rate, omega).py().map(Self)
    }

    #[staticmethod]
    fn three_gpp() -> Self {
        Self(core::RaptorParams::three_gpp())
    }

    #[getter]
    fn inner_rate(&self) -> f64 {
        self.0.inner_rate
    }

    #[getter]
    fn outer_rate(&self) -> f64 {
        self.0.outer_rate
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.0.rate()
    }

    #[getter]
    fn degrees(&self) -> Vec<(u32, f64)> {
        self.0.omega.terms().to_vec()
    }

    /// Whether the shape has a strictly negative limit at zero weight.
    fn in_useful_region(&self) -> bool {
        membership_in_p(&self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "RaptorParams(inner_rate={}, outer_rate={}, degrees={:?})",
            self.0.inner_rate,
            self.0.outer_rate,
            self.0.omega.terms()
        )
    }
}

#[pyclass(frozen, name = "ThresholdResult", module = "ecbound")]
struct PyThresholdResult(core::ThresholdResult);

#[pymethods]
impl PyThresholdResult {
    #[getter]
    fn delta_star(&self) -> f64 {
        self.0.delta_star
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.as_str()
    }

    #[getter]
    fn lambda_hat(&self) -> Option<f64> {
        self.0.lambda_hat
    }

    #[getter]
    fn residuals(&self) -> Option<(f64, f64)> {
        self.0.residuals.map(|[a, b]| (a, b))
    }

    #[getter]
    fn useful(&self) -> bool {
        self.0.useful
    }

    fn __repr__(&self) -> String {
        format!(
            "ThresholdResult(delta_star={}, method='{}', lambda_hat={}, useful={})",
            self.0.delta_star,
            self.0.method.as_str(),
            self.0.lambda_hat.map_or("None".to_string(), |l| l.to_string()),
            if self.0.useful { "True" } else { "False" }
        )
    }
}

/// A weight spectral shape with a cached exponent solver.
#[pyclass(frozen, name = "Shape", module = "ecbound")]
struct PyShape {
    shape: Arc<dyn SpectralShape>,
    solver: OnceLock<core::ExponentSolver<'static>>,
}

impl PyShape {
    fn wrap(shape: Arc<dyn SpectralShape>) -> Self {
        PyShape {
            shape,
            solver: OnceLock::new(),
        }
    }

    fn solver(&self) -> &core::ExponentSolver<'static> {
        self.solver
            .get_or_init(|| core::ExponentSolver::shared(self.shape.clone(), SolverSettings::default()))
    }
}

#[pymethods]
impl PyShape {
    #[staticmethod]
    fn random_linear(params: &PyEnsembleParams) -> Self {
        Self::wrap(Arc::new(RandomLinearShape::new(params.0)))
    }

    #[staticmethod]
    fn raptor(params: &PyRaptorParams) -> Self {
        Self::wrap(Arc::new(RaptorShape::new(params.0.clone())))
    }

    /// Two-column `omega G` text file.
    #[staticmethod]
    fn tabulated(params: &PyEnsembleParams, path: PathBuf) -> PyResult<Self> {
        let s = core::TabulatedShape::from_file(params.0, &path).py()?;
        Ok(Self::wrap(Arc::new(s)))
    }

    fn eval(&self, omega: f64) -> f64 {
        self.shape.eval(omega)
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.shape.gamma()
    }

    #[getter]
    fn label(&self) -> String {
        self.shape.label()
    }

    fn g_plus(&self, delta: f64) -> PyResult<f64> {
        self.solver().g_plus(delta).py()
    }

    /// `(E_G(ε), argmin δ)`.
    fn exponent(&self, epsilon: f64) -> PyResult<(f64, f64)> {
        let p = self.solver().exponent(epsilon).py()?;
        Ok((p.value, p.argmin_delta))
    }

    /// List of `(ε, E_G, argmin δ)` on an increasing grid.
    fn exponent_curve(&self, grid: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        let c = self.solver().curve(&grid).py()?;
        Ok(c.points.iter().map(|p| (p.epsilon, p.value, p.argmin_delta)).collect())
    }

    /// δ* by bisection on `g⁺`.
    fn threshold(&self) -> PyResult<PyThresholdResult> {
        self.solver().threshold().py().map(PyThresholdResult)
    }

    fn __repr__(&self) -> String {
        format!("Shape({})", self.shape.label())
    }
}

#[pyfunction]
fn binary_entropy(u: f64) -> f64 {
    core::binary_entropy(u)
}

#[pyfunction]
fn kl_divergence(u: f64, v: f64) -> PyResult<f64> {
    core::kl_divergence(u, v).py()
}

#[pyfunction]
fn critical_epsilon(params: &PyEnsembleParams) -> f64 {
    core_critical_epsilon(params.0)
}

#[pyfunction]
fn exponent_random_linear_closed_form(params: &PyEnsembleParams, epsilon: f64) -> f64 {
    core::exponent_random_linear_closed_form(params.0, epsilon)
}

/// δ* of a Raptor ensemble from its two-equation characterization.
#[pyfunction]
fn threshold_raptor(params: &PyRaptorParams) -> PyResult<PyThresholdResult> {
    core_threshold_raptor(&params.0).py().map(PyThresholdResult)
}

#[pyclass(frozen, name = "WeightEnumerator", module = "ecbound")]
struct PyWeightEnumerator(core::WeightEnumerator);

#[pymethods]
impl PyWeightEnumerator {
    #[staticmethod]
    fn random_linear(n: usize, params: &PyEnsembleParams) -> PyResult<Self> {
        core::awe_random_linear(n, params.0).py().map(Self)
    }

    /// Two-column `w log2_A` text file.
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        core::WeightEnumerator::from_file(&path).py().map(Self)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    /// `log₂ 𝒜_w` for `w = 0..=n`.
    #[getter]
    fn log2_a(&self) -> Vec<f64> {
        self.0.log_a().iter().map(|v| v.log2()).collect()
    }

    /// `(bound, log2_bound)` at one erasure probability.
    fn bound(&self, params: &PyEnsembleParams, epsilon: f64) -> PyResult<(f64, f64)> {
        let r = core::evaluate_bound(&self.0, params.0, epsilon).py()?;
        Ok((r.bound, r.log2_bound.log2()))
    }

    fn bound_curve(&self, params: &PyEnsembleParams, grid: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        let c = core::bound_curve(&self.0, params.0, &grid).py()?;
        Ok(c.iter().map(|r| (r.epsilon, r.bound, r.log2_bound.log2())).collect())
    }
}

#[pyclass(frozen, skip_from_py_object, name = "GfMatrix", module = "ecbound")]
#[derive(Clone)]
struct PyGfMatrix(core::GfMatrix);

#[pymethods]
impl PyGfMatrix {
    #[new]
    fn new(q: u32, rows: Vec<Vec<u8>>) -> PyResult<Self> {
        core::GfMatrix::from_rows(q, &rows).py().map(Self)
    }

    /// `round((1−r) n) × n` matrix with i.i.d. uniform entries.
    #[staticmethod]
    fn random_parity_check(n: usize, params: &PyEnsembleParams, seed: u64) -> PyResult<Self> {
        core_sample_random_linear(n, params.0, &mut ChaCha8Rng::seed_from_u64(seed)).py().map(Self)
    }

    #[getter]
    fn q(&self) -> u32 {
        self.0.q()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    fn to_list(&self) -> Vec<Vec<u8>> {
        (0..self.0.rows()).map(|r| self.0.row(r).to_vec()).collect()
    }

    fn rank(&self) -> PyResult<usize> {
        core::gf_rank(&self.0).py()
    }

    /// Rows span the null space.
    fn null_space(&self) -> Self {
        Self(self.0.null_space())
    }

    /// `kind` is `"generator"` or `"parity_check"`.
    fn decode_fails(&self, kind: &str, erased: Vec<usize>) -> PyResult<bool> {
        let pattern = core::ErasurePattern::new(self.0.cols(), erased).py()?;
        core::ml_decode_fails(&self.0, code_kind(kind)?, &pattern).py()
    }

    fn exact_block_error(&self, kind: &str, epsilon: f64) -> PyResult<f64> {
        core::exact_block_error(&self.0, code_kind(kind)?, epsilon).py()
    }
}

fn code_kind(kind: &str) -> PyResult<core::CodeKind> {
    match kind {
        "generator" => Ok(core::CodeKind::Generator),
        "parity_check" => Ok(core::CodeKind::ParityCheck),
        other => Err(PyValueError::new_err(format!(
            "kind must be 'generator' or 'parity_check', got '{other}'"
        ))),
    }
}

#[pyclass(frozen, name = "SimulationEstimate", module = "ecbound")]
struct PySimulationEstimate(CoreEstimate);

#[pymethods]
impl PySimulationEstimate {
    #[getter]
    fn trials(&self) -> u64 {
        self.0.trials
    }

    #[getter]
    fn failures(&self) -> u64 {
        self.0.failures
    }

    #[getter]
    fn p_hat(&self) -> f64 {
        self.0.p_hat
    }

    #[getter]
    fn ci_halfwidth(&self) -> f64 {
        self.0.ci_halfwidth
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "SimulationEstimate(trials={}, failures={}, p_hat={}, ci_halfwidth={})",
            self.0.trials, self.0.failures, self.0.p_hat, self.0.ci_halfwidth
        )
    }
}

/// Monte Carlo block error rate of a random linear (`EnsembleParams`) or
/// Raptor (`RaptorParams`) ensemble, or of a fixed parity-check `GfMatrix`.
#[pyfunction]
fn monte_carlo(
    py: Python<'_>,
    ensemble: &Bound<'_, PyAny>,
    n: usize,
    epsilon: f64,
    trials: u64,
    seed: u64,
) -> PyResult<PySimulationEstimate> {
    let e = if let Ok(p) = ensemble.cast::<PyEnsembleParams>() {
        core::Ensemble::RandomLinear(p.get().0)
    } else if let Ok(p) = ensemble.cast::<PyRaptorParams>() {
        core::Ensemble::Raptor(p.get().0.clone())
    } else if let Ok(m) = ensemble.cast::<PyGfMatrix>() {
        core::Ensemble::Fixed {
            code: Arc::new(m.get().0.clone()),
            kind: core::CodeKind::ParityCheck,
        }
    } else {
        return Err(PyValueError::new_err(
            "ensemble must be EnsembleParams, RaptorParams or GfMatrix",
        ));
    };
    py.detach(|| core::monte_carlo(&e, n, epsilon, trials, seed))
        .py()
        .map(PySimulationEstimate)
}

#[pymodule]
fn ecbound(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyEnsembleParams>()?;
    m.add_class::<PyRaptorParams>()?;
    m.add_class::<PyShape>()?;
    m.add_class::<PyThresholdResult>()?;
    m.add_class::<PyWeightEnumerator>()?;
    m.add_class::<PyGfMatrix>()?;
    m.add_class::<PySimulationEstimate>()?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(critical_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(exponent_random_linear_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_raptor, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}

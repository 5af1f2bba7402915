//! Error-exponent and ML-threshold bounds for linear block code ensembles
//! over the q-ary erasure channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: entropies, divergences, log-domain binomials and the
//!   one-dimensional optimizers / root finders everything else is built on.
//! - [`spectral`]: weight spectral shapes `G(ω)` (random linear, Raptor,
//!   tabulated, custom).
//! - [`exponent`]: the exponent lower bound `E_G(ε)`, the clipped inner
//!   function `g⁺(δ)` and the threshold `δ*`.
//! - [`finite_bound`]: the finite-length union bound on the ensemble-average
//!   block error probability.
//! - [`simulate`]: GF(p) linear algebra, ensemble sampling and Monte Carlo
//!   ML decoding on the erasure channel.

pub mod error;
pub mod exponent;
pub mod finite_bound;
pub mod numerics;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use exponent::{
    exponent_curve, exponent_lower_bound, exponent_random_linear_closed_form, g_plus, h_delta,
    threshold_bisection, threshold_raptor, ExponentCurve, ExponentPoint, ExponentSolver,
    SolverSettings, ThresholdMethod, ThresholdResult,
};
pub use finite_bound::{awe_random_linear, bound_curve, evaluate_bound, FiniteBoundResult, WeightEnumerator};
pub use numerics::{binary_entropy, kl_divergence, log_binomial, LogValue, Prob};
pub use simulate::{
    exact_block_error, gf_rank, ml_decode_fails, monte_carlo, CodeKind, Ensemble, ErasurePattern,
    GfMatrix, SimulationEstimate,
};
pub use spectral::{
    CustomShape, DegreeDistribution, EnsembleParams, RandomLinearShape, RaptorParams, RaptorShape,
    SpectralShape, TabulatedShape,
};

//! Best Kullback–Leibler approximation of measures `μ ∝ exp(−Φ)·μ₀` by
//! Gaussians and Gaussian mixtures.
//!
//! The reference measure `μ₀ = N(0, C₀)` lives on a function space that is
//! discretised spectrally: every Gaussian is represented by its mean and
//! covariance in the first `γ` eigenfunctions of `C₀` (see [`spectral`]).
//! Approximating Gaussians are parameterised through the shift of their
//! precision, `C⁻¹ = C₀⁻¹ + Γ` ([`parameterization`]), and fitted by
//! minimising `D_KL(ν‖μ)` up to the constant `log Z_μ` ([`objective`],
//! [`optimize`]).
//!
//! The remaining modules provide exact finite-state divergence identities
//! ([`divergences`]), closed-form Gaussian divergences and sampling
//! ([`measures`]), displacement interpolation between Gaussians
//! ([`interpolation`]) and bundled studies such as the double-well
//! bifurcation ([`scenarios`]).

pub mod divergences;
mod error;
pub mod interpolation;
pub(crate) mod linalg;
pub mod measures;
pub mod objective;
pub mod optimize;
pub mod parameterization;
pub mod quadrature;
pub mod scenarios;
pub mod spectral;

pub use error::{Error, Result};
pub use measures::{GaussianMeasure, MixtureMeasure};
pub use objective::{ObjectiveValue, RegularizationSpec, ScalarPotential, TargetSpec};
pub use parameterization::PrecisionShift;
pub use spectral::{BasisKind, SpectralBasis};

//! The KL objective `D_KL(ν‖μ) − log Z_μ = D_KL(ν‖μ₀) + E^ν[Φ]`, its
//! regularised variant and gradients.
//!
//! Separable potentials `Φ(x) = Σ_j w_j a_j φ(x(t_j))` are integrated exactly
//! enough by Gauss–Hermite quadrature on the one-dimensional marginals of
//! `x(t_j)`. Anything else goes through Monte Carlo with a fixed seed, so that
//! repeated evaluations see the same draws.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::measures::{kl_gaussian, rng_for, standard_normals, GaussianMeasure};
use crate::parameterization::{assemble_covariance_with_margin, PrecisionShift};
use crate::quadrature;
use crate::spectral::SpectralBasis;

/// Objective evaluation refuses precisions closer to singular than this.
pub const MIN_MARGIN: f64 = 1e-10;
pub const DEFAULT_QUADRATURE_ORDER: usize = 20;

/// Named scalar potentials `φ` with first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarPotential {
    Zero,
    /// `½ q x²`.
    Quadratic {
        q: f64,
    },
    /// `(x² − 1)² / (4ε)`.
    DoubleWell {
        epsilon: f64,
    },
    /// `a x⁴ + b x²`.
    Quartic {
        a: f64,
        b: f64,
    },
    /// `Σ_k c_k x^k`.
    Polynomial(Vec<f64>),
    Sum(Vec<ScalarPotential>),
}

impl ScalarPotential {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ScalarPotential::Zero => 0.0,
            ScalarPotential::Quadratic { q } => 0.5 * q * x * x,
            ScalarPotential::DoubleWell { epsilon } => {
                let u = x * x - 1.0;
                u * u / (4.0 * epsilon)
            }
            ScalarPotential::Quartic { a, b } => {
                let x2 = x * x;
                a * x2 * x2 + b * x2
            }
            ScalarPotential::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x + ck),
            ScalarPotential::Sum(terms) => terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            ScalarPotential::Zero => 0.0,
            ScalarPotential::Quadratic { q } => q * x,
            ScalarPotential::DoubleWell { epsilon } => x * (x * x - 1.0) / epsilon,
            ScalarPotential::Quartic { a, b } => 4.0 * a * x * x * x + 2.0 * b * x,
            ScalarPotential::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * x + k as f64 * ck),
            ScalarPotential::Sum(terms) => terms.iter().map(|t| t.d1(x)).sum(),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            ScalarPotential::Zero => 0.0,
            ScalarPotential::Quadratic { q } => *q,
            ScalarPotential::DoubleWell { epsilon } => (3.0 * x * x - 1.0) / epsilon,
            ScalarPotential::Quartic { a, b } => 12.0 * a * x * x + 2.0 * b,
            ScalarPotential::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * x + (k * (k - 1)) as f64 * ck),
            ScalarPotential::Sum(terms) => terms.iter().map(|t| t.d2(x)).sum(),
        }
    }

    /// Polynomial degree, used to pick an exact quadrature order.
    pub fn degree(&self) -> usize {
        match self {
            ScalarPotential::Zero => 0,
            ScalarPotential::Quadratic { .. } => 2,
            ScalarPotential::DoubleWell { .. } | ScalarPotential::Quartic { .. } => 4,
            ScalarPotential::Polynomial(c) => c.len().saturating_sub(1),
            ScalarPotential::Sum(terms) => terms.iter().map(|t| t.degree()).max().unwrap_or(0),
        }
    }

    /// A lower bound on `inf_x φ''(x)`, when one is known in closed form.
    pub fn curvature_lower_bound(&self) -> Option<f64> {
        match self {
            ScalarPotential::Zero => Some(0.0),
            ScalarPotential::Quadratic { q } => Some(*q),
            ScalarPotential::DoubleWell { epsilon } => Some(-1.0 / epsilon),
            ScalarPotential::Quartic { a, b } => (*a >= 0.0).then_some(2.0 * b),
            ScalarPotential::Polynomial(c) => match c.len() {
                0..=2 => Some(0.0),
                3 => Some(2.0 * c[2]),
                _ => None,
            },
            ScalarPotential::Sum(terms) => terms.iter().map(|t| t.curvature_lower_bound()).sum(),
        }
    }

    /// Parses names such as `double_well(0.05)`, `quadratic(2)`,
    /// `quartic(1, -0.5)`, `polynomial(0, 0, 1)`, `zero`, and sums of these
    /// joined by `+`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut depth = 0usize;
        let mut start = 0;
        for (i, ch) in text.char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => depth = depth.saturating_sub(1),
                '+' if depth == 0 => {
                    terms.push(Self::parse_term(&text[start..i])?);
                    start = i + 1;
                }
                _ => {}
            }
        }
        terms.push(Self::parse_term(&text[start..])?);
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            ScalarPotential::Sum(terms)
        })
    }

    fn parse_term(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, args) = match text.find('(') {
            Some(open) => {
                let inner = text[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| invalid(format!("unbalanced parentheses in `{text}`")))?;
                let args = inner
                    .split(',')
                    .filter(|a| !a.trim().is_empty())
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|_| invalid(format!("bad number `{}` in `{text}`", a.trim())))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (text[..open].trim(), args)
            }
            None => (text, Vec::new()),
        };
        if args.iter().any(|a| !a.is_finite()) {
            return Err(invalid(format!("non-finite parameter in `{text}`")));
        }
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(invalid(format!(
                    "`{name}` takes {n} parameter(s), got {}",
                    args.len()
                )))
            }
        };
        match name {
            "zero" => {
                arity(0)?;
                Ok(ScalarPotential::Zero)
            }
            "quadratic" => {
                arity(1)?;
                Ok(ScalarPotential::Quadratic { q: args[0] })
            }
            "double_well" => {
                arity(1)?;
                if !(args[0] > 0.0) {
                    return Err(invalid(format!("double_well needs ε > 0, got {}", args[0])));
                }
                Ok(ScalarPotential::DoubleWell { epsilon: args[0] })
            }
            "quartic" => {
                arity(2)?;
                Ok(ScalarPotential::Quartic { a: args[0], b: args[1] })
            }
            "polynomial" => Ok(ScalarPotential::Polynomial(args)),
            _ => Err(invalid(format!(
                "unknown potential `{name}` (expected zero, quadratic, double_well, quartic or polynomial)"
            ))),
        }
    }
}

impl fmt::Display for ScalarPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarPotential::Zero => write!(f, "zero"),
            ScalarPotential::Quadratic { q } => write!(f, "quadratic({q:?})"),
            ScalarPotential::DoubleWell { epsilon } => write!(f, "double_well({epsilon:?})"),
            ScalarPotential::Quartic { a, b } => write!(f, "quartic({a:?},{b:?})"),
            ScalarPotential::Polynomial(c) => {
                let args: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
                write!(f, "polynomial({})", args.join(","))
            }
            ScalarPotential::Sum(terms) => {
                let parts: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

type GridValue = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GridGradient = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A black-box functional of grid values, optionally with its gradient
/// with respect to those values.
#[derive(Clone)]
pub struct GridFunctional {
    label: String,
    value: Arc<GridValue>,
    gradient: Option<Arc<GridGradient>>,
}

impl GridFunctional {
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for GridFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridFunctional")
            .field("label", &self.label)
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    /// `Φ(x) = Σ_j w_j a_j φ(x(t_j))` with `a ≡ 1` unless a profile is given.
    SeparablePointwise {
        phi: ScalarPotential,
        profile: Option<Vec<f64>>,
    },
    GridFunctional(GridFunctional),
}

impl Potential {
    pub fn separable(phi: ScalarPotential) -> Self {
        Potential::SeparablePointwise { phi, profile: None }
    }
}

/// Growth envelope `−c₁‖x‖_∞^α ≤ Φ(x) ≤ c₂ exp(c₃‖x‖_∞^α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub alpha: f64,
}

impl GrowthBound {
    pub fn new(c1: f64, c2: f64, c3: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid(format!(
                "growth exponent must lie in (0, 2), got {alpha}"
            )));
        }
        if [c1, c2, c3].iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("growth constants must be finite and non-negative"));
        }
        Ok(Self { c1, c2, c3, alpha })
    }

    pub fn check(&self, sup_norm: f64, value: f64) -> Result<()> {
        let s = sup_norm.powf(self.alpha);
        if value < -self.c1 * s || value > self.c2 * (self.c3 * s).exp() {
            return Err(Error::GrowthViolation { sup_norm, value });
        }
        Ok(())
    }
}

/// The target `μ ∝ exp(−Φ)·μ₀`, with `μ₀` the reference measure of `basis`.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    basis: Arc<SpectralBasis>,
    potential: Potential,
    growth: Option<GrowthBound>,
}

impl TargetSpec {
    pub fn new(basis: Arc<SpectralBasis>, potential: Potential) -> Self {
        Self {
            basis,
            potential,
            growth: None,
        }
    }

    pub fn separable(basis: Arc<SpectralBasis>, phi: ScalarPotential) -> Self {
        Self::new(basis, Potential::separable(phi))
    }

    pub fn with_growth(mut self, growth: GrowthBound) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn growth(&self) -> Option<GrowthBound> {
        self.growth
    }

    fn validate(&self) -> Result<()> {
        if let Potential::SeparablePointwise {
            profile: Some(a), ..
        } = &self.potential
        {
            if a.len() != self.basis.grid_size() || a.iter().any(|v| !v.is_finite()) {
                return Err(invalid(
                    "potential profile must have one finite value per grid point",
                ));
            }
        }
        Ok(())
    }

    fn profile_weight(&self, j: usize) -> f64 {
        let w = self.basis.quadrature_weights()[j];
        match &self.potential {
            Potential::SeparablePointwise {
                profile: Some(a), ..
            } => w * a[j],
            _ => w,
        }
    }

    /// `Φ` at the path with coefficients `x`, checked against the growth bound.
    pub fn phi(&self, x: &DVector<f64>) -> Result<f64> {
        let grid = self.basis.eigenfunction_table().transpose() * x;
        let value = self.phi_grid(grid.as_slice());
        if let Some(growth) = &self.growth {
            growth.check(grid.amax(), value)?;
        }
        Ok(value)
    }

    fn phi_grid(&self, grid: &[f64]) -> f64 {
        match &self.potential {
            Potential::SeparablePointwise { phi, .. } => grid
                .iter()
                .enumerate()
                .map(|(j, x)| self.profile_weight(j) * phi.value(*x))
                .sum(),
            Potential::GridFunctional(f) => (f.value)(grid),
        }
    }

    /// `∂Φ/∂x(t_j)` on the grid.
    fn phi_grid_gradient(&self, grid: &[f64]) -> Result<Vec<f64>> {
        match &self.potential {
            Potential::SeparablePointwise { phi, .. } => Ok(grid
                .iter()
                .enumerate()
                .map(|(j, x)| self.profile_weight(j) * phi.d1(*x))
                .collect()),
            Potential::GridFunctional(f) => match &f.gradient {
                Some(g) => Ok(g(grid)),
                None => Err(Error::UnsupportedMethod(format!(
                    "grid functional `{}` has no gradient",
                    f.label
                ))),
            },
        }
    }

    /// Gradient of `Φ` with respect to basis coefficients.
    pub fn phi_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let e = self.basis.eigenfunction_table();
        let grid = e.transpose() * x;
        let g = self.phi_grid_gradient(grid.as_slice())?;
        Ok(e * DVector::from_vec(g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpectationMethod {
    Quadrature { order: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for ExpectationMethod {
    fn default() -> Self {
        ExpectationMethod::Quadrature {
            order: DEFAULT_QUADRATURE_ORDER,
        }
    }
}

/// Penalty `δ‖v‖²_{H^r}` on multiplication potentials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegularizationSpec {
    pub delta: f64,
    pub r: f64,
}

impl RegularizationSpec {
    pub fn new(delta: f64, r: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(invalid(format!("δ must be non-negative, got {delta}")));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(invalid(format!(
                "Sobolev order r must be non-negative, got {r}"
            )));
        }
        Ok(Self { delta, r })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn penalty(&self, shift: &PrecisionShift, basis: &SpectralBasis) -> Result<f64> {
        match shift {
            PrecisionShift::MultiplicationPotential(v) if self.delta > 0.0 => {
                Ok(self.delta * basis.sobolev_norm_sq(v, self.r)?)
            }
            _ => Ok(0.0),
        }
    }

    /// Gradient of the penalty with respect to the grid values of `v`.
    pub fn penalty_gradient(&self, v: &[f64], basis: &SpectralBasis) -> Result<Vec<f64>> {
        if self.delta == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let coeffs = basis.project(v, basis.mode_count())?;
        let weights = basis.sobolev_weights(self.r);
        let scaled: Vec<f64> = coeffs.iter().zip(&weights).map(|(c, s)| c * s).collect();
        let e = basis.eigenfunction_table();
        Ok((0..v.len())
            .map(|j| {
                let dot: f64 = (0..scaled.len()).map(|a| scaled[a] * e[(a, j)]).sum();
                2.0 * self.delta * basis.quadrature_weights()[j] * dot
            })
            .collect())
    }
}

/// Decomposition of the objective; `total` omits the constant `log Z_μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub gaussian_kl: f64,
    pub phi_expectation: f64,
    pub penalty: f64,
    pub total: f64,
}

impl ObjectiveValue {
    fn new(gaussian_kl: f64, phi_expectation: f64, penalty: f64) -> Self {
        Self {
            gaussian_kl,
            phi_expectation,
            penalty,
            total: gaussian_kl + phi_expectation + penalty,
        }
    }
}

struct PhiTerms {
    value: f64,
    mean_grad: DVector<f64>,
    /// `∂E[Φ]/∂P` with the `tr(G dP)` convention.
    precision_grad: DMatrix<f64>,
}

fn check_basis(nu: &GaussianMeasure, target: &TargetSpec) -> Result<()> {
    if !nu.basis().compatible_with(target.basis()) {
        return Err(invalid("measure and target use different bases"));
    }
    target.validate()
}

fn phi_terms(
    nu: &GaussianMeasure,
    target: &TargetSpec,
    method: ExpectationMethod,
    with_gradient: bool,
) -> Result<PhiTerms> {
    check_basis(nu, target)?;
    match method {
        ExpectationMethod::Quadrature { order } => {
            let phi = match &target.potential {
                Potential::SeparablePointwise { phi, .. } => phi,
                Potential::GridFunctional(f) => {
                    return Err(Error::UnsupportedMethod(format!(
                        "quadrature needs a separable potential; `{}` is a grid functional",
                        f.label
                    )))
                }
            };
            if order < 2 {
                return Err(invalid(format!(
                    "quadrature order must be at least 2, got {order}"
                )));
            }
            quadrature_terms(nu, target, phi, order, with_gradient)
        }
        ExpectationMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(invalid("Monte Carlo needs at least two samples"));
            }
            monte_carlo_terms(nu, target, samples, seed, with_gradient)
        }
    }
}

fn quadrature_terms(
    nu: &GaussianMeasure,
    target: &TargetSpec,
    phi: &ScalarPotential,
    order: usize,
    with_gradient: bool,
) -> Result<PhiTerms> {
    let rule = quadrature::cached(order);
    let e = target.basis.eigenfunction_table();
    let g = nu.dim();
    let means = e.transpose() * nu.mean();
    let fte = nu.factor().transpose() * e;
    let mut value = 0.0;
    let mut d1 = vec![0.0; means.len()];
    let mut d2 = vec![0.0; means.len()];
    for j in 0..means.len() {
        let a = target.profile_weight(j);
        if a == 0.0 {
            continue;
        }
        let var = fte.column(j).norm_squared();
        let sd = var.sqrt();
        let (mut v, mut g1, mut g2) = (0.0, 0.0, 0.0);
        for (z, w) in rule.nodes().iter().zip(rule.weights()) {
            let x = means[j] + sd * z;
            v += w * phi.value(x);
            if with_gradient {
                g1 += w * phi.d1(x);
                g2 += w * phi.d2(x);
            }
        }
        value += a * v;
        d1[j] = a * g1;
        d2[j] = 0.5 * a * g2;
    }
    if !with_gradient {
        return Ok(PhiTerms {
            value,
            mean_grad: DVector::zeros(g),
            precision_grad: DMatrix::zeros(g, g),
        });
    }
    let mean_grad = e * DVector::from_vec(d1);
    let scaled = DMatrix::from_fn(g, e.ncols(), |a, j| e[(a, j)] * d2[j]);
    let grad_cov = scaled * e.transpose();
    let c = nu.covariance();
    let precision_grad = -linalg::symmetrize(&(&c * grad_cov * &c));
    Ok(PhiTerms {
        value,
        mean_grad,
        precision_grad,
    })
}

fn monte_carlo_terms(
    nu: &GaussianMeasure,
    target: &TargetSpec,
    samples: usize,
    seed: u64,
    with_gradient: bool,
) -> Result<PhiTerms> {
    let g = nu.dim();
    let e = target.basis.eigenfunction_table();
    let mut rng = rng_for(seed, 0);
    let mut value = 0.0;
    let mut mean_grad = DVector::zeros(g);
    let mut factor_grad = DMatrix::zeros(g, g);
    for _ in 0..samples {
        let z = standard_normals(&mut rng, g);
        let x = nu.mean() + nu.factor() * &z;
        let grid = e.transpose() * &x;
        let v = target.phi_grid(grid.as_slice());
        if let Some(growth) = &target.growth {
            growth.check(grid.amax(), v)?;
        }
        value += v;
        if with_gradient {
            let gx = e * DVector::from_vec(target.phi_grid_gradient(grid.as_slice())?);
            factor_grad += &gx * z.transpose();
            mean_grad += gx;
        }
    }
    let n = samples as f64;
    if !with_gradient {
        return Ok(PhiTerms {
            value: value / n,
            mean_grad,
            precision_grad: DMatrix::zeros(g, g),
        });
    }
    // x = m + F z with C = F Fᵀ: pull ∂/∂F back to C, then to P = C⁻¹
    let grad_cov = linalg::cholesky_pullback(nu.factor(), &(factor_grad / n));
    let c = nu.covariance();
    Ok(PhiTerms {
        value: value / n,
        mean_grad: mean_grad / n,
        precision_grad: -linalg::symmetrize(&(&c * grad_cov * &c)),
    })
}

/// `E^ν[Φ]`.
pub fn expectation_phi(
    nu: &GaussianMeasure,
    target: &TargetSpec,
    method: ExpectationMethod,
) -> Result<f64> {
    Ok(phi_terms(nu, target, method, false)?.value)
}

/// Unpenalised objective of an already assembled Gaussian.
pub fn objective_for_measure(
    nu: &GaussianMeasure,
    target: &TargetSpec,
    method: ExpectationMethod,
) -> Result<ObjectiveValue> {
    let reference = GaussianMeasure::reference(target.basis.clone());
    let kl = kl_gaussian(nu, &reference)?;
    Ok(ObjectiveValue::new(
        kl,
        expectation_phi(nu, target, method)?,
        0.0,
    ))
}

fn assemble(
    mean: &DVector<f64>,
    shift: &PrecisionShift,
    target: &TargetSpec,
) -> Result<GaussianMeasure> {
    assemble_covariance_with_margin(shift, mean, &target.basis, MIN_MARGIN)
}

/// `D_KL(ν‖μ₀) + E^ν[Φ] + δ‖v‖²_{H^r}` for `ν = N(mean, (C₀⁻¹ + Γ)⁻¹)`.
pub fn kl_objective(
    mean: &DVector<f64>,
    shift: &PrecisionShift,
    target: &TargetSpec,
    reg: &RegularizationSpec,
    method: ExpectationMethod,
) -> Result<ObjectiveValue> {
    let nu = assemble(mean, shift, target)?;
    let base = objective_for_measure(&nu, target, method)?;
    let penalty = reg.penalty(shift, &target.basis)?;
    Ok(ObjectiveValue::new(
        base.gaussian_kl,
        base.phi_expectation,
        penalty,
    ))
}

/// Gradient with respect to the parameters of each shift family.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftGradient {
    /// `G` with `dF = tr(G dΓ)` for symmetric perturbations `dΓ`.
    FullSymmetric(DMatrix<f64>),
    ConstantBeta(f64),
    /// `∂F/∂v(t_j)`.
    MultiplicationPotential(Vec<f64>),
    /// Same convention as `FullSymmetric`, on the leading block.
    FiniteRank(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub mean: DVector<f64>,
    pub shift: ShiftGradient,
}

/// Objective, measure and derivatives with respect to mean and precision.
pub(crate) struct Evaluation {
    pub value: ObjectiveValue,
    pub measure: GaussianMeasure,
    pub mean_grad: DVector<f64>,
    pub precision_grad: DMatrix<f64>,
}

/// Unpenalised objective with derivatives in `(m, P)`.
pub(crate) fn evaluate_measure(
    nu: GaussianMeasure,
    target: &TargetSpec,
    method: ExpectationMethod,
) -> Result<Evaluation> {
    let reference = GaussianMeasure::reference(target.basis.clone());
    let kl = kl_gaussian(&nu, &reference)?;
    let terms = phi_terms(&nu, target, method, true)?;
    let lam = target.basis.eigenvalues();
    let c = nu.covariance();
    let g = nu.dim();
    // ∂/∂P of ½[tr(Λ⁻¹C) + log det P] is ½(C − CΛ⁻¹C)
    let c_scaled = DMatrix::from_fn(g, g, |a, b| c[(a, b)] / lam[a]);
    let kl_grad = (&c - c.transpose() * c_scaled) * 0.5;
    let mean_grad = DVector::from_fn(g, |a, _| nu.mean()[a] / lam[a]) + terms.mean_grad;
    Ok(Evaluation {
        value: ObjectiveValue::new(kl, terms.value, 0.0),
        measure: nu,
        mean_grad,
        precision_grad: linalg::symmetrize(&kl_grad) + terms.precision_grad,
    })
}

pub(crate) fn evaluate(
    mean: &DVector<f64>,
    shift: &PrecisionShift,
    target: &TargetSpec,
    method: ExpectationMethod,
) -> Result<Evaluation> {
    evaluate_measure(assemble(mean, shift, target)?, target, method)
}

/// Maps `∂F/∂P` to the parameters of the shift family (no penalty).
pub(crate) fn shift_gradient_from_precision(
    shift: &PrecisionShift,
    precision_grad: &DMatrix<f64>,
    basis: &SpectralBasis,
) -> ShiftGradient {
    match shift {
        PrecisionShift::FullSymmetric(_) => ShiftGradient::FullSymmetric(precision_grad.clone()),
        PrecisionShift::ConstantBeta(_) => ShiftGradient::ConstantBeta(precision_grad.trace()),
        PrecisionShift::MultiplicationPotential(_) => {
            let e = basis.eigenfunction_table();
            let ge = precision_grad * e;
            ShiftGradient::MultiplicationPotential(
                (0..e.ncols())
                    .map(|j| basis.quadrature_weights()[j] * e.column(j).dot(&ge.column(j)))
                    .collect(),
            )
        }
        PrecisionShift::FiniteRank { rank, .. } => {
            ShiftGradient::FiniteRank(precision_grad.view((0, 0), (*rank, *rank)).into_owned())
        }
    }
}

/// Gradient of [`kl_objective`] with respect to the mean and the shift parameters.
pub fn gradient(
    mean: &DVector<f64>,
    shift: &PrecisionShift,
    target: &TargetSpec,
    reg: &RegularizationSpec,
    method: ExpectationMethod,
) -> Result<Gradient> {
    let eval = evaluate(mean, shift, target, method)?;
    let mut shift_grad = shift_gradient_from_precision(shift, &eval.precision_grad, &target.basis);
    if let (ShiftGradient::MultiplicationPotential(g), PrecisionShift::MultiplicationPotential(v)) =
        (&mut shift_grad, shift)
    {
        for (gj, pj) in g.iter_mut().zip(reg.penalty_gradient(v, &target.basis)?) {
            *gj += pj;
        }
    }
    Ok(Gradient {
        mean: eval.mean_grad,
        shift: shift_grad,
    })
}

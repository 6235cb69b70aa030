//! Reproducible studies: the one-dimensional double well and its bifurcation
//! diagram, and sequences of multiplication potentials that converge weakly
//! while their norms blow up.
//!
//! The double well `Φ(x) = (x² − 1)²/(4ε)` approximated by `N(m, σ²)` has
//! objective
//!
//! ```text
//! D(m, σ) = (1/ε)(¼(m² − 1)² + ½σ²(3m² − 1) + ¾σ⁴) − log σ
//! ```
//!
//! whose critical points are roots of quadratics in `σ²`.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::{kl_gaussian, GaussianMeasure};
use crate::objective::{Potential, RegularizationSpec, ScalarPotential, TargetSpec};
use crate::optimize::{minimize, multistart, random_inits, Init, SolveOptions};
use crate::parameterization::{
    assemble_covariance, multiplication_matrix, weighted_hs_norm, PrecisionShift, ShiftFamily,
};
use crate::spectral::{BasisKind, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoubleWellSpec {
    epsilon: f64,
}

impl DoubleWellSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("ε must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn potential(&self) -> ScalarPotential {
        ScalarPotential::DoubleWell {
            epsilon: self.epsilon,
        }
    }
}

fn check_args(sigma: f64, epsilon: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("σ must be positive, got {sigma}")));
    }
    DoubleWellSpec::new(epsilon).map(|_| ())
}

pub fn double_well_objective(m: f64, sigma: f64, epsilon: f64) -> Result<f64> {
    check_args(sigma, epsilon)?;
    let m2 = m * m;
    let s2 = sigma * sigma;
    let quartic = 0.25 * (m2 - 1.0).powi(2) + 0.5 * s2 * (3.0 * m2 - 1.0) + 0.75 * s2 * s2;
    Ok(quartic / epsilon - sigma.ln())
}

/// `(∂D/∂m, ∂D/∂σ)`.
pub fn double_well_gradient(m: f64, sigma: f64, epsilon: f64) -> Result<[f64; 2]> {
    check_args(sigma, epsilon)?;
    let m2 = m * m;
    let s2 = sigma * sigma;
    Ok([
        m * (m2 - 1.0 + 3.0 * s2) / epsilon,
        sigma * (3.0 * m2 - 1.0 + 3.0 * s2) / epsilon - 1.0 / sigma,
    ])
}

pub fn double_well_hessian(m: f64, sigma: f64, epsilon: f64) -> Result<[[f64; 2]; 2]> {
    check_args(sigma, epsilon)?;
    let m2 = m * m;
    let s2 = sigma * sigma;
    let off = 6.0 * m * sigma / epsilon;
    Ok([
        [(3.0 * m2 - 1.0 + 3.0 * s2) / epsilon, off],
        [off, (3.0 * m2 - 1.0 + 9.0 * s2) / epsilon + 1.0 / s2],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Minimum,
    Saddle,
    Maximum,
    /// Singular Hessian, as at the fold.
    Degenerate,
}

impl CriticalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CriticalKind::Minimum => "minimum",
            CriticalKind::Saddle => "saddle",
            CriticalKind::Maximum => "maximum",
            CriticalKind::Degenerate => "degenerate",
        }
    }
}

/// Classifies a critical point by the signs of the Hessian eigenvalues.
pub fn classify(m: f64, sigma: f64, epsilon: f64) -> Result<CriticalKind> {
    let h = double_well_hessian(m, sigma, epsilon)?;
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let tr = h[0][0] + h[1][1];
    let scale = h[0][0].abs().max(h[1][1].abs()).max(h[0][1].abs()).powi(2);
    Ok(if det.abs() <= 1e-12 * scale {
        CriticalKind::Degenerate
    } else if det < 0.0 {
        CriticalKind::Saddle
    } else if tr > 0.0 {
        CriticalKind::Minimum
    } else {
        CriticalKind::Maximum
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub m: f64,
    pub sigma: f64,
    pub objective: f64,
    pub kind: CriticalKind,
}

impl CriticalPoint {
    fn at(m: f64, sigma: f64, epsilon: f64) -> Result<Self> {
        Ok(Self {
            m,
            sigma,
            objective: double_well_objective(m, sigma, epsilon)?,
            kind: classify(m, sigma, epsilon)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branches {
    pub symmetric: CriticalPoint,
    /// `(+m, σ)` before `(−m, σ)`, the smaller `σ` first. Empty for `ε > 1/6`;
    /// the two `σ` roots merge into a single pair at `ε = 1/6`.
    pub off_center: Vec<CriticalPoint>,
}

impl Branches {
    pub fn count(&self) -> usize {
        1 + self.off_center.len()
    }

    /// The lowest objective over all critical points, which is the global
    /// minimum since `D` blows up as `σ → 0` and at infinity.
    pub fn global_objective(&self) -> f64 {
        self.off_center
            .iter()
            .map(|p| p.objective)
            .fold(self.symmetric.objective, f64::min)
    }
}

/// Closed-form roots of `∇D = 0`. With `m = 0` the `σ` equation is
/// `3σ⁴ − σ² − ε = 0`; with `m² = 1 − 3σ²` it is `6σ⁴ − 2σ² + ε = 0`.
pub fn double_well_critical_points(epsilon: f64) -> Result<Branches> {
    DoubleWellSpec::new(epsilon)?;
    let s0 = ((1.0 + (1.0 + 12.0 * epsilon).sqrt()) / 6.0).sqrt();
    let symmetric = CriticalPoint::at(0.0, s0, epsilon)?;
    let disc = 1.0 - 6.0 * epsilon;
    let mut off_center = Vec::new();
    if disc >= 0.0 {
        let root = disc.sqrt();
        // ε/(1 + √·) avoids cancellation in (1 − √·)/6 for small ε
        let mut sigma_sq = vec![epsilon / (1.0 + root)];
        if root > 0.0 {
            sigma_sq.push((1.0 + root) / 6.0);
        }
        for s2 in sigma_sq {
            let m = (1.0 - 3.0 * s2).max(0.0).sqrt();
            let sigma = s2.sqrt();
            off_center.push(CriticalPoint::at(m, sigma, epsilon)?);
            off_center.push(CriticalPoint::at(-m, sigma, epsilon)?);
        }
    }
    Ok(Branches {
        symmetric,
        off_center,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationRow {
    pub epsilon: f64,
    /// 0 for the symmetric point, then the off-center points in
    /// [`Branches::off_center`] order.
    pub branch_id: usize,
    pub m: f64,
    pub sigma: f64,
    pub objective: f64,
    pub kind: CriticalKind,
    pub is_global: bool,
    /// Number of critical points at this `ε`, counting `±m` separately.
    pub critical_points: usize,
}

/// Rows for every critical point at every `ε`; rows are computed in parallel
/// and returned in grid order.
pub fn bifurcation_sweep(epsilon_grid: &[f64]) -> Result<Vec<BifurcationRow>> {
    if epsilon_grid.is_empty() {
        return Err(invalid("ε grid is empty"));
    }
    if epsilon_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("ε grid must be strictly increasing"));
    }
    let per_eps = epsilon_grid
        .par_iter()
        .map(|&eps| {
            let branches = double_well_critical_points(eps)?;
            let best = branches.global_objective();
            let count = branches.count();
            let tol = 1e-12 * best.abs().max(1.0);
            Ok(std::iter::once(&branches.symmetric)
                .chain(&branches.off_center)
                .enumerate()
                .map(|(id, p)| BifurcationRow {
                    epsilon: eps,
                    branch_id: id,
                    m: p.m,
                    sigma: p.sigma,
                    objective: p.objective,
                    kind: p.kind,
                    is_global: p.objective - best <= tol,
                    critical_points: count,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_eps.into_iter().flatten().collect())
}

/// `D(off-center minimiser) − D(symmetric point)`; `None` past the fold.
pub fn branch_gap(epsilon: f64) -> Result<Option<f64>> {
    let b = double_well_critical_points(epsilon)?;
    Ok(b.off_center
        .first()
        .map(|p| p.objective - b.symmetric.objective))
}

pub const CROSSOVER_BRACKET: (f64, f64) = (0.10, 1.0 / 6.0);

/// The `ε` at which the symmetric point becomes the global minimiser, by
/// bisection of [`branch_gap`] on [`CROSSOVER_BRACKET`].
pub fn find_crossover() -> Result<f64> {
    let gap = |e: f64| -> Result<f64> {
        branch_gap(e)?.ok_or_else(|| invalid(format!("no off-center branch at ε = {e}")))
    };
    let (mut lo, mut hi) = CROSSOVER_BRACKET;
    let mut g_lo = gap(lo)?;
    let g_hi = gap(hi)?;
    if g_lo.signum() == g_hi.signum() {
        return Err(invalid("branch gap does not change sign on the bracket"));
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid)?;
        if g == 0.0 {
            return Ok(mid);
        }
        if g.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The double well on a single coordinate with reference `N(0, 1)`:
/// `Φ(x) = (x² − 1)²/(4ε) − x²/2`, so that the objective equals
/// `D(m, σ) − ½`.
pub fn double_well_target(epsilon: f64) -> Result<TargetSpec> {
    let spec = DoubleWellSpec::new(epsilon)?;
    let basis = Arc::new(SpectralBasis::point(1.0)?);
    Ok(TargetSpec::separable(
        basis,
        ScalarPotential::Sum(vec![
            spec.potential(),
            ScalarPotential::Quadratic { q: -1.0 },
        ]),
    ))
}

/// The constant offset between the objective of [`double_well_target`] and `D`.
pub const DOUBLE_WELL_OFFSET: f64 = 0.5;

/// `N(m, σ²)` has precision `1 + β` against the unit reference.
pub fn sigma_to_beta(sigma: f64) -> f64 {
    1.0 / (sigma * sigma) - 1.0
}

pub fn beta_to_sigma(beta: f64) -> f64 {
    (1.0 + beta).sqrt().recip()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoubleWellFit {
    pub m: f64,
    pub sigma: f64,
    /// `D(m, σ)`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub starts: Vec<usize>,
}

/// Multistart over `(m, β)` from the given `(m, σ)` starts, ranked by `D`.
pub fn fit_double_well(
    epsilon: f64,
    starts: &[(f64, f64)],
    opts: &SolveOptions,
) -> Result<Vec<DoubleWellFit>> {
    let target = double_well_target(epsilon)?;
    let inits = starts
        .iter()
        .map(|&(m, sigma)| {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("starting σ must be positive, got {sigma}")));
            }
            Ok(Init {
                mean: DVector::from_element(1, m),
                shift: PrecisionShift::ConstantBeta(sigma_to_beta(sigma)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ranked = multistart(
        &target,
        ShiftFamily::ConstantBeta,
        &inits,
        &RegularizationSpec::none(),
        opts,
    )?;
    Ok(ranked
        .into_iter()
        .map(|r| {
            let s = r.solution;
            let beta = match s.shift {
                PrecisionShift::ConstantBeta(b) => b,
                _ => unreachable!("constant-β family returns constant-β shifts"),
            };
            DoubleWellFit {
                m: s.mean[0],
                sigma: beta_to_sigma(beta),
                objective: s.objective.total + DOUBLE_WELL_OFFSET,
                converged: s.converged,
                iterations: s.iterations,
                gradient_norm: s.gradient_norm,
                starts: r.starts,
            }
        })
        .collect())
}

/// `∫ exp(−1/(1 − t²)) dt` over `(−1, 1)`.
pub const BUMP_INTEGRAL: f64 = 0.443_993_816_168_079_4;

/// The standard bump `exp(−1/(1 − t²))/∫`, supported on `[−1, 1]`.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp() / BUMP_INTEGRAL
    }
}

/// Minimum number of grid spacings per feature of a sequence potential.
pub const MIN_SPACINGS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceKind {
    /// `v_n(t) = n·b(nt)` for the unit-mass bump `b`; converges to a point
    /// mass at 0.
    Mollifier,
    /// `v_n(t) = 1 + a·sin(2πnt)`; converges weakly to its mean 1.
    Oscillation { amplitude: f64 },
}

impl SequenceKind {
    pub fn oscillation() -> Self {
        SequenceKind::Oscillation { amplitude: 0.5 }
    }

    /// Width of the feature that must be resolved: the bump support or one
    /// period.
    pub fn feature_width(&self, n: usize) -> f64 {
        match self {
            SequenceKind::Mollifier => 2.0 / n as f64,
            SequenceKind::Oscillation { .. } => 1.0 / n as f64,
        }
    }

    pub fn limit_mean(&self) -> Option<f64> {
        match self {
            SequenceKind::Mollifier => None,
            SequenceKind::Oscillation { .. } => Some(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if let SequenceKind::Oscillation { amplitude } = self {
            if !(amplitude.abs() < 1.0) {
                return Err(invalid(format!(
                    "oscillation amplitude must lie in (−1, 1) to keep v positive, got {amplitude}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequenceFamily {
    pub kind: SequenceKind,
    pub n: usize,
}

fn require_bridge(basis: &SpectralBasis) -> Result<()> {
    if basis.kind() != BasisKind::DirichletBridge {
        return Err(invalid("sequence studies run on the bridge basis"));
    }
    Ok(())
}

/// `v_n` on the basis grid. The mollifier is rescaled so that its quadrature
/// mass is exactly one.
pub fn make_sequence_potential(family: SequenceFamily, basis: &SpectralBasis) -> Result<Vec<f64>> {
    require_bridge(basis)?;
    family.kind.validate()?;
    if family.n == 0 {
        return Err(invalid("sequence index n must be positive"));
    }
    let width = family.kind.feature_width(family.n);
    if width < MIN_SPACINGS * basis.spacing() {
        return Err(Error::Resolution(format!(
            "n = {} gives feature width {width:.3e}, below {MIN_SPACINGS} grid spacings ({:.3e})",
            family.n,
            MIN_SPACINGS * basis.spacing()
        )));
    }
    let n = family.n as f64;
    let grid = basis.grid();
    match family.kind {
        SequenceKind::Mollifier => {
            let raw: Vec<f64> = grid.iter().map(|t| n * bump(n * t)).collect();
            let mass: f64 = raw
                .iter()
                .zip(basis.quadrature_weights())
                .map(|(v, w)| v * w)
                .sum();
            Ok(raw.into_iter().map(|v| v / mass).collect())
        }
        SequenceKind::Oscillation { amplitude } => Ok(grid
            .iter()
            .map(|t| 1.0 + amplitude * (2.0 * std::f64::consts::PI * n * t).sin())
            .collect()),
    }
}

/// The grid potential of the limit: `1/w_j` at the grid point nearest 0 for
/// the mollifier, the constant mean for the oscillation.
pub fn limit_potential(kind: SequenceKind, basis: &SpectralBasis) -> Result<Vec<f64>> {
    require_bridge(basis)?;
    kind.validate()?;
    let grid = basis.grid();
    match kind.limit_mean() {
        Some(mean) => Ok(vec![mean; grid.len()]),
        None => {
            let j0 = grid
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j)
                .unwrap_or(0);
            let mut v = vec![0.0; grid.len()];
            v[j0] = 1.0 / basis.quadrature_weights()[j0];
            Ok(v)
        }
    }
}

/// Settings for the regularised re-minimisation in [`sequence_study`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularisedRefit {
    /// Modes kept for the refit; the study basis is truncated to this many.
    pub modes: usize,
    pub inits: usize,
    pub seed: u64,
    pub solve: SolveOptions,
}

impl Default for RegularisedRefit {
    fn default() -> Self {
        Self {
            modes: 16,
            inits: 5,
            seed: 0,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceRow {
    pub n: usize,
    /// `KL(ν_n ‖ ν_⋆)` between the centred Gaussians with precisions
    /// `C₀⁻¹ + v_n` and `C₀⁻¹ + v_⋆`.
    pub kl_to_limit: f64,
    pub sobolev_norm_sq: f64,
    /// Grid quadrature of `v_n²`.
    pub l2_norm_sq: f64,
    /// `‖C₀^{1/2} v_n C₀^{1/2}‖_HS`.
    pub weighted_hs_norm: f64,
    /// Mean over starts of `‖v‖_{H^r}` at the regularised optimum.
    pub regularised_norm: f64,
    /// `(max − min)/mean` of that norm across starts.
    pub regularised_spread: f64,
    pub regularised_converged: bool,
}

/// For each `n`: distance of `ν_n` to the limit, norms of `v_n`, and the
/// optimum of the penalised problem whose unpenalised minimiser is `v_n`
/// (target `Φ(x) = ½∫ v_n x²`, reference basis truncated to
/// `refit.modes`). Rows are computed in parallel, returned in `n_list` order.
pub fn sequence_study(
    basis: &Arc<SpectralBasis>,
    kind: SequenceKind,
    n_list: &[usize],
    reg: RegularizationSpec,
    refit: &RegularisedRefit,
) -> Result<Vec<SequenceRow>> {
    require_bridge(basis)?;
    if n_list.is_empty() {
        return Err(invalid("n list is empty"));
    }
    if refit.inits == 0 {
        return Err(invalid("the regularised refit needs at least one start"));
    }
    let coarse = Arc::new(basis.truncate(refit.modes.min(basis.mode_count()))?);
    let zero = DVector::zeros(basis.mode_count());
    let limit = assemble_covariance(
        &PrecisionShift::MultiplicationPotential(limit_potential(kind, basis)?),
        &zero,
        basis,
    )?;
    // check every n before spending time on any of them
    let potentials = n_list
        .iter()
        .map(|&n| make_sequence_potential(SequenceFamily { kind, n }, basis))
        .collect::<Result<Vec<_>>>()?;
    n_list
        .par_iter()
        .zip(potentials.par_iter())
        .map(|(&n, v)| {
            let nu_n: GaussianMeasure = assemble_covariance(
                &PrecisionShift::MultiplicationPotential(v.clone()),
                &zero,
                basis,
            )?;
            let l2_norm_sq = v
                .iter()
                .zip(basis.quadrature_weights())
                .map(|(x, w)| w * x * x)
                .sum();
            let target = TargetSpec::new(
                coarse.clone(),
                Potential::SeparablePointwise {
                    phi: ScalarPotential::Quadratic { q: 1.0 },
                    profile: Some(v.clone()),
                },
            );
            let starts = random_inits(
                &coarse,
                ShiftFamily::MultiplicationPotential,
                refit.inits,
                1.0,
                0.2,
                refit.seed.wrapping_add(n as u64),
            );
            let mut norms = Vec::with_capacity(starts.len());
            let mut converged = true;
            for init in &starts {
                let s = minimize(
                    &target,
                    ShiftFamily::MultiplicationPotential,
                    init,
                    &reg,
                    &refit.solve,
                )?;
                converged &= s.converged;
                let PrecisionShift::MultiplicationPotential(opt) = &s.shift else {
                    unreachable!("multiplication family returns multiplication shifts")
                };
                norms.push(coarse.sobolev_norm_sq(opt, reg.r)?.sqrt());
            }
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            let (lo, hi) = norms
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(*x), hi.max(*x))
                });
            Ok(SequenceRow {
                n,
                kl_to_limit: kl_gaussian(&nu_n, &limit)?,
                sobolev_norm_sq: basis.sobolev_norm_sq(v, reg.r)?,
                l2_norm_sq,
                weighted_hs_norm: weighted_hs_norm(
                    &multiplication_matrix(v, basis),
                    basis.eigenvalues(),
                ),
                regularised_norm: mean,
                regularised_spread: if mean > 0.0 { (hi - lo) / mean } else { 0.0 },
                regularised_converged: converged,
            })
        })
        .collect()
}

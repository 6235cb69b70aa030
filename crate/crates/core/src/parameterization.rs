//! Precision-shift parameterisation `C⁻¹ = C₀⁻¹ + Γ`.
//!
//! All matrices are expressed in the eigenbasis of `C₀`, where `C₀⁻¹` is the
//! diagonal `diag(1/λ_α)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::measures::{rng_for, standard_normals, GaussianMeasure};
use crate::spectral::SpectralBasis;

/// Symmetry tolerance for user-supplied matrices.
const SYMMETRY_TOL: f64 = 1e-12;
/// Largest admissible condition number of a finite-rank precision block.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionShift {
    /// Arbitrary symmetric `Γ_{αβ}`.
    FullSymmetric(DMatrix<f64>),
    /// `Γ = β·I`.
    ConstantBeta(f64),
    /// `(Γu)(t) = v(t)·u(t)` with `v` given on the basis grid.
    MultiplicationPotential(Vec<f64>),
    /// Precision `block` on the leading `rank` modes, reference precision on the rest.
    ///
    /// The covariance is `(I − π)C₀(I − π) + block⁻¹`; `block = diag(1/λ_α)`
    /// reproduces `C₀`.
    FiniteRank { rank: usize, block: DMatrix<f64> },
}

/// Which family a shift belongs to, without its values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShiftFamily {
    FullSymmetric,
    ConstantBeta,
    MultiplicationPotential,
    FiniteRank { rank: usize },
}

impl ShiftFamily {
    /// The member of the family with `C = C₀`.
    pub fn zero(self, basis: &SpectralBasis) -> PrecisionShift {
        let g = basis.mode_count();
        match self {
            ShiftFamily::FullSymmetric => PrecisionShift::FullSymmetric(DMatrix::zeros(g, g)),
            ShiftFamily::ConstantBeta => PrecisionShift::ConstantBeta(0.0),
            ShiftFamily::MultiplicationPotential => {
                PrecisionShift::MultiplicationPotential(vec![0.0; basis.grid_size()])
            }
            ShiftFamily::FiniteRank { rank } => {
                let rank = rank.min(g);
                PrecisionShift::FiniteRank {
                    rank,
                    block: DMatrix::from_fn(rank, rank, |i, j| {
                        if i == j {
                            1.0 / basis.eigenvalues()[i]
                        } else {
                            0.0
                        }
                    }),
                }
            }
        }
    }
}

impl ShiftFamily {
    /// The member closest to `Γ = β·I`: exact except for the finite-rank
    /// family, which shifts only its leading block.
    pub fn constant(self, beta: f64, basis: &SpectralBasis) -> PrecisionShift {
        match self.zero(basis) {
            PrecisionShift::FullSymmetric(m) => PrecisionShift::FullSymmetric(
                m + DMatrix::identity(basis.mode_count(), basis.mode_count()) * beta,
            ),
            PrecisionShift::ConstantBeta(_) => PrecisionShift::ConstantBeta(beta),
            PrecisionShift::MultiplicationPotential(v) => {
                PrecisionShift::MultiplicationPotential(vec![beta; v.len()])
            }
            PrecisionShift::FiniteRank { rank, block } => PrecisionShift::FiniteRank {
                rank,
                block: block + DMatrix::identity(rank, rank) * beta,
            },
        }
    }
}

impl PrecisionShift {
    pub fn family(&self) -> ShiftFamily {
        match self {
            PrecisionShift::FullSymmetric(_) => ShiftFamily::FullSymmetric,
            PrecisionShift::ConstantBeta(_) => ShiftFamily::ConstantBeta,
            PrecisionShift::MultiplicationPotential(_) => ShiftFamily::MultiplicationPotential,
            PrecisionShift::FiniteRank { rank, .. } => ShiftFamily::FiniteRank { rank: *rank },
        }
    }

    fn validate(&self, basis: &SpectralBasis) -> Result<()> {
        let g = basis.mode_count();
        match self {
            PrecisionShift::FullSymmetric(m) => {
                if m.nrows() != g || m.ncols() != g {
                    return Err(invalid(format!(
                        "Γ is {}x{}, basis has γ = {g}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                check_symmetric(m, "Γ")
            }
            PrecisionShift::ConstantBeta(beta) => {
                if beta.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("β must be finite"))
                }
            }
            PrecisionShift::MultiplicationPotential(v) => {
                if v.len() != basis.grid_size() {
                    return Err(invalid(format!(
                        "potential has {} grid values, basis grid has {}",
                        v.len(),
                        basis.grid_size()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("potential must be finite at every grid point"));
                }
                Ok(())
            }
            PrecisionShift::FiniteRank { rank, block } => {
                if *rank == 0 || *rank > g {
                    return Err(invalid(format!("rank {rank} outside 1..={g}")));
                }
                if block.nrows() != *rank || block.ncols() != *rank {
                    return Err(invalid("finite-rank block must be rank × rank"));
                }
                check_symmetric(block, "finite-rank block")
            }
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    let asym = linalg::max_asymmetry(m);
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(invalid(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// `Γ_{αβ} = Σ_j w_j v(t_j) e_α(t_j) e_β(t_j)`.
pub fn multiplication_matrix(v: &[f64], basis: &SpectralBasis) -> DMatrix<f64> {
    let e = basis.eigenfunction_table();
    let scaled = DMatrix::from_fn(e.nrows(), e.ncols(), |a, j| {
        e[(a, j)] * basis.quadrature_weights()[j] * v[j]
    });
    linalg::symmetrize(&(scaled * e.transpose()))
}

/// The matrix of `C₀⁻¹ + Γ` in the eigenbasis.
pub fn assemble_precision(shift: &PrecisionShift, basis: &SpectralBasis) -> Result<DMatrix<f64>> {
    shift.validate(basis)?;
    let mut p = DMatrix::from_diagonal(&basis.eigenvalue_vector().map(|l| 1.0 / l));
    match shift {
        PrecisionShift::FullSymmetric(gamma) => p += linalg::symmetrize(gamma),
        PrecisionShift::ConstantBeta(beta) => {
            for a in 0..p.nrows() {
                p[(a, a)] += beta;
            }
        }
        PrecisionShift::MultiplicationPotential(v) => p += multiplication_matrix(v, basis),
        PrecisionShift::FiniteRank { rank, block } => {
            p.view_mut((0, 0), (*rank, *rank))
                .copy_from(&linalg::symmetrize(block));
        }
    }
    Ok(p)
}

/// The shift itself as a `γ × γ` matrix, `Γ = precision − C₀⁻¹`.
pub fn shift_matrix(shift: &PrecisionShift, basis: &SpectralBasis) -> Result<DMatrix<f64>> {
    let mut p = assemble_precision(shift, basis)?;
    for (a, l) in basis.eigenvalues().iter().enumerate() {
        p[(a, a)] -= 1.0 / l;
    }
    Ok(p)
}

/// Smallest eigenvalue of the assembled precision.
pub fn positivity_margin(shift: &PrecisionShift, basis: &SpectralBasis) -> Result<f64> {
    Ok(linalg::min_eigenvalue(&assemble_precision(shift, basis)?))
}

/// `N(mean, (C₀⁻¹ + Γ)⁻¹)`; fails unless the precision is strictly positive.
pub fn assemble_covariance(
    shift: &PrecisionShift,
    mean: &DVector<f64>,
    basis: &Arc<SpectralBasis>,
) -> Result<GaussianMeasure> {
    assemble_covariance_with_margin(shift, mean, basis, 0.0)
}

pub(crate) fn assemble_covariance_with_margin(
    shift: &PrecisionShift,
    mean: &DVector<f64>,
    basis: &Arc<SpectralBasis>,
    required: f64,
) -> Result<GaussianMeasure> {
    if mean.len() != basis.mode_count() {
        return Err(invalid(format!(
            "mean has {} coefficients, basis has γ = {}",
            mean.len(),
            basis.mode_count()
        )));
    }
    let precision = assemble_precision(shift, basis)?;
    if let PrecisionShift::FiniteRank { block, .. } = shift {
        let (values, _) = linalg::sym_eigen(block);
        let lo = values[0].abs();
        let hi = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(Error::RankDeficient { condition });
        }
    }
    let margin = linalg::min_eigenvalue(&precision);
    if !(margin > required) {
        return Err(Error::NotPositive { margin, required });
    }
    GaussianMeasure::from_precision(basis.clone(), mean.clone(), precision)
}

/// `‖C₀^{1/2} Γ C₀^{1/2}‖_HS` at the basis truncation.
pub fn weighted_hs_norm(gamma: &DMatrix<f64>, eigenvalues: &[f64]) -> f64 {
    let n = gamma.nrows();
    let mut sum = 0.0;
    for a in 0..n {
        for b in 0..n {
            let v = eigenvalues[a].sqrt() * gamma[(a, b)] * eigenvalues[b].sqrt();
            sum += v * v;
        }
    }
    sum.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeldmanHajekReport {
    pub weighted_hs_norm: f64,
    pub margin: f64,
    pub equivalent: bool,
    /// `(γ', norm on the leading γ' modes)` for `γ' ∈ {γ/4, γ/2, γ}`.
    pub growth: Vec<(usize, f64)>,
}

pub fn feldman_hajek_report(
    shift: &PrecisionShift,
    basis: &SpectralBasis,
) -> Result<FeldmanHajekReport> {
    let gamma = shift_matrix(shift, basis)?;
    let margin = positivity_margin(shift, basis)?;
    let g = basis.mode_count();
    let mut levels: Vec<usize> = [g / 4, g / 2, g].into_iter().filter(|k| *k > 0).collect();
    levels.dedup();
    let growth = levels
        .into_iter()
        .map(|k| {
            let sub = gamma.view((0, 0), (k, k)).into_owned();
            (k, weighted_hs_norm(&sub, &basis.eigenvalues()[..k]))
        })
        .collect();
    Ok(FeldmanHajekReport {
        weighted_hs_norm: weighted_hs_norm(&gamma, basis.eigenvalues()),
        margin,
        equivalent: margin > 0.0,
        growth,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEquivalenceReport {
    /// Max over the test points of `|d(x) − mean d|`, where `d` is the
    /// reweighted reference log-density minus the assembled Gaussian log-density.
    pub log_density_deviation: f64,
    /// Mean of `d`; equals the log normalising constant of the reweighting.
    pub log_density_offset: f64,
    /// Closed form `−½ log det(I + C₀^{1/2} Γ C₀^{1/2})` of that constant.
    pub log_normalizer: f64,
    /// Max abs error of the importance-weighted mean against the assembled mean (zero).
    pub mean_error: f64,
    /// Max abs error of the importance-weighted covariance.
    pub covariance_error: f64,
    /// Effective sample size of the importance weights.
    pub effective_sample_size: f64,
}

/// Number of points at which log-densities are compared.
const DENSITY_POINTS: usize = 100;

/// Compares `μ₀` reweighted by `exp(−½ Σ_j w_j θ(t_j) x(t_j)²)` against the
/// Gaussian with precision `C₀⁻¹ + θ`.
pub fn precision_equivalence_check(
    theta: &[f64],
    basis: &Arc<SpectralBasis>,
    n: usize,
    seed: u64,
) -> Result<PrecisionEquivalenceReport> {
    if n < 2 {
        return Err(invalid("at least two importance samples required"));
    }
    let shift = PrecisionShift::MultiplicationPotential(theta.to_vec());
    let g = basis.mode_count();
    let nu = assemble_covariance(&shift, &DVector::zeros(g), basis)?;
    let mu0 = GaussianMeasure::reference(basis.clone());
    let w = basis.quadrature_weights();
    let e = basis.eigenfunction_table();

    // grid route: evaluates the potential pointwise, never through Γ
    let reweighted = |x: &DVector<f64>| {
        let grid = e.transpose() * x;
        let energy: f64 = (0..grid.len())
            .map(|j| w[j] * theta[j] * grid[j] * grid[j])
            .sum();
        mu0.log_density(x) - 0.5 * energy
    };

    let mut rng = rng_for(seed, 0);
    let diffs: Vec<f64> = (0..DENSITY_POINTS)
        .map(|_| {
            let x = mu0.factor() * standard_normals(&mut rng, g);
            reweighted(&x) - nu.log_density(&x)
        })
        .collect();
    let offset = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let deviation = diffs
        .iter()
        .fold(0.0_f64, |acc, d| acc.max((d - offset).abs()));

    let lam = basis.eigenvalue_vector().map(f64::sqrt);
    let gamma = multiplication_matrix(theta, basis);
    let whitened = DMatrix::from_fn(g, g, |a, b| {
        lam[a] * gamma[(a, b)] * lam[b] + if a == b { 1.0 } else { 0.0 }
    });
    let log_normalizer = -0.5
        * linalg::cholesky_lower(&whitened)
            .map(|l| linalg::log_det_from_cholesky(&l))
            .ok_or(Error::NotPositive {
                margin: linalg::min_eigenvalue(&whitened),
                required: 0.0,
            })?;

    let mut rng = rng_for(seed, 1);
    let mut draws = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for _ in 0..n {
        let x = mu0.factor() * standard_normals(&mut rng, g);
        log_w.push(reweighted(&x) - mu0.log_density(&x));
        draws.push(x);
    }
    let shift_w = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - shift_w).exp()).collect();
    let total: f64 = weights.iter().sum();
    let ess = total * total / weights.iter().map(|x| x * x).sum::<f64>();
    let mut mean = DVector::zeros(g);
    for (x, wt) in draws.iter().zip(&weights) {
        mean += x * (*wt / total);
    }
    let mut cov = DMatrix::zeros(g, g);
    for (x, wt) in draws.iter().zip(&weights) {
        let d = x - &mean;
        cov += &d * d.transpose() * (*wt / total);
    }
    let covariance_error = (cov - nu.covariance()).amax();

    Ok(PrecisionEquivalenceReport {
        log_density_deviation: deviation,
        log_density_offset: offset,
        log_normalizer,
        mean_error: mean.amax(),
        covariance_error,
        effective_sample_size: ess,
    })
}

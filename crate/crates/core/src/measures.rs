//! Gaussian and Gaussian-mixture measures in basis coordinates.
//!
//! Covariances are stored through their lower Cholesky factor `F` with
//! `C = F Fᵀ`; the precision is formed lazily and cached. All divergence
//! formulas work with triangular solves against these factors.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::objective::TargetSpec;
use crate::spectral::SpectralBasis;

/// Deterministic counter-based generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn standard_normals(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    basis: Arc<SpectralBasis>,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    precision: OnceLock<DMatrix<f64>>,
}

impl GaussianMeasure {
    /// `N(mean, covariance)`; fails unless the covariance is symmetric positive definite.
    pub fn new(
        basis: Arc<SpectralBasis>,
        mean: DVector<f64>,
        covariance: &DMatrix<f64>,
    ) -> Result<Self> {
        let g = basis.mode_count();
        if mean.len() != g || covariance.nrows() != g || covariance.ncols() != g {
            return Err(invalid(format!(
                "mean/covariance dimensions ({}, {}x{}) do not match γ = {g}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite mean or covariance entry"));
        }
        let asym = linalg::max_asymmetry(covariance);
        if asym > 1e-10 * covariance.amax().max(1.0) {
            return Err(invalid(format!(
                "covariance not symmetric (max asymmetry {asym:e})"
            )));
        }
        let factor = linalg::cholesky_lower(covariance).ok_or_else(|| Error::NotPositive {
            margin: linalg::min_eigenvalue(covariance),
            required: 0.0,
        })?;
        Self::from_factor(basis, mean, factor)
    }

    /// `N(mean, precision⁻¹)`; the precision is cached.
    pub fn from_precision(
        basis: Arc<SpectralBasis>,
        mean: DVector<f64>,
        precision: DMatrix<f64>,
    ) -> Result<Self> {
        let g = basis.mode_count();
        if mean.len() != g || precision.nrows() != g || precision.ncols() != g {
            return Err(invalid("mean/precision dimensions do not match the basis"));
        }
        let precision = linalg::symmetrize(&precision);
        let l = linalg::cholesky_lower(&precision).ok_or_else(|| Error::NotPositive {
            margin: linalg::min_eigenvalue(&precision),
            required: 0.0,
        })?;
        let covariance = linalg::inverse_from_cholesky(&l);
        let factor = linalg::cholesky_lower(&covariance).ok_or_else(|| Error::NotPositive {
            margin: linalg::min_eigenvalue(&covariance),
            required: 0.0,
        })?;
        let measure = Self::from_factor(basis, mean, factor)?;
        let _ = measure.precision.set(precision);
        Ok(measure)
    }

    /// From a lower-triangular factor with strictly positive diagonal.
    pub fn from_factor(
        basis: Arc<SpectralBasis>,
        mean: DVector<f64>,
        factor: DMatrix<f64>,
    ) -> Result<Self> {
        let g = basis.mode_count();
        if mean.len() != g || factor.nrows() != g || factor.ncols() != g {
            return Err(invalid("mean/factor dimensions do not match the basis"));
        }
        if let Some(d) = factor.diagonal().iter().find(|d| !(**d > 0.0)) {
            return Err(Error::NotPositive {
                margin: *d,
                required: 0.0,
            });
        }
        Ok(Self {
            basis,
            mean,
            factor: factor.lower_triangle(),
            precision: OnceLock::new(),
        })
    }

    /// The reference measure `μ₀ = N(0, diag(λ))`.
    pub fn reference(basis: Arc<SpectralBasis>) -> Self {
        let g = basis.mode_count();
        let factor = DMatrix::from_diagonal(&basis.eigenvalue_vector().map(f64::sqrt));
        Self {
            basis,
            mean: DVector::zeros(g),
            factor,
            precision: OnceLock::new(),
        }
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// `C⁻¹`, computed on first use.
    pub fn precision(&self) -> &DMatrix<f64> {
        self.precision
            .get_or_init(|| linalg::inverse_from_cholesky(&self.factor))
    }

    pub fn log_det_covariance(&self) -> f64 {
        linalg::log_det_from_cholesky(&self.factor)
    }

    pub fn trace_covariance(&self) -> f64 {
        self.factor.iter().map(|v| v * v).sum()
    }

    /// `(x − m)ᵀ C⁻¹ (x − m)`.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let y = linalg::solve_lower_vec(&self.factor, &(x - &self.mean));
        y.norm_squared()
    }

    /// Normalised log density with respect to Lebesgue measure on `ℝ^γ`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let g = self.dim() as f64;
        -0.5 * self.mahalanobis_sq(x)
            - 0.5 * self.log_det_covariance()
            - 0.5 * g * (2.0 * std::f64::consts::PI).ln()
    }

    /// `log dν/dμ₀(x)` against the basis reference measure.
    pub fn log_ratio_to_reference(&self, x: &DVector<f64>) -> f64 {
        let lam = self.basis.eigenvalues();
        let ref_quad: f64 = x.iter().zip(lam).map(|(v, l)| v * v / l).sum();
        let ref_logdet: f64 = lam.iter().map(|l| l.ln()).sum();
        -0.5 * self.mahalanobis_sq(x) - 0.5 * self.log_det_covariance()
            + 0.5 * ref_quad
            + 0.5 * ref_logdet
    }

    fn check_compatible(&self, other: &GaussianMeasure) -> Result<()> {
        if self.dim() != other.dim() || !self.basis.compatible_with(&other.basis) {
            return Err(invalid(format!(
                "measures live on different bases (γ = {} vs {})",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Eigenvalues of `F₀⁻¹ C₁ F₀⁻ᵀ − I`, computed without forming the difference of
/// two nearly equal matrices.
fn relative_spectrum(nu1: &GaussianMeasure, nu0: &GaussianMeasure) -> DVector<f64> {
    let diff = &nu1.factor - &nu0.factor;
    let d = linalg::solve_lower(&nu0.factor, &diff);
    let e = &d + d.transpose() + &d * d.transpose();
    linalg::sym_eigen(&e).0
}

/// `D_KL(ν₁‖ν₀)` between Gaussians on the same basis.
pub fn kl_gaussian(nu1: &GaussianMeasure, nu0: &GaussianMeasure) -> Result<f64> {
    nu1.check_compatible(nu0)?;
    let spectrum = relative_spectrum(nu1, nu0);
    let log_term: f64 = spectrum.iter().map(|d| linalg::x_minus_ln1p(*d)).sum();
    let mean_term = nu0.mahalanobis_sq(&nu1.mean);
    Ok((0.5 * (log_term + mean_term)).max(0.0))
}

/// `log H(ν₁;ν₂)` for the Hellinger integral.
pub fn log_hellinger_gaussian(nu1: &GaussianMeasure, nu2: &GaussianMeasure) -> Result<f64> {
    nu1.check_compatible(nu2)?;
    // with B = F₂⁻¹C₁F₂⁻ᵀ = I + E:  log H = ¼Σ ln(1+d) − ½Σ ln(1+d/2) − ⅛ΔᵀM⁻¹Δ
    let spectrum = relative_spectrum(nu1, nu2);
    let det_term: f64 = spectrum
        .iter()
        .map(|d| 0.25 * d.ln_1p() - 0.5 * (0.5 * d).ln_1p())
        .sum();
    let m = (nu1.covariance() + nu2.covariance()) * 0.5;
    let delta = &nu1.mean - &nu2.mean;
    let quad = if delta.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        let l = linalg::cholesky_lower(&m).ok_or_else(|| invalid("average covariance not SPD"))?;
        linalg::solve_lower_vec(&l, &delta).norm_squared()
    };
    Ok((det_term - 0.125 * quad).min(0.0))
}

/// Hellinger integral `H(ν₁;ν₂) ∈ (0, 1]`.
pub fn hellinger_gaussian(nu1: &GaussianMeasure, nu2: &GaussianMeasure) -> Result<f64> {
    Ok(log_hellinger_gaussian(nu1, nu2)?.exp())
}

/// Lower and upper bounds on the total-variation distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvBounds {
    pub lower: f64,
    pub upper: f64,
}

/// `lower = D_hell² = 1 − H`, `upper = min(4·D_hell, √(½·D_KL(ν₁‖ν₂)), 1)`.
pub fn tv_bounds(nu1: &GaussianMeasure, nu2: &GaussianMeasure) -> Result<TvBounds> {
    let one_minus_h = -log_hellinger_gaussian(nu1, nu2)?.exp_m1();
    let one_minus_h = one_minus_h.clamp(0.0, 1.0);
    let kl = kl_gaussian(nu1, nu2)?;
    let upper = (4.0 * one_minus_h.sqrt()).min((0.5 * kl).sqrt()).min(1.0);
    Ok(TvBounds {
        lower: one_minus_h.min(upper),
        upper,
    })
}

/// `n` independent draws `m + F z` as rows of an `n × γ` matrix.
pub fn sample(nu: &GaussianMeasure, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut rng = rng_for(seed, 0);
    let g = nu.dim();
    let mut out = DMatrix::zeros(n, g);
    for i in 0..n {
        let z = standard_normals(&mut rng, g);
        let x = &nu.mean + &nu.factor * z;
        out.set_row(i, &x.transpose());
    }
    Ok(out)
}

/// A random Gaussian equivalent to the reference: mean `scale·C₀^{1/2}z` and
/// covariance `½C₀ + scale²·C₀^{1/2}AAᵀC₀^{1/2}/γ` for a standard normal `A`.
pub fn random_gaussian(
    basis: &Arc<SpectralBasis>,
    scale: f64,
    seed: u64,
) -> Result<GaussianMeasure> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(invalid(format!("scale must be non-negative, got {scale}")));
    }
    let g = basis.mode_count();
    let mut rng = rng_for(seed, 0);
    let root = basis.eigenvalue_vector().map(f64::sqrt);
    let z = standard_normals(&mut rng, g);
    let a = DMatrix::from_fn(g, g, |i, _| root[i]).component_mul(&DMatrix::from_column_slice(
        g,
        g,
        standard_normals(&mut rng, g * g).as_slice(),
    ));
    let cov = DMatrix::from_diagonal(&basis.eigenvalue_vector()) * 0.5
        + &a * a.transpose() * (scale * scale / g as f64);
    GaussianMeasure::new(basis.clone(), z.component_mul(&root) * scale, &cov)
}

/// Convex combination of Gaussians sharing one basis.
#[derive(Debug, Clone)]
pub struct MixtureMeasure {
    components: Vec<GaussianMeasure>,
    weights: Vec<f64>,
}

impl MixtureMeasure {
    pub fn new(components: Vec<GaussianMeasure>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("a mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(invalid("one weight per component required"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        for c in &components[1..] {
            components[0].check_compatible(c)?;
        }
        Ok(Self {
            components,
            weights,
        })
    }

    pub fn components(&self) -> &[GaussianMeasure] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        self.components[0].basis()
    }
}

/// `log(Σ_i p_i dν_i/dμ₀(x))`, evaluated with max-shifted exponentials.
pub fn mixture_log_density_ratio(mix: &MixtureMeasure, x: &DVector<f64>) -> f64 {
    linalg::logsumexp(
        mix.components
            .iter()
            .zip(&mix.weights)
            .filter(|(_, p)| **p > 0.0)
            .map(|(c, p)| p.ln() + c.log_ratio_to_reference(x)),
    )
}

/// Stratified sample sizes: largest-remainder apportionment of `n` by weight,
/// at least two draws for every component of positive weight.
pub(crate) fn stratum_sizes(weights: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|p| p * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        if weights[i] > 0.0 {
            sizes[i] += 1;
        }
    }
    for (s, p) in sizes.iter_mut().zip(weights) {
        if *p > 0.0 {
            *s = (*s).max(2);
        } else {
            *s = 0;
        }
    }
    sizes
}

/// Monte-Carlo estimate and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Stratified estimate of `E^ν[log dν/dμ₀] + E^ν[Φ] = D_KL(ν‖μ) − log Z_μ`.
pub fn kl_mixture_mc(
    mix: &MixtureMeasure,
    target: &TargetSpec,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n < 100 {
        return Err(invalid(format!("at least 100 samples required, got {n}")));
    }
    if !mix.basis().compatible_with(target.basis()) {
        return Err(invalid("mixture and target use different bases"));
    }
    let sizes = stratum_sizes(&mix.weights, n);
    let mut estimate = 0.0;
    let mut variance = 0.0;
    for (i, ((comp, p), &ni)) in mix
        .components
        .iter()
        .zip(&mix.weights)
        .zip(&sizes)
        .enumerate()
    {
        if ni == 0 {
            continue;
        }
        let mut rng = rng_for(seed, i as u64);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..ni {
            let z = standard_normals(&mut rng, comp.dim());
            let x = comp.mean() + comp.factor() * z;
            let h = mixture_log_density_ratio(mix, &x) + target.phi(&x)?;
            sum += h;
            sum_sq += h * h;
        }
        let mean = sum / ni as f64;
        let var = ((sum_sq - sum * mean) / (ni as f64 - 1.0)).max(0.0);
        estimate += p * mean;
        variance += p * p * var / ni as f64;
    }
    Ok(McEstimate {
        estimate,
        std_error: variance.sqrt(),
    })
}

/// Diagnostic estimate of `log Z_μ = log E^{μ₀}[exp(−Φ)]` (reporting only).
pub fn log_normalizer_mc(target: &TargetSpec, n: usize, seed: u64) -> Result<McEstimate> {
    if n < 2 {
        return Err(invalid("at least two samples required"));
    }
    let reference = GaussianMeasure::reference(target.basis().clone());
    let mut rng = rng_for(seed, 0);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let z = standard_normals(&mut rng, reference.dim());
        let x = reference.mean() + reference.factor() * z;
        values.push(-target.phi(&x)?);
    }
    let shift = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| (v - shift).exp()).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    // delta method for the logarithm
    Ok(McEstimate {
        estimate: shift + mean.ln(),
        std_error: (var / n as f64).sqrt() / mean,
    })
}

//! Finite spectral truncations of Gaussian reference measures.
//!
//! A [`SpectralBasis`] holds the leading `γ` eigenpairs `(e_α, λ_α)` of the
//! reference covariance `C₀`, a uniform grid with trapezoid weights and the
//! table of eigenfunction values on that grid. Coefficients in this basis are
//! the coordinates used everywhere else in the crate; the grid is only used
//! to evaluate pointwise functionals of paths.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BasisKind {
    /// Brownian bridge on `[−L/2, L/2]`: `C₀⁻¹` is the negative Dirichlet Laplacian.
    DirichletBridge,
    /// Periodic field on a circle of circumference `L` with `C₀ = (−Δ + I)^(−s)`.
    TorusFractional { s: f64 },
    /// A single coordinate with reference `N(0, variance)`; used for scalar problems.
    Point,
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    kind: BasisKind,
    domain_length: f64,
    eigenvalues: Vec<f64>,
    /// Spatial frequency of each mode; enters the Sobolev weights.
    frequencies: Vec<f64>,
    grid: Vec<f64>,
    weights: Vec<f64>,
    /// `table[(α, j)] = e_α(t_j)`.
    table: DMatrix<f64>,
}

fn check_sizes(mode_count: usize, grid_size: usize) -> Result<()> {
    if mode_count == 0 {
        return Err(invalid("mode_count must be at least 1"));
    }
    if grid_size < 2 * mode_count {
        return Err(invalid(format!(
            "grid_size {grid_size} must be at least 2·mode_count = {}",
            2 * mode_count
        )));
    }
    Ok(())
}

impl SpectralBasis {
    /// Brownian bridge on `[−L/2, L/2]` with `λ_α = (L/(πα))²` and
    /// `e_α(t) = √(2/L)·sin(πα(t + L/2)/L)`. The grid has `grid_size` points
    /// including both endpoints.
    pub fn brownian_bridge(
        interval_length: f64,
        mode_count: usize,
        grid_size: usize,
    ) -> Result<Self> {
        if !(interval_length > 0.0) || !interval_length.is_finite() {
            return Err(invalid(format!(
                "interval_length must be positive, got {interval_length}"
            )));
        }
        check_sizes(mode_count, grid_size)?;
        let l = interval_length;
        let left = -0.5 * l;
        let h = l / (grid_size - 1) as f64;
        let grid: Vec<f64> = (0..grid_size).map(|j| left + j as f64 * h).collect();
        let mut weights = vec![h; grid_size];
        weights[0] *= 0.5;
        weights[grid_size - 1] *= 0.5;
        let eigenvalues = (1..=mode_count)
            .map(|a| (l / (PI * a as f64)).powi(2))
            .collect();
        let frequencies = (1..=mode_count).map(|a| PI * a as f64 / l).collect();
        let norm = (2.0 / l).sqrt();
        let intervals = (grid_size - 1) as f64;
        let table = DMatrix::from_fn(mode_count, grid_size, |a, j| {
            // sin(π(α)(j/(N−1))) evaluated from the index keeps endpoints exactly zero
            let alpha = (a + 1) as f64;
            if j == 0 || j == grid_size - 1 {
                0.0
            } else {
                norm * (PI * alpha * j as f64 / intervals).sin()
            }
        });
        Ok(Self {
            kind: BasisKind::DirichletBridge,
            domain_length: l,
            eigenvalues,
            frequencies,
            grid,
            weights,
            table,
        })
    }

    /// Circle of circumference `L` with `C₀ = (−Δ + I)^(−s)`. Fourier modes are
    /// ordered `k = 0, +1, −1, +2, −2, …` (cosine for `+k`, sine for `−k`), which is
    /// also an ordering by non-increasing eigenvalue.
    pub fn torus_fractional(
        circumference: f64,
        s: f64,
        mode_count: usize,
        grid_size: usize,
    ) -> Result<Self> {
        if !(s > 0.5) {
            return Err(Error::NotTraceClass { s });
        }
        if !(circumference > 0.0) || !circumference.is_finite() {
            return Err(invalid(format!(
                "circumference must be positive, got {circumference}"
            )));
        }
        check_sizes(mode_count, grid_size)?;
        let l = circumference;
        let h = l / grid_size as f64;
        let grid: Vec<f64> = (0..grid_size).map(|j| j as f64 * h).collect();
        let weights = vec![h; grid_size];
        // signed wavenumbers 0, 1, -1, 2, -2, ...
        let wavenumbers: Vec<i64> = (0..mode_count)
            .map(|i| {
                let k = i.div_ceil(2) as i64;
                if i % 2 == 1 {
                    k
                } else {
                    -k
                }
            })
            .collect();
        let base = 2.0 * PI / l;
        let eigenvalues = wavenumbers
            .iter()
            .map(|&k| (1.0 + (k as f64 * base).powi(2)).powf(-s))
            .collect();
        let frequencies = wavenumbers
            .iter()
            .map(|&k| k.unsigned_abs() as f64 * base)
            .collect();
        let table = DMatrix::from_fn(mode_count, grid_size, |a, j| {
            let k = wavenumbers[a];
            let phase = 2.0 * PI * (k.unsigned_abs() as f64) * j as f64 / grid_size as f64;
            match k.signum() {
                0 => 1.0 / l.sqrt(),
                1 => (2.0 / l).sqrt() * phase.cos(),
                _ => (2.0 / l).sqrt() * phase.sin(),
            }
        });
        Ok(Self {
            kind: BasisKind::TorusFractional { s },
            domain_length: l,
            eigenvalues,
            frequencies,
            grid,
            weights,
            table,
        })
    }

    /// One coordinate with reference `N(0, variance)`, a single grid point of
    /// unit weight and `e_1 ≡ 1`. Pointwise potentials then act on the scalar
    /// itself.
    pub fn point(variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(invalid(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Ok(Self {
            kind: BasisKind::Point,
            domain_length: 1.0,
            eigenvalues: vec![variance],
            frequencies: vec![0.0],
            grid: vec![0.0],
            weights: vec![1.0],
            table: DMatrix::from_element(1, 1, 1.0),
        })
    }

    /// Keeps the leading `mode_count` modes on the same grid.
    pub fn truncate(&self, mode_count: usize) -> Result<Self> {
        if mode_count == 0 || mode_count > self.mode_count() {
            return Err(invalid(format!(
                "cannot truncate {} modes to {mode_count}",
                self.mode_count()
            )));
        }
        Ok(Self {
            kind: self.kind,
            domain_length: self.domain_length,
            eigenvalues: self.eigenvalues[..mode_count].to_vec(),
            frequencies: self.frequencies[..mode_count].to_vec(),
            grid: self.grid.clone(),
            weights: self.weights.clone(),
            table: self.table.rows(0, mode_count).into_owned(),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn quadrature_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenfunction_table(&self) -> &DMatrix<f64> {
        &self.table
    }

    /// Grid spacing (zero for a point basis).
    pub fn spacing(&self) -> f64 {
        match self.kind {
            BasisKind::Point => 0.0,
            BasisKind::DirichletBridge => self.domain_length / (self.grid.len() - 1) as f64,
            BasisKind::TorusFractional { .. } => self.domain_length / self.grid.len() as f64,
        }
    }

    /// `Σ_α λ_α`, the trace of the truncated covariance.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Whether two bases describe the same discretisation.
    pub fn compatible_with(&self, other: &SpectralBasis) -> bool {
        std::ptr::eq(self, other)
            || (self.kind == other.kind
                && self.domain_length == other.domain_length
                && self.eigenvalues == other.eigenvalues
                && self.grid.len() == other.grid.len())
    }

    /// Grid values `x(t_j) = Σ_α x_α e_α(t_j)` of a coefficient vector
    /// (missing trailing coefficients are zero).
    pub fn synthesize(&self, coefficients: &[f64]) -> Vec<f64> {
        let n = coefficients.len().min(self.mode_count());
        let mut out = vec![0.0; self.grid_size()];
        for (a, c) in coefficients.iter().take(n).enumerate() {
            if *c == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += c * self.table[(a, j)];
            }
        }
        out
    }

    /// Quadrature inner products `⟨x, e_α⟩` for `α ≤ gamma_sub`.
    pub fn project(&self, x: &[f64], gamma_sub: usize) -> Result<Vec<f64>> {
        if gamma_sub > self.mode_count() {
            return Err(invalid(format!(
                "gamma_sub {gamma_sub} exceeds mode_count {}",
                self.mode_count()
            )));
        }
        if x.len() != self.grid_size() {
            return Err(invalid(format!(
                "grid function has {} values, basis grid has {}",
                x.len(),
                self.grid_size()
            )));
        }
        Ok((0..gamma_sub)
            .map(|a| {
                x.iter()
                    .zip(&self.weights)
                    .enumerate()
                    .map(|(j, (xv, w))| w * xv * self.table[(a, j)])
                    .sum()
            })
            .collect())
    }

    /// Quadrature `L²` inner product of two grid functions.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.weights)
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    /// `‖m‖²_{H¹} = Σ_α m_α² / λ_α`.
    pub fn cameron_martin_norm_sq(&self, m: &[f64]) -> Result<f64> {
        if m.len() > self.mode_count() {
            return Err(invalid(format!(
                "coefficient vector of length {} exceeds mode_count {}",
                m.len(),
                self.mode_count()
            )));
        }
        Ok(m.iter()
            .zip(&self.eigenvalues)
            .map(|(c, l)| c * c / l)
            .sum())
    }

    /// Per-mode weights `(1 + ω_α²)^r` of the `H^r` norm.
    pub fn sobolev_weights(&self, r: f64) -> Vec<f64> {
        self.frequencies
            .iter()
            .map(|w| (1.0 + w * w).powf(r))
            .collect()
    }

    /// `Σ_α (1 + ω_α²)^r v_α²` with `v_α = ⟨v, e_α⟩` over the retained modes.
    pub fn sobolev_norm_sq(&self, v: &[f64], r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(invalid(format!(
                "Sobolev order must be non-negative, got {r}"
            )));
        }
        let coeffs = self.project(v, self.mode_count())?;
        Ok(coeffs
            .iter()
            .zip(self.sobolev_weights(r))
            .map(|(c, w)| w * c * c)
            .sum())
    }

    pub(crate) fn eigenvalue_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.eigenvalues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXACT: f64 = 1e-10;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bridge_first_eigenvalue() {
        let b = SpectralBasis::brownian_bridge(2.0, 1, 64).unwrap();
        assert!(close(b.eigenvalues()[0], 4.0 / (PI * PI), 1e-15));
        assert!(close(b.eigenvalues()[0], 0.405285, 1e-6));
    }

    #[test]
    fn bridge_three_eigenvalues_decrease() {
        let b = SpectralBasis::brownian_bridge(2.0, 3, 64).unwrap();
        let expected = [0.405285, 0.101321, 0.045032];
        for (l, e) in b.eigenvalues().iter().zip(expected) {
            assert!(close(*l, e, 1e-6));
        }
        assert!(b.eigenvalues().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn bridge_trace_approaches_two_thirds() {
        // Oracle: integrate the bridge variance t(2 − t)/2 over [0, 2] by Simpson's rule.
        let n = 2000;
        let h = 2.0 / n as f64;
        let f = |t: f64| t * (2.0 - t) / 2.0;
        let mut s = f(0.0) + f(2.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let integral = s * h / 3.0;
        assert!(close(integral, 2.0 / 3.0, 1e-12));

        let b = SpectralBasis::brownian_bridge(2.0, 100, 512).unwrap();
        // tail Σ_{α>γ} 4/(π²α²) < 4/(π²γ)
        let tail_bound = 4.0 / (PI * PI * 100.0);
        assert!(b.trace() < integral);
        assert!(integral - b.trace() < tail_bound);
    }

    #[test]
    fn bridge_orthonormal_under_quadrature() {
        let b = SpectralBasis::brownian_bridge(2.0, 40, 81).unwrap();
        let t = b.eigenfunction_table();
        for a in 0..40 {
            for c in 0..40 {
                let ip: f64 = (0..b.grid_size())
                    .map(|j| b.quadrature_weights()[j] * t[(a, j)] * t[(c, j)])
                    .sum();
                let delta = if a == c { 1.0 } else { 0.0 };
                assert!(close(ip, delta, EXACT), "({a},{c}) {ip}");
            }
        }
    }

    #[test]
    fn torus_eigenvalues() {
        let b = SpectralBasis::torus_fractional(2.0 * PI, 1.0, 3, 64).unwrap();
        let e = b.eigenvalues();
        assert!(close(e[0], 1.0, 1e-15) && close(e[1], 0.5, 1e-15) && close(e[2], 0.5, 1e-15));
        let b = SpectralBasis::torus_fractional(2.0 * PI, 2.0, 1, 64).unwrap();
        assert_eq!(b.eigenvalues(), &[1.0]);
        assert_eq!(
            SpectralBasis::torus_fractional(2.0 * PI, 0.4, 8, 64).unwrap_err(),
            Error::NotTraceClass { s: 0.4 }
        );
    }

    #[test]
    fn torus_orthonormal_and_ordered() {
        let b = SpectralBasis::torus_fractional(3.0, 0.8, 9, 40).unwrap();
        let t = b.eigenfunction_table();
        for a in 0..9 {
            for c in 0..9 {
                let ip: f64 = (0..40)
                    .map(|j| b.quadrature_weights()[j] * t[(a, j)] * t[(c, j)])
                    .sum();
                let delta = if a == c { 1.0 } else { 0.0 };
                assert!(close(ip, delta, EXACT));
            }
        }
        assert!(b.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(SpectralBasis::brownian_bridge(0.0, 1, 4).is_err());
        assert!(SpectralBasis::brownian_bridge(2.0, 0, 4).is_err());
        assert!(SpectralBasis::brownian_bridge(2.0, 4, 7).is_err());
        assert!(SpectralBasis::torus_fractional(1.0, 1.0, 0, 4).is_err());
    }

    #[test]
    fn project_examples() {
        let b = SpectralBasis::brownian_bridge(2.0, 8, 64).unwrap();
        let mut unit = vec![0.0; 8];
        unit[0] = 1.0;
        unit[4] = 1.0;
        let x = b.synthesize(&unit);
        let c = b.project(&x, 3).unwrap();
        assert!(close(c[0], 1.0, EXACT) && close(c[1], 0.0, EXACT) && close(c[2], 0.0, EXACT));

        let zero = vec![0.0; b.grid_size()];
        assert!(b.project(&zero, 8).unwrap().iter().all(|v| *v == 0.0));

        let x = b.synthesize(&[0.0, 2.0]);
        let c = b.project(&x, 2).unwrap();
        assert!(close(c[0], 0.0, EXACT) && close(c[1], 2.0, EXACT));

        assert!(b.project(&x, 9).is_err());
    }

    #[test]
    fn cameron_martin_examples() {
        let b = SpectralBasis::brownian_bridge(2.0, 4, 64).unwrap();
        assert!(close(
            b.cameron_martin_norm_sq(&[1.0]).unwrap(),
            PI * PI / 4.0,
            1e-12
        ));
        assert!(close(
            b.cameron_martin_norm_sq(&[1.0, 1.0]).unwrap(),
            12.337006,
            1e-6
        ));
        assert_eq!(b.cameron_martin_norm_sq(&[0.0; 4]).unwrap(), 0.0);
        for a in 0..4 {
            let mut m = vec![0.0; 4];
            m[a] = b.eigenvalues()[a].sqrt();
            assert!(close(b.cameron_martin_norm_sq(&m).unwrap(), 1.0, 1e-14));
        }
    }

    #[test]
    fn sobolev_examples() {
        let b = SpectralBasis::brownian_bridge(2.0, 4, 64).unwrap();
        let e1 = b.synthesize(&[1.0]);
        assert!(close(b.sobolev_norm_sq(&e1, 0.0).unwrap(), 1.0, EXACT));
        assert!(close(
            b.sobolev_norm_sq(&e1, 1.0).unwrap(),
            1.0 + PI * PI / 4.0,
            EXACT
        ));
        assert_eq!(b.sobolev_norm_sq(&vec![0.0; 64], 2.5).unwrap(), 0.0);
        assert!(b.sobolev_norm_sq(&e1, -1.0).is_err());
    }

    #[test]
    fn parseval_and_contraction() {
        let b = SpectralBasis::brownian_bridge(2.0, 16, 257).unwrap();
        let x: Vec<f64> = b
            .grid()
            .iter()
            .map(|t| (1.0 - t * t) * (3.0 * t).cos())
            .collect();
        let c = b.project(&x, 16).unwrap();
        let projected = b.synthesize(&c);
        let lhs = b.inner(&projected, &projected);
        let rhs: f64 = c.iter().map(|v| v * v).sum();
        assert!(close(lhs, rhs, EXACT));
        assert!(lhs <= b.inner(&x, &x) + EXACT);
        let again = b.project(&projected, 16).unwrap();
        for (a, b) in again.iter().zip(&c) {
            assert!(close(*a, *b, EXACT));
        }
    }

    #[test]
    fn refinement_stability_of_weighted_inner_products() {
        let f = |t: f64| (1.0 - t * t) * (1.0 + 0.5 * t);
        let g = |t: f64| (1.0 - t * t) * (2.0 * t).sin();
        let value = |grid: usize| {
            let b = SpectralBasis::brownian_bridge(2.0, 12, grid).unwrap();
            let x: Vec<f64> = b.grid().iter().map(|t| f(*t)).collect();
            let y: Vec<f64> = b.grid().iter().map(|t| g(*t)).collect();
            let cx = b.project(&x, 12).unwrap();
            let cy = b.project(&y, 12).unwrap();
            cx.iter()
                .zip(&cy)
                .zip(b.eigenvalues())
                .map(|((a, c), l)| l * a * c)
                .sum::<f64>()
        };
        assert!((value(2049) - value(4097)).abs() < 1e-8);
    }
}

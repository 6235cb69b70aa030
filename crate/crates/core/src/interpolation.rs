//! Displacement interpolation between Gaussians on a common basis.
//!
//! `Λ = C₂^{1/2}(C₂^{1/2} C₁ C₂^{1/2})^{−1/2} C₂^{1/2}` is the symmetric map
//! with `Λ C₁ Λ = C₂`; the affine map `x ↦ Λ(x − m₁) + m₂` pushes `ν₁` to `ν₂`
//! and `ν_t` is the push-forward of `ν₁` under `(1 − t)·id + t·Λ̃`.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::measures::GaussianMeasure;
use crate::objective::{objective_for_measure, ExpectationMethod, Potential, TargetSpec};
use crate::spectral::{BasisKind, SpectralBasis};

#[derive(Debug, Clone)]
pub struct DisplacementPath {
    nu1: GaussianMeasure,
    nu2: GaussianMeasure,
    lambda_map: DMatrix<f64>,
}

impl DisplacementPath {
    pub fn start(&self) -> &GaussianMeasure {
        &self.nu1
    }

    pub fn end(&self) -> &GaussianMeasure {
        &self.nu2
    }

    pub fn lambda_map(&self) -> &DMatrix<f64> {
        &self.lambda_map
    }
}

pub fn displacement_map(nu1: &GaussianMeasure, nu2: &GaussianMeasure) -> Result<DisplacementPath> {
    if nu1.dim() != nu2.dim() || !nu1.basis().compatible_with(nu2.basis()) {
        return Err(invalid("endpoints live on different bases"));
    }
    if nu1.factor() == nu2.factor() {
        return Ok(DisplacementPath {
            nu1: nu1.clone(),
            nu2: nu2.clone(),
            lambda_map: DMatrix::identity(nu1.dim(), nu1.dim()),
        });
    }
    let c1 = nu1.covariance();
    let c2 = nu2.covariance();
    let c2_half = linalg::sym_apply(&c2, f64::sqrt);
    let middle = &c2_half * &c1 * &c2_half;
    let middle_inv_half = linalg::sym_apply(&middle, |v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt());
    let lambda_map = linalg::symmetrize(&(&c2_half * middle_inv_half * &c2_half));
    Ok(DisplacementPath {
        nu1: nu1.clone(),
        nu2: nu2.clone(),
        lambda_map,
    })
}

/// `ν_t = N((1 − t)m₁ + t m₂, T_t C₁ T_tᵀ)` with `T_t = (1 − t)I + tΛ`.
pub fn interpolate(path: &DisplacementPath, t: f64) -> Result<GaussianMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(path.nu1.clone());
    }
    if t == 1.0 {
        return Ok(path.nu2.clone());
    }
    let g = path.nu1.dim();
    let mean = if path.nu1.mean() == path.nu2.mean() {
        path.nu1.mean().clone()
    } else {
        path.nu1.mean() * (1.0 - t) + path.nu2.mean() * t
    };
    if path.nu1.factor() == path.nu2.factor() {
        return GaussianMeasure::from_factor(
            path.nu1.basis().clone(),
            mean,
            path.nu1.factor().clone(),
        );
    }
    let map = DMatrix::identity(g, g) * (1.0 - t) + &path.lambda_map * t;
    let factor_t = map * path.nu1.factor();
    let cov = linalg::symmetrize(&(&factor_t * factor_t.transpose()));
    GaussianMeasure::new(path.nu1.basis().clone(), mean, &cov)
}

/// `E^{ν₁}‖x − Λ̃(x)‖²_{H¹}` in closed form.
pub fn transport_cost_h1(path: &DisplacementPath) -> f64 {
    let lam = path.nu1.basis().eigenvalues();
    let g = path.nu1.dim();
    let dm = path.nu1.mean() - path.nu2.mean();
    let mean_part: f64 = (0..g).map(|a| dm[a] * dm[a] / lam[a]).sum();
    let residual = (DMatrix::identity(g, g) - &path.lambda_map) * path.nu1.factor();
    let cov_part: f64 = (0..g)
        .map(|a| residual.row(a).norm_squared() / lam[a])
        .sum();
    mean_part + cov_part
}

/// `κ = 1 − K·λ₁` for a potential with `φ'' ≥ −K`, where `λ₁` is the largest
/// reference eigenvalue (`(L/π)²` on the bridge). `Φ` is then
/// `(1 − κ)`-convex on the Cameron–Martin space.
pub fn kappa_from_curvature(curvature_floor: f64, basis: &SpectralBasis) -> f64 {
    let k = (-curvature_floor).max(0.0);
    let lambda1 = match basis.kind() {
        BasisKind::DirichletBridge => (basis.domain_length() / std::f64::consts::PI).powi(2),
        _ => basis.eigenvalues()[0],
    };
    1.0 - k * lambda1
}

/// `κ` for a target with a separable potential of known curvature floor.
pub fn kappa_for_target(target: &TargetSpec) -> Option<f64> {
    match target.potential() {
        Potential::SeparablePointwise { phi, profile } => {
            let floor = phi.curvature_lower_bound()?;
            let scale = match profile {
                Some(a) => {
                    if floor >= 0.0 {
                        if a.iter().any(|v| *v < 0.0) {
                            return None;
                        }
                        0.0
                    } else {
                        a.iter().fold(0.0_f64, |acc, v| acc.max(*v))
                    }
                }
                None => 1.0,
            };
            Some(kappa_from_curvature(floor * scale, target.basis()))
        }
        Potential::GridFunctional(_) => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub t_grid: Vec<f64>,
    pub objective: Vec<f64>,
    pub chord: Vec<f64>,
    /// `chord(t) − D(t) − κ·t(1 − t)/2·Ŵ²`.
    pub margins: Vec<f64>,
    pub transport_cost: f64,
    pub kappa: f64,
    pub min_margin: f64,
}

/// Evaluates the strengthened chord inequality along the displacement path.
pub fn convexity_check(
    nu1: &GaussianMeasure,
    nu2: &GaussianMeasure,
    target: &TargetSpec,
    t_grid: &[f64],
    kappa: f64,
    method: ExpectationMethod,
) -> Result<ConvexityReport> {
    let path = displacement_map(nu1, nu2)?;
    let d0 = objective_for_measure(nu1, target, method)?.total;
    let d1 = objective_for_measure(nu2, target, method)?.total;
    if !d0.is_finite() || !d1.is_finite() {
        return Err(Error::InfiniteDivergence(
            "endpoint objective is not finite".into(),
        ));
    }
    let w2 = transport_cost_h1(&path);
    let mut objective = Vec::with_capacity(t_grid.len());
    let mut chord = Vec::with_capacity(t_grid.len());
    let mut margins = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let nu_t = interpolate(&path, t)?;
        let dt = objective_for_measure(&nu_t, target, method)?.total;
        let ch = (1.0 - t) * d0 + t * d1;
        objective.push(dt);
        chord.push(ch);
        margins.push(ch - dt - kappa * t * (1.0 - t) / 2.0 * w2);
    }
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport {
        t_grid: t_grid.to_vec(),
        objective,
        chord,
        margins,
        transport_cost: w2,
        kappa,
        min_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{rng_for, sample, standard_normals};
    use crate::objective::ScalarPotential;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn point() -> Arc<SpectralBasis> {
        Arc::new(SpectralBasis::point(1.0).unwrap())
    }

    fn g1(b: &Arc<SpectralBasis>, m: f64, v: f64) -> GaussianMeasure {
        GaussianMeasure::new(
            b.clone(),
            DVector::from_element(1, m),
            &DMatrix::from_element(1, 1, v),
        )
        .unwrap()
    }

    fn random_measure(b: &Arc<SpectralBasis>, seed: u64) -> GaussianMeasure {
        let g = b.mode_count();
        let mut rng = rng_for(seed, 7);
        let a = DMatrix::from_fn(g, g, |_, _| standard_normals(&mut rng, 1)[0]);
        let cov = &a * a.transpose() * 0.05
            + DMatrix::from_diagonal(&DVector::from_column_slice(b.eigenvalues())) * 0.5;
        let mean = standard_normals(&mut rng, g) * 0.3;
        GaussianMeasure::new(b.clone(), mean, &cov).unwrap()
    }

    #[test]
    fn map_examples() {
        let b = point();
        let a = g1(&b, 0.0, 1.0);
        let p = displacement_map(&a, &a).unwrap();
        assert!((p.lambda_map()[(0, 0)] - 1.0).abs() < 1e-14);
        let p = displacement_map(&a, &g1(&b, 1.0, 4.0)).unwrap();
        assert!((p.lambda_map()[(0, 0)] - 2.0).abs() < 1e-14);

        let bb = Arc::new(SpectralBasis::brownian_bridge(2.0, 3, 16).unwrap());
        let c1 = [0.5, 0.2, 0.1];
        let c2 = [0.1, 0.3, 0.4];
        let n1 = GaussianMeasure::new(
            bb.clone(),
            DVector::zeros(3),
            &DMatrix::from_diagonal(&DVector::from_column_slice(&c1)),
        )
        .unwrap();
        let n2 = GaussianMeasure::new(
            bb,
            DVector::zeros(3),
            &DMatrix::from_diagonal(&DVector::from_column_slice(&c2)),
        )
        .unwrap();
        let p = displacement_map(&n1, &n2).unwrap();
        for a in 0..3 {
            assert!((p.lambda_map()[(a, a)] - (c2[a] / c1[a]).sqrt()).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_examples() {
        let b = point();
        let p = displacement_map(&g1(&b, 0.0, 1.0), &g1(&b, 1.0, 4.0)).unwrap();
        let mid = interpolate(&p, 0.5).unwrap();
        assert!((mid.mean()[0] - 0.5).abs() < 1e-15);
        assert!((mid.covariance()[(0, 0)] - 2.25).abs() < 1e-13);
        assert!(interpolate(&p, 1.5).is_err());

        let same = g1(&b, 0.3, 0.7);
        let p = displacement_map(&same, &same).unwrap();
        for t in [0.0, 0.25, 0.9, 1.0] {
            let nu = interpolate(&p, t).unwrap();
            assert_eq!(nu.mean(), same.mean());
            assert_eq!(nu.covariance(), same.covariance());
        }
    }

    #[test]
    fn push_forward_is_exact() {
        let b = Arc::new(SpectralBasis::brownian_bridge(2.0, 5, 32).unwrap());
        for seed in 0..5 {
            let n1 = random_measure(&b, seed);
            let n2 = random_measure(&b, seed + 100);
            let p = displacement_map(&n1, &n2).unwrap();
            let l = p.lambda_map();
            let pushed = l * n1.covariance() * l.transpose();
            assert!((pushed - n2.covariance()).amax() < 1e-8);
            assert!(linalg::min_eigenvalue(l) > 0.0);
            let start = interpolate(&p, 0.0).unwrap();
            let end = interpolate(&p, 1.0).unwrap();
            assert_eq!(start.covariance(), n1.covariance());
            assert_eq!(end.covariance(), n2.covariance());
        }
    }

    #[test]
    fn push_forward_sample_moments() {
        let b = Arc::new(SpectralBasis::brownian_bridge(2.0, 2, 8).unwrap());
        let n1 = random_measure(&b, 1);
        let n2 = random_measure(&b, 2);
        let p = displacement_map(&n1, &n2).unwrap();
        let n = 100_000;
        let draws = sample(&n1, n, 9).unwrap();
        let mapped: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let x = draws.row(i).transpose();
                p.lambda_map() * (x - n1.mean()) + n2.mean()
            })
            .collect();
        for a in 0..2 {
            let vals: Vec<f64> = mapped.iter().map(|x| x[a]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - n2.mean()[a]).abs() <= 3.0 * (var / n as f64).sqrt());
            let c = n2.covariance()[(a, a)];
            let fourth = vals.iter().map(|v| (v - n2.mean()[a]).powi(4)).sum::<f64>() / n as f64;
            let se = ((fourth - c * c) / n as f64).sqrt();
            assert!((var - c).abs() <= 3.0 * se);
        }
    }

    #[test]
    fn log_det_along_path_is_concave() {
        let b = Arc::new(SpectralBasis::brownian_bridge(2.0, 6, 32).unwrap());
        for seed in 0..10 {
            let p = displacement_map(&random_measure(&b, seed), &random_measure(&b, seed + 50))
                .unwrap();
            let ts: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
            let vals: Vec<f64> = ts
                .iter()
                .map(|t| interpolate(&p, *t).unwrap().log_det_covariance() / 6.0)
                .map(|v| (v).exp())
                .collect();
            for w in vals.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-8);
            }
        }
    }

    #[test]
    fn convexity_margins_for_zero_potential() {
        let b = Arc::new(SpectralBasis::brownian_bridge(2.0, 6, 32).unwrap());
        let target = TargetSpec::separable(b.clone(), ScalarPotential::Zero);
        let ts: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        for seed in 0..10 {
            let n1 = random_measure(&b, seed);
            let n2 = random_measure(&b, seed + 30);
            let r = convexity_check(&n1, &n2, &target, &ts, 1.0, Default::default()).unwrap();
            assert!(r.min_margin >= -1e-8, "seed {seed}: {}", r.min_margin);
            let r0 = convexity_check(&n1, &n1, &target, &ts, 0.5, Default::default()).unwrap();
            assert_eq!(r0.transport_cost, 0.0);
            assert!(r0.margins.iter().all(|m| m.abs() < 1e-12));
        }
    }

    #[test]
    fn kappa_helper() {
        let b = SpectralBasis::brownian_bridge(2.0, 4, 16).unwrap();
        let k = kappa_from_curvature(-2.0, &b);
        assert!((k - (1.0 - 8.0 / (std::f64::consts::PI.powi(2)))).abs() < 1e-14);
        assert_eq!(kappa_from_curvature(1.0, &b), 1.0);
    }
}

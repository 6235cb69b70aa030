use std::sync::Arc;

use kl_gauss::measures::rng_for;
use kl_gauss::objective::{gradient, kl_objective, ExpectationMethod, ShiftGradient};
use kl_gauss::{PrecisionShift, RegularizationSpec, ScalarPotential, SpectralBasis, TargetSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Flattened parameters of a shift together with a way to rebuild it.
fn shift_params(shift: &PrecisionShift) -> Vec<f64> {
    match shift {
        PrecisionShift::FullSymmetric(m) | PrecisionShift::FiniteRank { block: m, .. } => {
            let n = m.nrows();
            (0..n)
                .flat_map(|i| (i..n).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)])
                .collect()
        }
        PrecisionShift::ConstantBeta(b) => vec![*b],
        PrecisionShift::MultiplicationPotential(v) => v.clone(),
    }
}

fn rebuild(template: &PrecisionShift, p: &[f64]) -> PrecisionShift {
    let sym = |n: usize| {
        let mut m = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = p[k];
                m[(j, i)] = p[k];
                k += 1;
            }
        }
        m
    };
    match template {
        PrecisionShift::FullSymmetric(m) => PrecisionShift::FullSymmetric(sym(m.nrows())),
        PrecisionShift::FiniteRank { rank, .. } => PrecisionShift::FiniteRank {
            rank: *rank,
            block: sym(*rank),
        },
        PrecisionShift::ConstantBeta(_) => PrecisionShift::ConstantBeta(p[0]),
        PrecisionShift::MultiplicationPotential(_) => {
            PrecisionShift::MultiplicationPotential(p.to_vec())
        }
    }
}

/// Analytic gradient in the flattened coordinates; an off-diagonal entry moves
/// both `(i, j)` and `(j, i)`.
fn analytic(g: &ShiftGradient) -> Vec<f64> {
    match g {
        ShiftGradient::FullSymmetric(m) | ShiftGradient::FiniteRank(m) => {
            let n = m.nrows();
            (0..n)
                .flat_map(|i| (i..n).map(move |j| (i, j)))
                .map(|(i, j)| if i == j { m[(i, i)] } else { 2.0 * m[(i, j)] })
                .collect()
        }
        ShiftGradient::ConstantBeta(b) => vec![*b],
        ShiftGradient::MultiplicationPotential(v) => v.clone(),
    }
}

fn relative_error(
    target: &TargetSpec,
    mean: &DVector<f64>,
    shift: &PrecisionShift,
    reg: &RegularizationSpec,
    method: ExpectationMethod,
) -> f64 {
    let f = |m: &DVector<f64>, s: &PrecisionShift| {
        kl_objective(m, s, target, reg, method).unwrap().total
    };
    let g = gradient(mean, shift, target, reg, method).unwrap();
    let mut exact: Vec<f64> = g.mean.iter().copied().collect();
    exact.extend(analytic(&g.shift));
    let mut numeric = Vec::with_capacity(exact.len());
    let h = 1e-5;
    for a in 0..mean.len() {
        let mut up = mean.clone();
        let mut down = mean.clone();
        up[a] += h;
        down[a] -= h;
        numeric.push((f(&up, shift) - f(&down, shift)) / (2.0 * h));
    }
    let p = shift_params(shift);
    for k in 0..p.len() {
        let mut up = p.clone();
        let mut down = p.clone();
        up[k] += h;
        down[k] -= h;
        numeric.push((f(mean, &rebuild(shift, &up)) - f(mean, &rebuild(shift, &down))) / (2.0 * h));
    }
    let diff: f64 = exact
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm
}

fn random_shift(kind: usize, basis: &SpectralBasis, rng: &mut ChaCha20Rng) -> PrecisionShift {
    let g = basis.mode_count();
    let lam = basis.eigenvalues();
    match kind {
        0 => {
            let a = DMatrix::from_fn(g, g, |_, _| rng.random_range(-0.3..0.3));
            let d = DMatrix::from_diagonal(&DVector::from_fn(g, |i, _| 0.3 / lam[i]));
            PrecisionShift::FullSymmetric((&a + a.transpose()) * 0.5 + d)
        }
        1 => PrecisionShift::ConstantBeta(rng.random_range(-0.5..2.0) / lam[0]),
        2 => {
            let l = basis.domain_length();
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            PrecisionShift::MultiplicationPotential(
                basis
                    .grid()
                    .iter()
                    .map(|t| {
                        2.0 + c[0] + c[1] * (std::f64::consts::PI * t / l).cos() + c[2] * t * t
                    })
                    .collect(),
            )
        }
        _ => {
            let r = 3.min(g);
            let a = DMatrix::from_fn(r, r, |_, _| rng.random_range(-0.2..0.2));
            let d = DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| 1.5 / lam[i]));
            PrecisionShift::FiniteRank {
                rank: r,
                block: (&a + a.transpose()) * 0.5 + d,
            }
        }
    }
}

#[test]
fn gradients_match_central_differences_across_families() {
    let bases = [
        Arc::new(SpectralBasis::brownian_bridge(1.0, 6, 49).unwrap()),
        Arc::new(SpectralBasis::brownian_bridge(2.0, 12, 97).unwrap()),
        Arc::new(SpectralBasis::torus_fractional(1.0, 1.0, 7, 64).unwrap()),
    ];
    let phi = ScalarPotential::parse("double_well(0.3)+quadratic(0.5)").unwrap();
    let reg = RegularizationSpec::new(1e-2, 1.0).unwrap();
    let mut rng = rng_for(11, 0);
    for point in 0..24 {
        let basis = &bases[point % bases.len()];
        let target = TargetSpec::separable(basis.clone(), phi.clone());
        let mean = DVector::from_fn(basis.mode_count(), |a, _| {
            rng.random_range(-1.0..1.0) * basis.eigenvalues()[a].sqrt()
        });
        let shift = random_shift(point % 4, basis, &mut rng);
        let err = relative_error(&target, &mean, &shift, &reg, ExpectationMethod::default());
        assert!(err <= 1e-5, "point {point}, {:?}: {err:e}", shift.family());
    }
}

#[test]
fn monte_carlo_gradients_match_differences_of_the_same_draws() {
    let basis = Arc::new(SpectralBasis::brownian_bridge(1.0, 4, 33).unwrap());
    let target = TargetSpec::separable(
        basis.clone(),
        ScalarPotential::parse("quartic(1, -0.5)").unwrap(),
    );
    let method = ExpectationMethod::MonteCarlo {
        samples: 2000,
        seed: 9,
    };
    let mut rng = rng_for(12, 0);
    for kind in 0..4 {
        let mean = DVector::from_fn(4, |_, _| rng.random_range(-0.3..0.3));
        let shift = random_shift(kind, &basis, &mut rng);
        let err = relative_error(&target, &mean, &shift, &RegularizationSpec::none(), method);
        assert!(err <= 1e-5, "{:?}: {err:e}", shift.family());
    }
}

use std::sync::Arc;

use kl_gauss::optimize::{minimize_mixture, Init, MixtureInit, MixtureMc, SolveOptions};
use kl_gauss::parameterization::ShiftFamily;
use kl_gauss::scenarios::{
    bump, double_well_critical_points, double_well_target, sequence_study, sigma_to_beta,
    RegularisedRefit, SequenceKind, DOUBLE_WELL_OFFSET,
};
use kl_gauss::{PrecisionShift, RegularizationSpec, SpectralBasis};
use nalgebra::DVector;

fn study_basis() -> Arc<SpectralBasis> {
    Arc::new(SpectralBasis::brownian_bridge(2.0, 64, 513).unwrap())
}

/// `∫ b²` by composite Simpson on a fine grid.
fn bump_square_integral() -> f64 {
    let n = 200_000;
    let h = 2.0 / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * bump(-1.0 + i as f64 * h).powi(2)
        })
        .sum::<f64>()
        * h
        / 3.0
}

#[test]
fn mollifier_weakly_converges_while_the_l2_norm_grows() {
    let reg = RegularizationSpec::new(1e-2, 1.0).unwrap();
    let rows = sequence_study(
        &study_basis(),
        SequenceKind::Mollifier,
        &[8, 16, 32, 64],
        reg,
        &RegularisedRefit::default(),
    )
    .unwrap();
    let phi_sq = bump_square_integral();
    for w in rows.windows(2) {
        assert!(w[1].kl_to_limit < w[0].kl_to_limit);
    }
    for r in &rows {
        let ratio = r.l2_norm_sq / (r.n as f64 * phi_sq);
        assert!((ratio - 1.0).abs() < 0.05, "n = {}: {ratio}", r.n);
        assert!(r.regularised_converged);
        assert!(r.regularised_spread < 0.1);
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.weighted_hs_norm).collect();
    let (lo, hi) = hs
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), x| (a.min(*x), b.max(*x)));
    assert!((hi - lo) / lo < 0.1, "{hs:?}");
    assert!(rows[3].l2_norm_sq >= 6.0 * rows[0].l2_norm_sq);
}

#[test]
fn oscillation_converges_to_its_mean() {
    let reg = RegularizationSpec::new(1e-2, 1.0).unwrap();
    let ns = [2, 4, 8, 16, 32, 64];
    let rows = sequence_study(
        &study_basis(),
        SequenceKind::oscillation(),
        &ns,
        reg,
        &RegularisedRefit::default(),
    )
    .unwrap();
    for w in rows.windows(2) {
        assert!(w[1].kl_to_limit < w[0].kl_to_limit);
    }
    assert!(rows.last().unwrap().kl_to_limit <= 1e-3);
    for r in &rows {
        assert!((r.l2_norm_sq - 2.25).abs() < 1e-6, "n = {}", r.n);
    }
}

#[test]
fn two_component_mixture_beats_the_best_gaussian_on_the_double_well() {
    let target = double_well_target(0.05).unwrap();
    let comp = |m: f64| Init {
        mean: DVector::from_element(1, m),
        shift: PrecisionShift::ConstantBeta(sigma_to_beta(0.3)),
    };
    let init = MixtureInit {
        components: vec![comp(-1.0), comp(1.0)],
        weights: vec![0.5, 0.5],
    };
    let mc = MixtureMc {
        fit_samples: 2000,
        final_samples: 100_000,
        seed: 1,
    };
    let fit = minimize_mixture(
        &target,
        ShiftFamily::ConstantBeta,
        2,
        &init,
        &SolveOptions::default(),
        &mc,
    )
    .unwrap();
    let best_single = double_well_critical_points(0.05)
        .unwrap()
        .global_objective()
        - DOUBLE_WELL_OFFSET;
    assert!(fit.converged);
    assert!(fit.estimate.estimate + 3.0 * fit.estimate.std_error < best_single - 0.1);
}

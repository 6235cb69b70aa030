use kl_gauss::optimize::SolveOptions;
use kl_gauss::scenarios::{double_well_critical_points, fit_double_well, CriticalKind};

#[test]
fn multistart_recovers_every_closed_form_minimum() {
    for eps in [0.05, 0.1, 0.15] {
        // σ = 1 starts all fall into the symmetric basin once ε is large, so
        // the off-center basins are seeded with smaller σ as well
        let starts: Vec<(f64, f64)> = [-1.0, 0.0, 1.0]
            .iter()
            .flat_map(|&m| [(m, 1.0), (m, 0.2)])
            .collect();
        let fits = fit_double_well(eps, &starts, &SolveOptions::default()).unwrap();
        let branches = double_well_critical_points(eps).unwrap();
        let minima: Vec<_> = std::iter::once(branches.symmetric)
            .chain(branches.off_center)
            .filter(|p| p.kind == CriticalKind::Minimum)
            .collect();
        assert_eq!(
            fits.len(),
            minima.len(),
            "ε = {eps}: {fits:?} vs {minima:?}"
        );
        for p in &minima {
            let hit = fits
                .iter()
                .find(|f| (f.m - p.m).abs() < 1e-6 && (f.sigma - p.sigma).abs() < 1e-6)
                .unwrap_or_else(|| panic!("ε = {eps}: no fit near {p:?} in {fits:?}"));
            assert!(hit.converged);
            assert!((hit.objective - p.objective).abs() < 1e-10);
        }
        assert!(fits.windows(2).all(|w| w[0].objective <= w[1].objective));
    }
}

#[test]
fn single_start_from_half_reaches_the_off_center_minimiser() {
    let fits = fit_double_well(0.05, &[(0.5, 1.0)], &SolveOptions::default()).unwrap();
    assert!((fits[0].m - 0.958295).abs() < 1e-6);
    assert!((fits[0].sigma - 0.164995).abs() < 1e-6);
}

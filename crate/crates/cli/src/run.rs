//! One runner per scenario. Each returns the results table, the summary and
//! whether every optimisation it ran converged.

use std::sync::Arc;

use kl_gauss::interpolation::{convexity_check, kappa_for_target};
use kl_gauss::measures::{hellinger_gaussian, log_normalizer_mc, random_gaussian, tv_bounds};
use kl_gauss::optimize::{
    convergence_certificate, minimize_mixture, multistart, random_inits, Init, MixtureInit,
    MixtureMc, RankedSolution,
};
use kl_gauss::parameterization::{feldman_hajek_report, precision_equivalence_check, ShiftFamily};
use kl_gauss::scenarios::{
    bifurcation_sweep, bump, double_well_critical_points, find_crossover, fit_double_well,
    sequence_study, CriticalKind, RegularisedRefit, SequenceKind,
};
use kl_gauss::{GaussianMeasure, PrecisionShift, SpectralBasis};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Prepared, RunConfig, Scenario};
use crate::output::{float, Table};
use crate::CliError;

pub struct Outcome {
    pub table: Table,
    pub summary: Value,
    pub converged: bool,
}

pub fn execute(config: &RunConfig, prep: &Prepared) -> Result<Outcome, CliError> {
    match config.scenario() {
        Scenario::DoubleWell => double_well(config, prep),
        Scenario::Approximate => approximate(prep),
        Scenario::Mixture => mixture(config, prep),
        Scenario::Interpolate => interpolate(config, prep),
        Scenario::Diagnose => diagnose(config, prep),
        Scenario::SequenceStudy => sequence(config, prep),
    }
}

fn basis(prep: &Prepared) -> &Arc<SpectralBasis> {
    prep.basis.as_ref().expect("scenario uses a basis")
}

fn double_well(config: &RunConfig, prep: &Prepared) -> Result<Outcome, CliError> {
    let dw = config.double_well.as_ref().expect("resolved");
    let rows = bifurcation_sweep(&prep.eps_grid)?;
    let mut table = Table::new(&[
        "epsilon",
        "branch_id",
        "m",
        "sigma",
        "objective",
        "kind",
        "is_global",
        "critical_points",
    ]);
    for r in &rows {
        table.push(vec![
            float(r.epsilon),
            r.branch_id.to_string(),
            float(r.m),
            float(r.sigma),
            float(r.objective),
            r.kind.as_str().into(),
            r.is_global.to_string(),
            r.critical_points.to_string(),
        ]);
    }
    let crossover = find_crossover()?;
    let starts: Vec<(f64, f64)> = dw.starts.iter().map(|s| (s[0], s[1])).collect();
    let mut converged = true;
    let mut fits = Vec::new();
    for &eps in &dw.fit_epsilons {
        let found = fit_double_well(eps, &starts, &prep.solve)?;
        let exact = double_well_critical_points(eps)?;
        converged &= found.iter().all(|f| f.converged);
        let closed: Vec<_> = std::iter::once(exact.symmetric)
            .chain(exact.off_center.iter().copied())
            .filter(|p| p.kind == CriticalKind::Minimum)
            .collect();
        // distance from each closed-form minimum to the nearest fitted point
        let errors: Vec<Value> = closed
            .iter()
            .map(|p| {
                let err = found
                    .iter()
                    .map(|f| (f.m - p.m).abs().max((f.sigma - p.sigma).abs()))
                    .fold(f64::INFINITY, f64::min);
                json!({"m": p.m, "sigma": p.sigma, "objective": p.objective, "nearest_fit_error": err})
            })
            .collect();
        fits.push(json!({
            "epsilon": eps,
            "solutions": found,
            "closed_form_minima": errors,
        }));
    }
    let counts: Vec<usize> = {
        let mut c: Vec<usize> = rows.iter().map(|r| r.critical_points).collect();
        c.dedup();
        c
    };
    let summary = json!({
        "scenario": "double_well",
        "crossover_epsilon": crossover,
        "fold_epsilon": 1.0 / 6.0,
        "grid_points": prep.eps_grid.len(),
        "rows": rows.len(),
        "critical_point_counts_along_grid": counts,
        "count_note": "closed-form roots give 5 critical points for ε < 1/6, 3 at ε = 1/6 and 1 above; \
                       there is no range with exactly three",
        "fits": fits,
        "converged": converged,
    });
    Ok(Outcome {
        table,
        summary,
        converged,
    })
}

fn shift_summary(shift: &PrecisionShift) -> Value {
    match shift {
        PrecisionShift::ConstantBeta(b) => json!({"family": "constant_beta", "beta": b}),
        PrecisionShift::MultiplicationPotential(v) => {
            json!({"family": "multiplication_potential", "v": v})
        }
        PrecisionShift::FullSymmetric(m) => json!({
            "family": "full_symmetric",
            "diagonal": m.diagonal().as_slice(),
        }),
        PrecisionShift::FiniteRank { rank, block } => json!({
            "family": "finite_rank",
            "rank": rank,
            "diagonal": block.diagonal().as_slice(),
        }),
    }
}

fn solve(prep: &Prepared, inits: &[Init]) -> Result<Vec<RankedSolution>, CliError> {
    let target = prep.target.as_ref().expect("scenario uses a target");
    let family = prep.family.expect("scenario uses a family");
    Ok(multistart(target, family, inits, &prep.reg, &prep.solve)?)
}

fn distinct_summary(ranked: &[RankedSolution]) -> Vec<Value> {
    ranked
        .iter()
        .map(|r| {
            json!({
                "objective": r.solution.objective.total,
                "converged": r.solution.converged,
                "gradient_norm": r.solution.gradient_norm,
                "starts": r.starts,
            })
        })
        .collect()
}

fn approximate(prep: &Prepared) -> Result<Outcome, CliError> {
    let ranked = solve(prep, &prep.inits)?;
    let best = &ranked[0].solution;
    let mut table = Table::new(&[
        "iteration",
        "objective",
        "gradient_norm",
        "margin",
        "mean_step_h1",
        "shift_step_hs",
        "step_size",
    ]);
    for (k, t) in best.trace.iter().enumerate() {
        table.push(vec![
            k.to_string(),
            float(t.objective),
            float(t.gradient_norm),
            float(t.margin),
            float(t.mean_step),
            float(t.shift_step),
            float(t.step_size),
        ]);
    }
    let others: Vec<GaussianMeasure> = ranked[1..]
        .iter()
        .map(|r| r.solution.measure.clone())
        .collect();
    let certificate = if best.tail.len() >= 3 {
        let c = convergence_certificate(&best.tail, &best.measure, &others)?;
        json!({
            "successive_tv_upper": c.successive_tv_upper,
            "pairwise_tv_upper_max": c.pairwise_tv_upper_max,
            "hellinger_to_final": c.hellinger_to_final,
            "other_solutions_hellinger": c.comparison_hellinger,
            "cauchy": c.cauchy,
        })
    } else {
        Value::Null
    };
    let converged = best.converged;
    let summary = json!({
        "scenario": "approximate",
        "objective": {
            "total": best.objective.total,
            "gaussian_kl": best.objective.gaussian_kl,
            "phi_expectation": best.objective.phi_expectation,
            "penalty": best.objective.penalty,
        },
        "iterations": best.iterations,
        "gradient_norm": best.gradient_norm,
        "converged": converged,
        "mean": best.mean.as_slice(),
        "shift": shift_summary(&best.shift),
        "distinct_solutions": distinct_summary(&ranked),
        "certificate": certificate,
    });
    Ok(Outcome {
        table,
        summary,
        converged,
    })
}

fn unit_mean(g: usize, offset: f64) -> DVector<f64> {
    let mut m = DVector::zeros(g);
    m[0] = offset;
    m
}

fn mixture(config: &RunConfig, prep: &Prepared) -> Result<Outcome, CliError> {
    let cfg = config.mixture.as_ref().expect("resolved");
    let basis = basis(prep);
    let family = prep.family.expect("resolved");
    let target = prep.target.as_ref().expect("resolved");
    let g = basis.mode_count();
    let starts: Vec<Init> = cfg
        .offsets
        .iter()
        .map(|&o| Init {
            mean: unit_mean(g, o),
            shift: family.constant(cfg.beta, basis),
        })
        .collect();
    let init = MixtureInit {
        components: starts.clone(),
        weights: vec![1.0 / cfg.components as f64; cfg.components],
    };
    let mc = MixtureMc {
        fit_samples: cfg.fit_samples,
        final_samples: cfg.final_samples,
        seed: config.seed,
    };
    let mix = minimize_mixture(target, family, cfg.components, &init, &prep.solve, &mc)?;
    let mut single_starts = starts;
    single_starts.push(Init {
        mean: DVector::zeros(g),
        shift: family.zero(basis),
    });
    let single = solve(prep, &single_starts)?;
    let best_single = &single[0].solution;
    let mut table = Table::new(&["component", "weight", "mean_1", "variance_1", "degenerate"]);
    for (i, comp) in mix.mixture.components().iter().enumerate() {
        table.push(vec![
            i.to_string(),
            float(mix.weights[i]),
            float(comp.mean()[0]),
            float(comp.covariance()[(0, 0)]),
            mix.degenerate.contains(&i).to_string(),
        ]);
    }
    let gain = best_single.objective.total - mix.estimate.estimate;
    let converged = mix.converged && best_single.converged;
    let summary = json!({
        "scenario": "mixture",
        "mixture_objective": mix.estimate.estimate,
        "mixture_std_error": mix.estimate.std_error,
        "fit_objective": mix.fit_objective,
        "best_single_objective": best_single.objective.total,
        "gain": gain,
        "gain_in_std_errors": gain / mix.estimate.std_error,
        "weights": mix.weights,
        "degenerate_components": mix.degenerate,
        "iterations": mix.iterations,
        "gradient_norm": mix.gradient_norm,
        "single_distinct_solutions": distinct_summary(&single),
        "converged": converged,
    });
    Ok(Outcome {
        table,
        summary,
        converged,
    })
}

/// Independent seeds for the two endpoints of each pair.
fn pair_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

fn interpolate(config: &RunConfig, prep: &Prepared) -> Result<Outcome, CliError> {
    let cfg = config.interpolate.as_ref().expect("resolved");
    let basis = basis(prep);
    let target = prep.target.as_ref().expect("resolved");
    let kappa = cfg
        .kappa
        .or_else(|| kappa_for_target(target))
        .unwrap_or(0.0);
    let method = prep.solve.method;
    let reports = (0..cfg.pairs as u64)
        .into_par_iter()
        .map(|i| {
            let a = random_gaussian(basis, cfg.scale, pair_seed(config.seed, 2 * i))?;
            let b = random_gaussian(basis, cfg.scale, pair_seed(config.seed, 2 * i + 1))?;
            convexity_check(&a, &b, target, &cfg.t_grid, kappa, method)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(&["pair", "t", "objective", "chord", "margin"]);
    for (i, r) in reports.iter().enumerate() {
        for k in 0..r.t_grid.len() {
            table.push(vec![
                i.to_string(),
                float(r.t_grid[k]),
                float(r.objective[k]),
                float(r.chord[k]),
                float(r.margins[k]),
            ]);
        }
    }
    let min_margin = reports
        .iter()
        .map(|r| r.min_margin)
        .fold(f64::INFINITY, f64::min);
    let (uniqueness, converged) = if cfg.uniqueness_starts > 0 {
        let family = prep.family.expect("resolved");
        let inits = random_inits(basis, family, cfg.uniqueness_starts, 1.0, 0.2, config.seed);
        let ranked = solve(prep, &inits)?;
        let all = ranked.iter().all(|r| r.solution.converged);
        (
            json!({
                "starts": cfg.uniqueness_starts,
                "distinct_minimisers": ranked.len(),
                "solutions": distinct_summary(&ranked),
            }),
            all,
        )
    } else {
        (Value::Null, true)
    };
    let summary = json!({
        "scenario": "interpolate",
        "kappa": kappa,
        "pairs": cfg.pairs,
        "min_margin": min_margin,
        "transport_costs": reports.iter().map(|r| r.transport_cost).collect::<Vec<_>>(),
        "uniqueness": uniqueness,
        "converged": converged,
    });
    Ok(Outcome {
        table,
        summary,
        converged,
    })
}

fn diagnose(config: &RunConfig, prep: &Prepared) -> Result<Outcome, CliError> {
    let cfg = config.diagnose.as_ref().expect("resolved");
    let basis = basis(prep);
    let target = prep.target.as_ref().expect("resolved");
    let ranked = solve(prep, &prep.inits)?;
    let best = &ranked[0].solution;
    let fh = feldman_hajek_report(&best.shift, basis)?;
    let mut table = Table::new(&["modes", "weighted_hs_norm"]);
    for (k, norm) in &fh.growth {
        table.push(vec![k.to_string(), float(*norm)]);
    }
    let precision = match (&best.shift, prep.family) {
        (
            PrecisionShift::MultiplicationPotential(v),
            Some(ShiftFamily::MultiplicationPotential),
        ) => {
            let r = precision_equivalence_check(v, basis, cfg.importance_samples, config.seed)?;
            json!({
                "log_density_deviation": r.log_density_deviation,
                "log_density_offset": r.log_density_offset,
                "log_normalizer": r.log_normalizer,
                "mean_error": r.mean_error,
                "covariance_error": r.covariance_error,
                "effective_sample_size": r.effective_sample_size,
            })
        }
        _ => Value::Null,
    };
    let reference = GaussianMeasure::reference(basis.clone());
    let tv = tv_bounds(&best.measure, &reference)?;
    let hellinger = hellinger_gaussian(&best.measure, &reference)?;
    let log_z = log_normalizer_mc(target, cfg.normalizer_samples, config.seed)?;
    let converged = best.converged;
    let summary = json!({
        "scenario": "diagnose",
        "objective": best.objective.total,
        "converged": converged,
        "feldman_hajek": {
            "weighted_hs_norm": fh.weighted_hs_norm,
            "margin": fh.margin,
            "equivalent": fh.equivalent,
        },
        "precision_check": precision,
        "to_reference": {
            "tv_lower": tv.lower,
            "tv_upper": tv.upper,
            "hellinger_integral": hellinger,
        },
        "log_normalizer": {"estimate": log_z.estimate, "std_error": log_z.std_error},
        // the objective omits log Z, so KL(ν‖μ) = objective + log Z
        "kl_to_target_estimate": best.objective.total + log_z.estimate,
    });
    Ok(Outcome {
        table,
        summary,
        converged,
    })
}

/// `∫ b²` for the unit-mass bump, by a fine trapezoid rule (the integrand is
/// flat at both ends, so the rule converges very fast).
fn bump_square_integral() -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    (1..n)
        .map(|i| bump(-1.0 + i as f64 * h).powi(2))
        .sum::<f64>()
        * h
}

fn sequence(config: &RunConfig, prep: &Prepared) -> Result<Outcome, CliError> {
    let cfg = config.sequence_study.as_ref().expect("resolved");
    let basis = basis(prep);
    let kind = config.sequence_kind();
    let refit = RegularisedRefit {
        modes: cfg.refit_modes,
        inits: cfg.refit_starts,
        seed: config.seed,
        solve: prep.solve,
    };
    let rows = sequence_study(basis, kind, &cfg.n_list, prep.reg, &refit)?;
    let length = basis.domain_length();
    // ‖v_n‖² predicted from the scaling identity
    let predicted = |n: usize| match kind {
        SequenceKind::Mollifier => n as f64 * bump_square_integral(),
        SequenceKind::Oscillation { amplitude } => length * (1.0 + amplitude * amplitude / 2.0),
    };
    let mut table = Table::new(&[
        "n",
        "kl_to_limit",
        "sobolev_norm_sq",
        "l2_norm_sq",
        "l2_ratio",
        "weighted_hs_norm",
        "regularised_norm",
        "regularised_spread",
        "regularised_converged",
    ]);
    for r in &rows {
        table.push(vec![
            r.n.to_string(),
            float(r.kl_to_limit),
            float(r.sobolev_norm_sq),
            float(r.l2_norm_sq),
            float(r.l2_norm_sq / predicted(r.n)),
            float(r.weighted_hs_norm),
            float(r.regularised_norm),
            float(r.regularised_spread),
            r.regularised_converged.to_string(),
        ]);
    }
    let kl_decreasing = rows.windows(2).all(|w| w[1].kl_to_limit < w[0].kl_to_limit);
    let ratio_error = rows
        .iter()
        .map(|r| (r.l2_norm_sq / predicted(r.n) - 1.0).abs())
        .fold(0.0, f64::max);
    let hs: Vec<f64> = rows.iter().map(|r| r.weighted_hs_norm).collect();
    let hs_max = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hs_min = hs.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = rows
        .iter()
        .map(|r| r.regularised_spread)
        .fold(0.0, f64::max);
    let converged = rows.iter().all(|r| r.regularised_converged);
    let summary = json!({
        "scenario": "sequence_study",
        "family": kind,
        "delta": prep.reg.delta,
        "r": prep.reg.r,
        "kl_decreasing": kl_decreasing,
        "final_kl": rows.last().map(|r| r.kl_to_limit),
        "l2_ratio_max_error": ratio_error,
        "l2_growth": rows.last().unwrap().l2_norm_sq / rows[0].l2_norm_sq,
        "weighted_hs_variation": (hs_max - hs_min) / hs_min,
        "regularised_spread_max": spread,
        "converged": converged,
    });
    Ok(Outcome {
        table,
        summary,
        converged,
    })
}

//! Minimisation of the KL objective over a precision-shift family, over
//! several starts, and over Gaussian mixtures.
//!
//! Steps are preconditioned by the Fisher metric of the Gaussian family
//! (the Hessian of the Gaussian part of the objective), followed by a
//! backtracking line search. Steps that would leave the admissible set are
//! first cut back to 0.9 of the distance to the positivity boundary.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::measures::{
    hellinger_gaussian, kl_mixture_mc, rng_for, standard_normals, tv_bounds, GaussianMeasure,
    McEstimate, MixtureMeasure,
};
use crate::objective::{
    evaluate, ExpectationMethod, ObjectiveValue, RegularizationSpec, TargetSpec,
};
use crate::parameterization::{
    assemble_precision, multiplication_matrix, shift_matrix, weighted_hs_norm, PrecisionShift,
    ShiftFamily,
};
use crate::spectral::{BasisKind, SpectralBasis};

const FRACTION_TO_BOUNDARY: f64 = 0.9;
/// Solutions closer than this in `‖Δm‖_{H¹} + ‖C₀^{1/2}ΔΓC₀^{1/2}‖_HS` are merged.
pub const DEDUP_DISTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_rule: StepRule,
    pub boundary_margin: f64,
    /// Seed for Monte Carlo expectations; replaces the seed inside `method`.
    pub seed: u64,
    pub method: ExpectationMethod,
    pub fix_mean: bool,
    pub fix_shift: bool,
    /// Number of final iterates kept for the convergence certificate.
    pub tail_length: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_rule: StepRule::default(),
            boundary_margin: 1e-8,
            seed: 0,
            method: ExpectationMethod::default(),
            fix_mean: false,
            fix_shift: false,
            tail_length: 5,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(invalid("gradient tolerance must be positive"));
        }
        let s = &self.step_rule;
        if !(s.shrink > 0.0 && s.shrink < 1.0) {
            return Err(invalid("shrink factor must lie in (0, 1)"));
        }
        if !(s.initial_step > 0.0) {
            return Err(invalid("initial step must be positive"));
        }
        if !(s.sufficient_decrease > 0.0 && s.sufficient_decrease < 1.0) {
            return Err(invalid("sufficient-decrease constant must lie in (0, 1)"));
        }
        if !(self.boundary_margin > 0.0) {
            return Err(invalid("boundary margin must be positive"));
        }
        Ok(())
    }

    fn method(&self) -> ExpectationMethod {
        match self.method {
            ExpectationMethod::MonteCarlo { samples, .. } => ExpectationMethod::MonteCarlo {
                samples,
                seed: self.seed,
            },
            q => q,
        }
    }
}

/// A starting point `(m, Γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub mean: DVector<f64>,
    pub shift: PrecisionShift,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub objective: f64,
    pub gradient_norm: f64,
    pub margin: f64,
    /// `‖m_{k+1} − m_k‖_{H¹}` of the step taken from this iterate (0 for the last).
    pub mean_step: f64,
    /// `‖C₀^{1/2}(Γ_{k+1} − Γ_k)C₀^{1/2}‖_HS`.
    pub shift_step: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub mean: DVector<f64>,
    pub shift: PrecisionShift,
    pub objective: ObjectiveValue,
    pub measure: GaussianMeasure,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub trace: Vec<TraceRecord>,
    /// The last accepted iterates, oldest first, ending with `measure`.
    pub tail: Vec<GaussianMeasure>,
}

/// Coordinates of a shift family: `P(θ) = P₀ + Σ_k θ_k B_k`.
pub(crate) struct ShiftCoords {
    family: ShiftFamily,
    basis: Arc<SpectralBasis>,
    base: DMatrix<f64>,
    kind: CoordKind,
}

enum CoordKind {
    /// `B_k = E_ij + E_ji` (or `E_ii`) for each listed pair.
    Entries(Vec<(usize, usize)>),
    Identity,
    /// Multiplication potential `v = Σ_k θ_k c_k` with smooth profiles `c_k`.
    Profiles {
        profiles: DMatrix<f64>,
        blocks: Vec<DMatrix<f64>>,
    },
}

/// Smooth profiles spanning the multiplication operators representable on the
/// retained modes. Grid values alone are not identifiable: the map `v ↦ Γ`
/// has a large kernel once the grid is finer than the mode count.
fn potential_profiles(basis: &SpectralBasis) -> DMatrix<f64> {
    let grid = basis.grid();
    let n = grid.len();
    let l = basis.domain_length();
    let g = basis.mode_count();
    match basis.kind() {
        BasisKind::Point => DMatrix::from_element(n, 1, 1.0),
        BasisKind::DirichletBridge => {
            // products sin(aπs/L)·sin(bπs/L) span cos(kπs/L) for k ≤ 2γ; the
            // two top frequencies are redundant. Eigenfunctions vanish at the
            // endpoints, so only interior grid values are seen.
            let count = (2 * g - 1).min(n.saturating_sub(2)).max(1);
            DMatrix::from_fn(n, count, |j, k| {
                (k as f64 * std::f64::consts::PI * (grid[j] + 0.5 * l) / l).cos()
            })
        }
        BasisKind::TorusFractional { .. } => {
            let kmax = basis
                .frequencies()
                .iter()
                .map(|w| (w * l / (2.0 * std::f64::consts::PI)).round() as usize)
                .max()
                .unwrap_or(0);
            let top = (2 * kmax).min((n - 1) / 2);
            DMatrix::from_fn(n, 1 + 2 * top, |j, c| {
                let arg = 2.0 * std::f64::consts::PI * grid[j] / l;
                match c {
                    0 => 1.0,
                    c if c % 2 == 1 => (((c + 1) / 2) as f64 * arg).cos(),
                    c => ((c / 2) as f64 * arg).sin(),
                }
            })
        }
    }
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            pairs.push((i, j));
        }
    }
    pairs
}

impl ShiftCoords {
    pub(crate) fn new(family: ShiftFamily, basis: &Arc<SpectralBasis>) -> Result<Self> {
        let g = basis.mode_count();
        let mut base = DMatrix::from_diagonal(&basis.eigenvalue_vector().map(|l| 1.0 / l));
        let kind = match family {
            ShiftFamily::FullSymmetric => CoordKind::Entries(upper_pairs(g)),
            ShiftFamily::ConstantBeta => CoordKind::Identity,
            ShiftFamily::FiniteRank { rank } => {
                if rank == 0 || rank > g {
                    return Err(invalid(format!("rank {rank} outside 1..={g}")));
                }
                for a in 0..rank {
                    base[(a, a)] = 0.0;
                }
                CoordKind::Entries(upper_pairs(rank))
            }
            ShiftFamily::MultiplicationPotential => {
                let profiles = potential_profiles(basis);
                let blocks = (0..profiles.ncols())
                    .map(|k| multiplication_matrix(profiles.column(k).as_slice(), basis))
                    .collect();
                CoordKind::Profiles { profiles, blocks }
            }
        };
        Ok(Self {
            family,
            basis: basis.clone(),
            base,
            kind,
        })
    }

    #[cfg(test)]
    pub(crate) fn dim(&self) -> usize {
        match &self.kind {
            CoordKind::Entries(p) => p.len(),
            CoordKind::Identity => 1,
            CoordKind::Profiles { profiles, .. } => profiles.ncols(),
        }
    }

    /// `Σ_k d_k B_k`.
    pub(crate) fn combine(&self, d: &[f64]) -> DMatrix<f64> {
        let g = self.base.nrows();
        let mut out = DMatrix::zeros(g, g);
        match &self.kind {
            CoordKind::Entries(pairs) => {
                for (&(i, j), v) in pairs.iter().zip(d) {
                    out[(i, j)] += v;
                    if i != j {
                        out[(j, i)] += v;
                    }
                }
            }
            CoordKind::Identity => {
                for a in 0..g {
                    out[(a, a)] = d[0];
                }
            }
            CoordKind::Profiles { blocks, .. } => {
                for (b, v) in blocks.iter().zip(d) {
                    if *v != 0.0 {
                        out += b * *v;
                    }
                }
            }
        }
        out
    }

    pub(crate) fn precision(&self, theta: &[f64]) -> DMatrix<f64> {
        &self.base + self.combine(theta)
    }

    pub(crate) fn to_shift(&self, theta: &[f64]) -> PrecisionShift {
        match (&self.kind, self.family) {
            (CoordKind::Identity, _) => PrecisionShift::ConstantBeta(theta[0]),
            (CoordKind::Profiles { profiles, .. }, _) => PrecisionShift::MultiplicationPotential(
                (profiles * DVector::from_column_slice(theta))
                    .as_slice()
                    .to_vec(),
            ),
            (CoordKind::Entries(_), ShiftFamily::FiniteRank { rank }) => {
                let p = self.combine(theta);
                PrecisionShift::FiniteRank {
                    rank,
                    block: p.view((0, 0), (rank, rank)).into_owned(),
                }
            }
            (CoordKind::Entries(_), _) => PrecisionShift::FullSymmetric(self.combine(theta)),
        }
    }

    pub(crate) fn from_shift(&self, shift: &PrecisionShift) -> Result<Vec<f64>> {
        if shift.family() != self.family {
            return Err(invalid(format!(
                "initial shift is {:?}, optimisation family is {:?}",
                shift.family(),
                self.family
            )));
        }
        Ok(match (shift, &self.kind) {
            (PrecisionShift::ConstantBeta(b), _) => vec![*b],
            (PrecisionShift::FullSymmetric(m), CoordKind::Entries(pairs))
            | (PrecisionShift::FiniteRank { block: m, .. }, CoordKind::Entries(pairs)) => {
                assemble_precision(shift, &self.basis)?;
                pairs
                    .iter()
                    .map(|&(i, j)| 0.5 * (m[(i, j)] + m[(j, i)]))
                    .collect()
            }
            (PrecisionShift::MultiplicationPotential(v), CoordKind::Profiles { profiles, .. }) => {
                assemble_precision(shift, &self.basis)?;
                let svd = profiles.clone().svd(true, true);
                svd.solve(&DVector::from_column_slice(v), 1e-12)
                    .map_err(|e| invalid(format!("cannot project initial potential: {e}")))?
                    .as_slice()
                    .to_vec()
            }
            _ => unreachable!("family checked above"),
        })
    }

    /// `∂F/∂θ_k = tr(G B_k)` for symmetric `G = ∂F/∂P`.
    pub(crate) fn pull_gradient(&self, g: &DMatrix<f64>) -> Vec<f64> {
        match &self.kind {
            CoordKind::Entries(pairs) => pairs
                .iter()
                .map(|&(i, j)| {
                    if i == j {
                        g[(i, i)]
                    } else {
                        g[(i, j)] + g[(j, i)]
                    }
                })
                .collect(),
            CoordKind::Identity => vec![g.trace()],
            CoordKind::Profiles { blocks, .. } => blocks.iter().map(|b| g.dot(b)).collect(),
        }
    }

    /// Fisher metric `½ tr(C B_k C B_l)` of the Gaussian family.
    pub(crate) fn fisher(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            CoordKind::Entries(pairs) => {
                let expand = |&(i, j): &(usize, usize)| -> Vec<(usize, usize)> {
                    if i == j {
                        vec![(i, i)]
                    } else {
                        vec![(i, j), (j, i)]
                    }
                };
                let cells: Vec<Vec<(usize, usize)>> = pairs.iter().map(expand).collect();
                let n = pairs.len();
                let mut f = DMatrix::zeros(n, n);
                for k in 0..n {
                    for l in k..n {
                        let mut s = 0.0;
                        for &(a, b) in &cells[k] {
                            for &(cc, d) in &cells[l] {
                                // tr(C E_ab C E_cd) = C_bc C_da
                                s += c[(b, cc)] * c[(d, a)];
                            }
                        }
                        f[(k, l)] = 0.5 * s;
                        f[(l, k)] = 0.5 * s;
                    }
                }
                f
            }
            CoordKind::Identity => DMatrix::from_element(1, 1, 0.5 * c.norm_squared()),
            CoordKind::Profiles { blocks, .. } => {
                let cb: Vec<DMatrix<f64>> = blocks.iter().map(|b| c * b).collect();
                let n = cb.len();
                let mut f = DMatrix::zeros(n, n);
                for k in 0..n {
                    for l in k..n {
                        let s = cb[k].dot(&cb[l].transpose());
                        f[(k, l)] = 0.5 * s;
                        f[(l, k)] = 0.5 * s;
                    }
                }
                f
            }
        }
    }

    /// Penalty gradient and Hessian in these coordinates.
    fn penalty_terms(
        &self,
        theta: &[f64],
        reg: &RegularizationSpec,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let CoordKind::Profiles { profiles, .. } = &self.kind else {
            return None;
        };
        if reg.delta == 0.0 {
            return None;
        }
        let b = &self.basis;
        let e = b.eigenfunction_table();
        let w = DMatrix::from_fn(e.nrows(), e.ncols(), |a, j| {
            e[(a, j)] * b.quadrature_weights()[j]
        });
        let a = w * profiles;
        let s = b.sobolev_weights(reg.r);
        let sa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, k| s[i] * a[(i, k)]);
        let hess = a.transpose() * sa * (2.0 * reg.delta);
        let grad = &hess * DVector::from_column_slice(theta);
        Some((grad, hess))
    }
}

/// Largest step along `direction` keeping `P + αD` positive definite, times 0.9.
fn boundary_step(p: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    if d.iter().all(|v| *v == 0.0) {
        return f64::INFINITY;
    }
    let Some(l) = linalg::cholesky_lower(p) else {
        return 0.0;
    };
    let y = linalg::solve_lower(&l, d);
    let s = linalg::solve_lower(&l, &y.transpose());
    let lowest = linalg::min_eigenvalue(&s);
    if lowest < 0.0 {
        FRACTION_TO_BOUNDARY / -lowest
    } else {
        f64::INFINITY
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let scale = m.diagonal().amax().max(1e-300);
    let mut reg = m.clone();
    let mut ridge = 1e-12 * scale;
    loop {
        if let Some(ch) = nalgebra::Cholesky::new(linalg::symmetrize(&reg)) {
            return ch.solve(rhs);
        }
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        ridge *= 10.0;
    }
}

struct State {
    mean: DVector<f64>,
    theta: Vec<f64>,
    precision: DMatrix<f64>,
    shift: PrecisionShift,
    total: f64,
    value: ObjectiveValue,
    measure: GaussianMeasure,
    grad_mean: DVector<f64>,
    grad_theta: Vec<f64>,
}

struct Problem<'a> {
    target: &'a TargetSpec,
    reg: &'a RegularizationSpec,
    coords: ShiftCoords,
    opts: SolveOptions,
}

impl Problem<'_> {
    fn state(&self, mean: DVector<f64>, theta: Vec<f64>) -> Result<State> {
        let shift = self.coords.to_shift(&theta);
        let precision = self.coords.precision(&theta);
        let eval = evaluate(&mean, &shift, self.target, self.opts.method())?;
        let penalty = self.reg.penalty(&shift, self.target.basis())?;
        let mut grad_theta = self.coords.pull_gradient(&eval.precision_grad);
        if let Some((pg, _)) = self.coords.penalty_terms(&theta, self.reg) {
            for (g, p) in grad_theta.iter_mut().zip(pg.iter()) {
                *g += p;
            }
        }
        let value = ObjectiveValue {
            penalty,
            total: eval.value.total + penalty,
            ..eval.value
        };
        Ok(State {
            mean,
            theta,
            precision,
            shift,
            total: value.total,
            value,
            measure: eval.measure,
            grad_mean: eval.mean_grad,
            grad_theta,
        })
    }

    fn free_gradient(&self, s: &State) -> DVector<f64> {
        let mut parts = Vec::new();
        if !self.opts.fix_mean {
            parts.extend(s.grad_mean.iter().copied());
        }
        if !self.opts.fix_shift {
            parts.extend(s.grad_theta.iter().copied());
        }
        DVector::from_vec(parts)
    }

    /// Natural-gradient direction split into mean and shift parts.
    fn direction(&self, s: &State) -> (DVector<f64>, Vec<f64>) {
        let g = s.mean.len();
        let mean_dir = if self.opts.fix_mean {
            DVector::zeros(g)
        } else {
            -solve_spd(&s.precision, &s.grad_mean)
        };
        let shift_dir = if self.opts.fix_shift {
            vec![0.0; s.theta.len()]
        } else {
            let c = s.measure.covariance();
            let mut metric = self.coords.fisher(&c);
            if let Some((_, hess)) = self.coords.penalty_terms(&s.theta, self.reg) {
                metric += hess;
            }
            let rhs = DVector::from_column_slice(&s.grad_theta);
            (-solve_spd(&metric, &rhs)).as_slice().to_vec()
        };
        (mean_dir, shift_dir)
    }
}

pub fn minimize(
    target: &TargetSpec,
    family: ShiftFamily,
    init: &Init,
    reg: &RegularizationSpec,
    opts: &SolveOptions,
) -> Result<Solution> {
    opts.validate()?;
    let basis = target.basis();
    if init.mean.len() != basis.mode_count() {
        return Err(invalid(format!(
            "initial mean has {} coefficients, basis has γ = {}",
            init.mean.len(),
            basis.mode_count()
        )));
    }
    let coords = ShiftCoords::new(family, basis)?;
    let theta0 = coords.from_shift(&init.shift)?;
    let margin0 = linalg::min_eigenvalue(&coords.precision(&theta0));
    if !(margin0 >= opts.boundary_margin) {
        return Err(Error::NotPositive {
            margin: margin0,
            required: opts.boundary_margin,
        });
    }
    let problem = Problem {
        target,
        reg,
        coords,
        opts: *opts,
    };
    let rule = opts.step_rule;
    let mut state = problem.state(init.mean.clone(), theta0)?;
    let mut trace = Vec::new();
    let mut tail = VecDeque::with_capacity(opts.tail_length + 1);
    tail.push_back(state.measure.clone());
    let mut converged = false;
    let mut iterations = 0;
    let lam = basis.eigenvalues().to_vec();

    loop {
        let grad = problem.free_gradient(&state);
        let gnorm = grad.norm();
        let margin = linalg::min_eigenvalue(&state.precision);
        let mut record = TraceRecord {
            objective: state.total,
            gradient_norm: gnorm,
            margin,
            mean_step: 0.0,
            shift_step: 0.0,
            step_size: 0.0,
        };
        if gnorm <= opts.gradient_tolerance {
            converged = true;
            trace.push(record);
            break;
        }
        if iterations >= opts.max_iterations {
            trace.push(record);
            break;
        }

        let (mean_dir, shift_dir) = problem.direction(&state);
        let mut slope = state.grad_mean.dot(&mean_dir);
        slope += state
            .grad_theta
            .iter()
            .zip(&shift_dir)
            .map(|(g, d)| g * d)
            .sum::<f64>();
        if !(slope < 0.0) {
            trace.push(record);
            break;
        }
        let d_matrix = problem.coords.combine(&shift_dir);
        let mut alpha = rule
            .initial_step
            .min(boundary_step(&state.precision, &d_matrix));
        // below this the objective cannot certify decrease; fall back to the
        // gradient norm
        let flat_tol = 1e-14 * state.total.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..=rule.max_backtracks {
            let trial_theta: Vec<f64> = state
                .theta
                .iter()
                .zip(&shift_dir)
                .map(|(t, d)| t + alpha * d)
                .collect();
            let trial_precision = problem.coords.precision(&trial_theta);
            if linalg::min_eigenvalue(&trial_precision) < opts.boundary_margin {
                alpha *= rule.shrink;
                continue;
            }
            let trial_mean = &state.mean + &mean_dir * alpha;
            match problem.state(trial_mean, trial_theta) {
                Ok(trial) => {
                    let armijo =
                        trial.total <= state.total + rule.sufficient_decrease * alpha * slope;
                    let flat = (trial.total - state.total).abs() <= flat_tol
                        && problem.free_gradient(&trial).norm() < gnorm;
                    if armijo || flat {
                        accepted = Some(trial);
                        break;
                    }
                }
                Err(Error::NotPositive { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= rule.shrink;
        }
        let Some(next) = accepted else {
            trace.push(record);
            break;
        };
        let dm = &next.mean - &state.mean;
        record.mean_step = (0..dm.len())
            .map(|a| dm[a] * dm[a] / lam[a])
            .sum::<f64>()
            .sqrt();
        record.shift_step = weighted_hs_norm(&(&next.precision - &state.precision), &lam);
        record.step_size = alpha;
        trace.push(record);
        state = next;
        iterations += 1;
        tail.push_back(state.measure.clone());
        if tail.len() > opts.tail_length.max(1) {
            tail.pop_front();
        }
    }

    let gradient_norm = trace.last().map(|r| r.gradient_norm).unwrap_or(0.0);
    Ok(Solution {
        mean: state.mean,
        shift: state.shift,
        objective: state.value,
        measure: state.measure,
        iterations,
        converged,
        gradient_norm,
        trace,
        tail: tail.into_iter().collect(),
    })
}

/// `‖m₁ − m₂‖_{H¹} + ‖C₀^{1/2}(Γ₁ − Γ₂)C₀^{1/2}‖_HS`.
pub fn solution_distance(a: &Solution, b: &Solution, basis: &SpectralBasis) -> Result<f64> {
    let dm = &a.mean - &b.mean;
    let mean_part = basis.cameron_martin_norm_sq(dm.as_slice())?.sqrt();
    let ga = shift_matrix(&a.shift, basis)?;
    let gb = shift_matrix(&b.shift, basis)?;
    Ok(mean_part + weighted_hs_norm(&(ga - gb), basis.eigenvalues()))
}

#[derive(Debug, Clone)]
pub struct RankedSolution {
    pub solution: Solution,
    /// Indices of the starts that reached this solution.
    pub starts: Vec<usize>,
}

/// Runs [`minimize`] from every start, merges coincident solutions and ranks
/// them by objective. Starts that are not admissible are skipped.
pub fn multistart(
    target: &TargetSpec,
    family: ShiftFamily,
    inits: &[Init],
    reg: &RegularizationSpec,
    opts: &SolveOptions,
) -> Result<Vec<RankedSolution>> {
    if inits.is_empty() {
        return Err(invalid("multistart needs at least one start"));
    }
    let runs: Vec<Result<Solution>> = inits
        .par_iter()
        .map(|init| minimize(target, family, init, reg, opts))
        .collect();
    let mut ok = Vec::new();
    let mut first_err = None;
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push((i, s)),
            Err(e @ Error::NotPositive { .. }) => {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if ok.is_empty() {
        return Err(first_err.unwrap_or_else(|| invalid("no admissible start")));
    }
    ok.sort_by(|a, b| a.1.objective.total.total_cmp(&b.1.objective.total));
    let mut ranked: Vec<RankedSolution> = Vec::new();
    for (i, s) in ok {
        let mut merged = false;
        for r in ranked.iter_mut() {
            if solution_distance(&r.solution, &s, target.basis())? <= DEDUP_DISTANCE {
                r.starts.push(i);
                merged = true;
                break;
            }
        }
        if !merged {
            ranked.push(RankedSolution {
                solution: s,
                starts: vec![i],
            });
        }
    }
    Ok(ranked)
}

/// Random admissible starts: means drawn from `N(0, mean_scale²·C₀)` and
/// shifts of relative size `shift_scale` around `Γ = 0`.
pub fn random_inits(
    basis: &SpectralBasis,
    family: ShiftFamily,
    count: usize,
    mean_scale: f64,
    shift_scale: f64,
    seed: u64,
) -> Vec<Init> {
    let g = basis.mode_count();
    let lam = basis.eigenvalues();
    let top = 1.0 / lam[0];
    (0..count)
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let z = standard_normals(&mut rng, g);
            let mean = DVector::from_fn(g, |a, _| mean_scale * lam[a].sqrt() * z[a]);
            let u = |r: &mut rand_chacha::ChaCha20Rng| r.random_range(-1.0..1.0) * shift_scale;
            let shift = match family {
                ShiftFamily::ConstantBeta => PrecisionShift::ConstantBeta(u(&mut rng) * top),
                ShiftFamily::FullSymmetric => PrecisionShift::FullSymmetric(
                    DMatrix::from_diagonal(&DVector::from_fn(g, |a, _| u(&mut rng) / lam[a])),
                ),
                ShiftFamily::FiniteRank { rank } => {
                    let rank = rank.min(g);
                    PrecisionShift::FiniteRank {
                        rank,
                        block: DMatrix::from_diagonal(&DVector::from_fn(rank, |a, _| {
                            (1.0 + u(&mut rng)) / lam[a]
                        })),
                    }
                }
                ShiftFamily::MultiplicationPotential => {
                    let l = basis.domain_length();
                    let c: Vec<f64> = (0..4).map(|_| u(&mut rng) * top).collect();
                    PrecisionShift::MultiplicationPotential(
                        basis
                            .grid()
                            .iter()
                            .map(|t| {
                                let s = std::f64::consts::PI * t / l;
                                c[0] + c[1] * s.cos()
                                    + c[2] * (2.0 * s).sin()
                                    + c[3] * (3.0 * s).cos()
                            })
                            .collect(),
                    )
                }
            };
            Init { mean, shift }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCertificate {
    /// TV upper bounds between consecutive tail iterates.
    pub successive_tv_upper: Vec<f64>,
    /// Largest TV upper bound over all pairs of tail iterates.
    pub pairwise_tv_upper_max: f64,
    /// Hellinger distances `√(1 − H)` from each tail iterate to the final measure.
    pub hellinger_to_final: Vec<f64>,
    /// Hellinger distances from each comparison point to the final measure.
    pub comparison_hellinger: Vec<f64>,
    /// False when the successive bounds fail to decrease.
    pub cauchy: bool,
}

fn hellinger_distance(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    Ok((1.0 - hellinger_gaussian(a, b)?).max(0.0).sqrt())
}

pub fn convergence_certificate(
    tail: &[GaussianMeasure],
    nu_final: &GaussianMeasure,
    comparison: &[GaussianMeasure],
) -> Result<ConvergenceCertificate> {
    if tail.len() < 3 {
        return Err(invalid(format!(
            "need at least 3 tail iterates, got {}",
            tail.len()
        )));
    }
    let successive = tail
        .windows(2)
        .map(|w| Ok(tv_bounds(&w[0], &w[1])?.upper))
        .collect::<Result<Vec<f64>>>()?;
    let mut pairwise = 0.0_f64;
    for i in 0..tail.len() {
        for j in (i + 1)..tail.len() {
            pairwise = pairwise.max(tv_bounds(&tail[i], &tail[j])?.upper);
        }
    }
    let cauchy = successive
        .windows(2)
        .all(|w| w[1] < w[0] || (w[1] == w[0] && w[0] <= 1e-12) || w[1] <= 1e-12);
    Ok(ConvergenceCertificate {
        successive_tv_upper: successive,
        pairwise_tv_upper_max: pairwise,
        hellinger_to_final: tail
            .iter()
            .map(|m| hellinger_distance(m, nu_final))
            .collect::<Result<_>>()?,
        comparison_hellinger: comparison
            .iter()
            .map(|m| hellinger_distance(m, nu_final))
            .collect::<Result<_>>()?,
        cauchy,
    })
}

/// Starting point of a mixture fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureInit {
    pub components: Vec<Init>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureMc {
    /// Draws per component for the fixed-sample surrogate that is optimised.
    pub fit_samples: usize,
    /// Draws for the independent final estimate.
    pub final_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MixtureSolution {
    pub mixture: MixtureMeasure,
    pub means: Vec<DVector<f64>>,
    pub shifts: Vec<PrecisionShift>,
    pub weights: Vec<f64>,
    /// Surrogate objective at the optimum (the sample set used for fitting).
    pub fit_objective: f64,
    /// Independent stratified estimate of the objective.
    pub estimate: McEstimate,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub trace: Vec<f64>,
    /// Components whose weight fell below `1e−8` (kept, not pruned).
    pub degenerate: Vec<usize>,
}

/// Stream offset separating fit draws from the final estimate's draws.
const FIT_STREAM: u64 = 1 << 32;

struct MixtureProblem<'a> {
    target: &'a TargetSpec,
    coords: ShiftCoords,
    draws: Vec<Vec<DVector<f64>>>,
    lam_inv: DVector<f64>,
}

struct MixtureState {
    means: Vec<DVector<f64>>,
    thetas: Vec<Vec<f64>>,
    logits: Vec<f64>,
    weights: Vec<f64>,
    precisions: Vec<DMatrix<f64>>,
    measures: Vec<GaussianMeasure>,
    total: f64,
    grad_means: Vec<DVector<f64>>,
    grad_thetas: Vec<Vec<f64>>,
    grad_logits: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl MixtureProblem<'_> {
    fn state(
        &self,
        means: Vec<DVector<f64>>,
        thetas: Vec<Vec<f64>>,
        logits: Vec<f64>,
    ) -> Result<MixtureState> {
        let k = means.len();
        let g = self.lam_inv.len();
        let weights = softmax(&logits);
        let precisions: Vec<DMatrix<f64>> =
            thetas.iter().map(|t| self.coords.precision(t)).collect();
        let measures = means
            .iter()
            .zip(&precisions)
            .map(|(m, p)| {
                GaussianMeasure::from_precision(self.target.basis().clone(), m.clone(), p.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let covs: Vec<DMatrix<f64>> = measures.iter().map(|m| m.covariance()).collect();
        let log_norms: Vec<f64> = measures
            .iter()
            .map(|m| {
                -0.5 * m.log_det_covariance()
                    + 0.5 * self.lam_inv.iter().map(|v| -v.ln()).sum::<f64>()
            })
            .collect();

        let mut total = 0.0;
        let mut grad_means = vec![DVector::zeros(g); k];
        let mut factor_grads = vec![DMatrix::zeros(g, g); k];
        let mut prec_grads = vec![DMatrix::zeros(g, g); k];
        let mut grad_weights = vec![0.0; k];

        for i in 0..k {
            let n = self.draws[i].len() as f64;
            let scale = weights[i] / n;
            let mut h_sum = 0.0;
            for z in &self.draws[i] {
                let x = &means[i] + measures[i].factor() * z;
                let mut log_r = Vec::with_capacity(k);
                let mut devs = Vec::with_capacity(k);
                for j in 0..k {
                    let d = &x - &means[j];
                    let pd = &precisions[j] * &d;
                    let quad_ref: f64 = (0..g).map(|a| x[a] * x[a] * self.lam_inv[a]).sum();
                    log_r.push(-0.5 * d.dot(&pd) + 0.5 * quad_ref + log_norms[j]);
                    devs.push((d, pd));
                }
                let terms: Vec<f64> = (0..k)
                    .map(|j| {
                        if weights[j] > 0.0 {
                            weights[j].ln() + log_r[j]
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let log_q = linalg::logsumexp(terms.iter().copied());
                let resp: Vec<f64> = terms.iter().map(|t| (t - log_q).exp()).collect();
                let h = log_q + self.target.phi(&x)?;
                h_sum += h;

                // ∇ₓ h through the sample location
                let mut grad_x = self.target.phi_gradient(&x)?;
                for a in 0..g {
                    grad_x[a] += self.lam_inv[a] * x[a];
                }
                for j in 0..k {
                    grad_x -= &devs[j].1 * resp[j];
                }
                grad_means[i] += &grad_x * scale;
                factor_grads[i] += &grad_x * z.transpose() * scale;

                // explicit dependence of log q on each component's parameters
                for j in 0..k {
                    if resp[j] == 0.0 {
                        continue;
                    }
                    let c = resp[j] * scale;
                    grad_means[j] += &devs[j].1 * c;
                    let outer = &devs[j].0 * devs[j].0.transpose();
                    prec_grads[j] += (&covs[j] - outer) * (0.5 * c);
                    if weights[j] > 0.0 {
                        grad_weights[j] += resp[j] / weights[j] * scale;
                    }
                }
            }
            let mean_h = h_sum / n;
            total += weights[i] * mean_h;
            grad_weights[i] += mean_h;
        }

        let mut grad_thetas = Vec::with_capacity(k);
        for i in 0..k {
            let pulled = linalg::cholesky_pullback(measures[i].factor(), &factor_grads[i]);
            let gp = &prec_grads[i] - &covs[i] * pulled * &covs[i];
            grad_thetas.push(self.coords.pull_gradient(&linalg::symmetrize(&gp)));
        }
        let avg: f64 = weights.iter().zip(&grad_weights).map(|(p, g)| p * g).sum();
        let grad_logits = weights
            .iter()
            .zip(&grad_weights)
            .map(|(p, g)| p * (g - avg))
            .collect();
        Ok(MixtureState {
            means,
            thetas,
            logits,
            weights,
            precisions,
            measures,
            total,
            grad_means,
            grad_thetas,
            grad_logits,
        })
    }
}

/// Fits an `n_components` mixture by descending a fixed-sample Monte Carlo
/// surrogate of the objective, then re-estimates the objective on fresh draws.
pub fn minimize_mixture(
    target: &TargetSpec,
    family: ShiftFamily,
    n_components: usize,
    init: &MixtureInit,
    opts: &SolveOptions,
    mc: &MixtureMc,
) -> Result<MixtureSolution> {
    opts.validate()?;
    if n_components == 0 {
        return Err(invalid("a mixture needs at least one component"));
    }
    if init.components.len() != n_components || init.weights.len() != n_components {
        return Err(invalid(format!(
            "expected {n_components} initial components and weights, got {} and {}",
            init.components.len(),
            init.weights.len()
        )));
    }
    if mc.fit_samples < 2 || mc.final_samples < 100 {
        return Err(invalid(
            "need ≥ 2 fit draws per component and ≥ 100 final draws",
        ));
    }
    if init.weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("initial mixture weights must be positive"));
    }
    let wsum: f64 = init.weights.iter().sum();
    let basis = target.basis();
    let g = basis.mode_count();
    let coords = ShiftCoords::new(family, basis)?;
    let mut thetas = Vec::with_capacity(n_components);
    for c in &init.components {
        if c.mean.len() != g {
            return Err(invalid("initial component mean has the wrong length"));
        }
        let theta = coords.from_shift(&c.shift)?;
        let margin = linalg::min_eigenvalue(&coords.precision(&theta));
        if !(margin >= opts.boundary_margin) {
            return Err(Error::NotPositive {
                margin,
                required: opts.boundary_margin,
            });
        }
        thetas.push(theta);
    }
    let draws: Vec<Vec<DVector<f64>>> = (0..n_components)
        .map(|i| {
            let mut rng = rng_for(mc.seed, FIT_STREAM + i as u64);
            (0..mc.fit_samples)
                .map(|_| standard_normals(&mut rng, g))
                .collect()
        })
        .collect();
    let problem = MixtureProblem {
        target,
        coords,
        draws,
        lam_inv: basis.eigenvalue_vector().map(|l| 1.0 / l),
    };
    let logits: Vec<f64> = init.weights.iter().map(|w| (w / wsum).ln()).collect();
    let means: Vec<DVector<f64>> = init.components.iter().map(|c| c.mean.clone()).collect();
    let mut state = problem.state(means, thetas, logits)?;
    let rule = opts.step_rule;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm;
    let free_norm = |st: &MixtureState| -> f64 {
        let mut sq = 0.0;
        for i in 0..n_components {
            if !opts.fix_mean {
                sq += st.grad_means[i].norm_squared();
            }
            if !opts.fix_shift {
                sq += st.grad_thetas[i].iter().map(|v| v * v).sum::<f64>();
            }
        }
        if n_components > 1 {
            sq += st.grad_logits.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    };

    loop {
        gnorm = free_norm(&state);
        trace.push(state.total);
        if gnorm <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }

        let mut mean_dirs = Vec::with_capacity(n_components);
        let mut theta_dirs = Vec::with_capacity(n_components);
        let mut slope = 0.0;
        let mut alpha = rule.initial_step;
        for i in 0..n_components {
            let p = state.weights[i].max(1e-12);
            let md = if opts.fix_mean {
                DVector::zeros(g)
            } else {
                -solve_spd(&(&state.precisions[i] * p), &state.grad_means[i])
            };
            let td: Vec<f64> = if opts.fix_shift {
                vec![0.0; state.thetas[i].len()]
            } else {
                let metric = problem.coords.fisher(&state.measures[i].covariance()) * p;
                (-solve_spd(&metric, &DVector::from_column_slice(&state.grad_thetas[i])))
                    .as_slice()
                    .to_vec()
            };
            slope += state.grad_means[i].dot(&md);
            slope += state.grad_thetas[i]
                .iter()
                .zip(&td)
                .map(|(a, b)| a * b)
                .sum::<f64>();
            alpha = alpha.min(boundary_step(
                &state.precisions[i],
                &problem.coords.combine(&td),
            ));
            mean_dirs.push(md);
            theta_dirs.push(td);
        }
        let logit_dir: Vec<f64> = if n_components > 1 {
            let p = &state.weights;
            let metric = DMatrix::from_fn(n_components, n_components, |a, b| {
                (if a == b { p[a] + 1e-6 } else { 0.0 }) - p[a] * p[b]
            });
            let d = -solve_spd(&metric, &DVector::from_column_slice(&state.grad_logits));
            slope += d.dot(&DVector::from_column_slice(&state.grad_logits));
            d.as_slice().to_vec()
        } else {
            vec![0.0]
        };
        if !(slope < 0.0) {
            break;
        }
        // below this the objective cannot certify decrease; fall back to the
        // gradient norm
        let flat_tol = 1e-14 * state.total.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..=rule.max_backtracks {
            let thetas: Vec<Vec<f64>> = state
                .thetas
                .iter()
                .zip(&theta_dirs)
                .map(|(t, d)| t.iter().zip(d).map(|(a, b)| a + alpha * b).collect())
                .collect();
            let admissible = thetas.iter().all(|t| {
                linalg::min_eigenvalue(&problem.coords.precision(t)) >= opts.boundary_margin
            });
            if admissible {
                let means = state
                    .means
                    .iter()
                    .zip(&mean_dirs)
                    .map(|(m, d)| m + d * alpha)
                    .collect();
                let logits = state
                    .logits
                    .iter()
                    .zip(&logit_dir)
                    .map(|(l, d)| l + alpha * d)
                    .collect();
                match problem.state(means, thetas, logits) {
                    Ok(trial) => {
                        let armijo =
                            trial.total <= state.total + rule.sufficient_decrease * alpha * slope;
                        let flat = (trial.total - state.total).abs() <= flat_tol
                            && free_norm(&trial) < gnorm;
                        if armijo || flat {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    Err(Error::NotPositive { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            alpha *= rule.shrink;
        }
        match accepted {
            Some(next) => state = next,
            None => break,
        }
        iterations += 1;
    }

    let mixture = MixtureMeasure::new(state.measures.clone(), state.weights.clone())?;
    let estimate = kl_mixture_mc(&mixture, target, mc.final_samples, mc.seed)?;
    let shifts = state
        .thetas
        .iter()
        .map(|t| problem.coords.to_shift(t))
        .collect();
    let degenerate = state
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w < 1e-8)
        .map(|(i, _)| i)
        .collect();
    Ok(MixtureSolution {
        mixture,
        means: state.means,
        shifts,
        weights: state.weights,
        fit_objective: state.total,
        estimate,
        iterations,
        converged,
        gradient_norm: gnorm,
        trace,
        degenerate,
    })
}

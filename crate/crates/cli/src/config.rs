//! Run configuration: JSON schema, scenario defaults, overrides and
//! precondition checks.
//!
//! Every section is optional in the file. Sections that the chosen scenario
//! uses are filled with defaults by [`RunConfig::resolve`]; sections it does
//! not use are rejected, so a resolved config lists exactly what a run reads.

use std::sync::Arc;

use kl_gauss::objective::{ExpectationMethod, Potential, ScalarPotential};
use kl_gauss::optimize::{random_inits, Init, SolveOptions, StepRule};
use kl_gauss::parameterization::{positivity_margin, ShiftFamily};
use kl_gauss::scenarios::{make_sequence_potential, SequenceFamily, SequenceKind};
use kl_gauss::{BasisKind, RegularizationSpec, SpectralBasis, TargetSpec};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DoubleWell,
    Approximate,
    Mixture,
    Interpolate,
    Diagnose,
    SequenceStudy,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::DoubleWell => "double_well",
            Scenario::Approximate => "approximate",
            Scenario::Mixture => "mixture",
            Scenario::Interpolate => "interpolate",
            Scenario::Diagnose => "diagnose",
            Scenario::SequenceStudy => "sequence_study",
        }
    }

    fn uses(self, section: Section) -> bool {
        use Section::*;
        let used: &[Section] = match self {
            Scenario::DoubleWell => &[Solver, DoubleWell],
            Scenario::Approximate => &[Basis, Target, Family, Regularization, Solver, Init],
            Scenario::Mixture => &[Basis, Target, Family, Solver, Mixture],
            Scenario::Interpolate => &[
                Basis,
                Target,
                Family,
                Regularization,
                Solver,
                Init,
                Interpolate,
            ],
            Scenario::Diagnose => &[
                Basis,
                Target,
                Family,
                Regularization,
                Solver,
                Init,
                Diagnose,
            ],
            Scenario::SequenceStudy => &[Basis, Regularization, Solver, SequenceStudy],
        };
        used.contains(&section)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Basis,
    Target,
    Family,
    Regularization,
    Solver,
    Init,
    DoubleWell,
    Mixture,
    Interpolate,
    Diagnose,
    SequenceStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, or the CSV path when it ends in `.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub double_well: Option<DoubleWellConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolate: Option<InterpolateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_study: Option<SequenceStudyConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    Bridge,
    Torus,
    Point,
}

/// `length` is the interval length (bridge) or circumference (torus); `s` the
/// torus smoothness; `variance` the point reference variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: BasisName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// A potential such as `double_well(0.05)` or `quartic(1, -0.5)+quadratic(2)`.
    pub potential: String,
    /// Optional weight `a(t_j)` per grid point multiplying the potential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    FullSymmetric,
    ConstantBeta,
    MultiplicationPotential,
    FiniteRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "one")]
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationName {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "one")]
    pub initial_step: f64,
    #[serde(default = "half")]
    pub shrink: f64,
    #[serde(default = "default_sufficient_decrease")]
    pub sufficient_decrease: f64,
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: usize,
    #[serde(default = "default_boundary_margin")]
    pub boundary_margin: f64,
    #[serde(default = "default_expectation")]
    pub expectation: ExpectationName,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

/// Starts for the optimiser: an explicit start when `beta` or `mean` is set,
/// followed by `random` random admissible starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "default_random_starts")]
    pub random: usize,
    #[serde(default = "one")]
    pub mean_scale: f64,
    #[serde(default = "default_shift_scale")]
    pub shift_scale: f64,
    /// Explicit start with `Γ = β·I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Mean coefficients of the explicit start (zero when omitted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    /// Parses `start:stop:step`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:stop:step, got `{text}`"));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number `{s}` in `{text}`"))
        };
        Ok(Self {
            start: num(parts[0])?,
            stop: num(parts[1])?,
            step: num(parts[2])?,
        })
    }

    /// Inclusive grid `start + i·step` up to `stop` (allowing for rounding).
    pub fn values(&self) -> Result<Vec<f64>, String> {
        if !(self.step > 0.0) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(format!(
                "grid step must be positive and bounds finite, got {self:?}"
            ));
        }
        if self.stop < self.start {
            return Err(format!(
                "grid stop {} is below start {}",
                self.stop, self.start
            ));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        if count > 1_000_000 {
            return Err(format!("grid has {count} points, more than 10⁶"));
        }
        Ok((0..count)
            .map(|i| self.start + i as f64 * self.step)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleWellConfig {
    #[serde(default = "default_eps_grid")]
    pub epsilon_grid: GridSpec,
    /// Temperatures at which the optimiser is checked against the closed form.
    #[serde(default = "default_fit_epsilons")]
    pub fit_epsilons: Vec<f64>,
    /// `(m, σ)` starts for those fits.
    #[serde(default = "default_dw_starts")]
    pub starts: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    #[serde(default = "two")]
    pub components: usize,
    /// Initial offset of each component along the first mode.
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
    /// Initial `Γ = β·I` of every component.
    #[serde(default = "default_mixture_beta")]
    pub beta: f64,
    #[serde(default = "default_fit_samples")]
    pub fit_samples: usize,
    #[serde(default = "default_final_samples")]
    pub final_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateConfig {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Spread of the random endpoints around the reference.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    /// Convexity constant; derived from the potential's curvature when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Random starts for the uniqueness check (0 to skip it).
    #[serde(default = "default_uniqueness_starts")]
    pub uniqueness_starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Importance samples for the precision check.
    #[serde(default = "default_importance_samples")]
    pub importance_samples: usize,
    /// Reference draws for the `log Z` estimate.
    #[serde(default = "default_normalizer_samples")]
    pub normalizer_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceName {
    Mollifier,
    Oscillation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceStudyConfig {
    #[serde(default = "default_sequence")]
    pub family: SequenceName,
    #[serde(default = "half")]
    pub amplitude: f64,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_refit_modes")]
    pub refit_modes: usize,
    #[serde(default = "default_refit_starts")]
    pub refit_starts: usize,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> usize {
    2
}
fn default_max_iterations() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_sufficient_decrease() -> f64 {
    1e-4
}
fn default_max_backtracks() -> usize {
    60
}
fn default_boundary_margin() -> f64 {
    1e-8
}
fn default_expectation() -> ExpectationName {
    ExpectationName::Quadrature
}
fn default_quadrature_order() -> usize {
    kl_gauss::objective::DEFAULT_QUADRATURE_ORDER
}
fn default_mc_samples() -> usize {
    4096
}
fn default_random_starts() -> usize {
    4
}
fn default_shift_scale() -> f64 {
    0.2
}
fn default_eps_grid() -> GridSpec {
    GridSpec {
        start: 0.02,
        stop: 0.2,
        step: 0.002,
    }
}
fn default_fit_epsilons() -> Vec<f64> {
    vec![0.05]
}
fn default_dw_starts() -> Vec<[f64; 2]> {
    vec![[-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]]
}
fn default_offsets() -> Vec<f64> {
    vec![-1.0, 1.0]
}
fn default_mixture_beta() -> f64 {
    // σ = 0.3 against a unit reference
    1.0 / 0.09 - 1.0
}
fn default_fit_samples() -> usize {
    2000
}
fn default_final_samples() -> usize {
    1_000_000
}
fn default_pairs() -> usize {
    20
}
fn default_t_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}
fn default_uniqueness_starts() -> usize {
    10
}
fn default_importance_samples() -> usize {
    20_000
}
fn default_normalizer_samples() -> usize {
    100_000
}
fn default_sequence() -> SequenceName {
    SequenceName::Mollifier
}
fn default_n_list() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_refit_modes() -> usize {
    16
}
fn default_refit_starts() -> usize {
    5
}

/// Parses `"{}"`-style defaults through serde so field defaults live in one place.
fn defaults<T: for<'de> Deserialize<'de>>() -> T {
    serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
}

impl Default for SolverConfig {
    fn default() -> Self {
        defaults()
    }
}

impl Default for InitConfig {
    fn default() -> Self {
        defaults()
    }
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        defaults()
    }
}

fn scenario_basis(scenario: Scenario) -> BasisConfig {
    let (kind, length, modes) = match scenario {
        Scenario::Mixture => (BasisName::Point, None, None),
        Scenario::SequenceStudy => (BasisName::Bridge, Some(2.0), Some(64)),
        Scenario::Interpolate => (BasisName::Bridge, Some(2.0), Some(8)),
        _ => (BasisName::Bridge, Some(2.0), Some(16)),
    };
    BasisConfig {
        kind,
        length,
        modes,
        grid: None,
        s: None,
        variance: None,
    }
}

fn scenario_target(scenario: Scenario) -> TargetConfig {
    let potential = match scenario {
        Scenario::Mixture => "double_well(0.05)+quadratic(-1)",
        _ => "double_well(0.5)",
    };
    TargetConfig {
        potential: potential.into(),
        profile: None,
    }
}

fn scenario_family(scenario: Scenario) -> FamilyConfig {
    let kind = match scenario {
        Scenario::Mixture => FamilyName::ConstantBeta,
        Scenario::Interpolate => FamilyName::FullSymmetric,
        _ => FamilyName::MultiplicationPotential,
    };
    FamilyConfig { kind, rank: None }
}

/// Sets `path` (dot separated) in a JSON object to `value`, creating objects
/// on the way. The value is read as JSON when it parses, as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not key=value"))?;
    let keys: Vec<&str> = path.split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override key `{path}` has an empty component"));
    }
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => {
                return Err(format!(
                    "override `{path}`: `{}` is not an object",
                    keys[..i].join(".")
                ))
            }
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("keys is non-empty")
}

/// Before `--set` overrides are applied, a section they touch that the file
/// omits is filled with the scenario default, so `--set basis.modes=32`
/// refines the default basis rather than replacing it.
pub fn seed_sections(root: &mut Value, scenario: Scenario, overrides: &[String]) {
    let Value::Object(map) = root else { return };
    for o in overrides {
        let key = o.split(['.', '=']).next().unwrap_or("").trim();
        if map.contains_key(key) {
            continue;
        }
        let section = match key {
            "basis" => serde_json::to_value(scenario_basis(scenario)),
            "target" => serde_json::to_value(scenario_target(scenario)),
            "family" => serde_json::to_value(scenario_family(scenario)),
            _ => continue,
        };
        if let Ok(v) = section {
            map.insert(key.to_string(), v);
        }
    }
}

/// Deserialises a config, reporting the dotted path of the offending field.
pub fn parse_value(value: Value) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        if path == "." {
            CliError::config(inner)
        } else {
            CliError::config(format!("{path}: {inner}"))
        }
    })
}

pub fn read_value(text: &str, origin: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::config(format!("{origin}: {e}")))
}

impl RunConfig {
    /// Checks the scenario against the subcommand, fills defaults of the
    /// sections it uses and rejects the others.
    pub fn resolve(mut self, scenario: Scenario) -> Result<Self, CliError> {
        if let Some(s) = self.scenario {
            if s != scenario {
                return Err(CliError::config(format!(
                    "scenario: config is for `{}` but the command runs `{}`",
                    s.name(),
                    scenario.name()
                )));
            }
        }
        self.scenario = Some(scenario);
        let mut errors = Vec::new();
        macro_rules! section {
            ($field:ident, $tag:ident, $default:expr) => {
                if scenario.uses(Section::$tag) {
                    if self.$field.is_none() {
                        self.$field = Some($default);
                    }
                } else if self.$field.is_some() {
                    errors.push(format!(
                        "{}: not used by the {} scenario",
                        stringify!($field),
                        scenario.name()
                    ));
                }
            };
        }
        section!(basis, Basis, scenario_basis(scenario));
        section!(target, Target, scenario_target(scenario));
        section!(family, Family, scenario_family(scenario));
        section!(
            regularization,
            Regularization,
            if scenario == Scenario::SequenceStudy {
                RegularizationConfig {
                    delta: 1e-2,
                    r: 1.0,
                }
            } else {
                RegularizationConfig::default()
            }
        );
        section!(solver, Solver, SolverConfig::default());
        section!(init, Init, InitConfig::default());
        section!(double_well, DoubleWell, defaults());
        section!(mixture, Mixture, defaults());
        section!(interpolate, Interpolate, defaults());
        section!(diagnose, Diagnose, defaults());
        section!(sequence_study, SequenceStudy, defaults());
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        if let Some(b) = self.basis.as_mut() {
            fill_basis(b);
        }
        if let Some(f) = self.family.as_mut() {
            if f.kind == FamilyName::FiniteRank && f.rank.is_none() {
                f.rank = Some(
                    self.basis
                        .as_ref()
                        .and_then(|b| b.modes)
                        .unwrap_or(1)
                        .min(4),
                );
            }
        }
        if self.out.is_none() {
            self.out = Some(format!("kl-gauss-{}", scenario.name().replace('_', "-")));
        }
        Ok(self)
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario.expect("resolved config has a scenario")
    }
}

fn fill_basis(b: &mut BasisConfig) {
    match b.kind {
        BasisName::Bridge | BasisName::Torus => {
            b.length.get_or_insert(1.0);
            let modes = *b.modes.get_or_insert(16);
            b.grid.get_or_insert(if b.kind == BasisName::Bridge {
                8 * modes + 1
            } else {
                8 * modes
            });
            if b.kind == BasisName::Torus {
                b.s.get_or_insert(1.0);
            }
        }
        BasisName::Point => {
            b.variance.get_or_insert(1.0);
        }
    }
}

/// Everything a run needs, built from a resolved config.
pub struct Prepared {
    pub basis: Option<Arc<SpectralBasis>>,
    pub target: Option<TargetSpec>,
    pub family: Option<ShiftFamily>,
    pub reg: RegularizationSpec,
    pub solve: SolveOptions,
    pub inits: Vec<Init>,
    pub eps_grid: Vec<f64>,
}

/// Collects line-item problems, split into schema problems (exit 2) and
/// numeric preconditions such as positivity or resolution (exit 3).
#[derive(Default)]
struct Problems {
    config: Vec<String>,
    numeric: Vec<String>,
}

impl Problems {
    fn config(&mut self, msg: impl Into<String>) {
        self.config.push(msg.into());
    }

    fn from_core(&mut self, field: &str, e: kl_gauss::Error) {
        use kl_gauss::Error as E;
        match e {
            E::InvalidArgument(_) | E::NotTraceClass { .. } | E::UnsupportedMethod(_) => {
                self.config.push(format!("{field}: {e}"))
            }
            _ => self.numeric.push(format!("{field}: {e}")),
        }
    }
}

fn build_basis(b: &BasisConfig, p: &mut Problems) -> Option<Arc<SpectralBasis>> {
    let length = b.length.unwrap_or(1.0);
    let modes = b.modes.unwrap_or(0);
    let grid = b.grid.unwrap_or(0);
    let misplaced = |p: &mut Problems, name: &str, set: bool| {
        if set {
            p.config(format!(
                "basis.{name}: does not apply to a {:?} basis",
                b.kind
            ));
        }
    };
    match b.kind {
        BasisName::Bridge => misplaced(p, "s", b.s.is_some()),
        BasisName::Torus => {}
        BasisName::Point => {
            misplaced(p, "length", b.length.is_some());
            misplaced(p, "modes", b.modes.is_some());
            misplaced(p, "grid", b.grid.is_some());
            misplaced(p, "s", b.s.is_some());
        }
    }
    if b.kind != BasisName::Point {
        misplaced(p, "variance", b.variance.is_some());
        if modes == 0 {
            p.config("basis.modes: γ must be at least 1");
            return None;
        }
    }
    let built = match b.kind {
        BasisName::Bridge => SpectralBasis::brownian_bridge(length, modes, grid),
        BasisName::Torus => {
            SpectralBasis::torus_fractional(length, b.s.unwrap_or(1.0), modes, grid)
        }
        BasisName::Point => SpectralBasis::point(b.variance.unwrap_or(1.0)),
    };
    match built {
        Ok(basis) => Some(Arc::new(basis)),
        Err(e) => {
            p.from_core("basis", e);
            None
        }
    }
}

fn build_family(f: &FamilyConfig, basis: &SpectralBasis, p: &mut Problems) -> Option<ShiftFamily> {
    if f.kind != FamilyName::FiniteRank && f.rank.is_some() {
        p.config("family.rank: only applies to finite_rank");
    }
    Some(match f.kind {
        FamilyName::FullSymmetric => ShiftFamily::FullSymmetric,
        FamilyName::ConstantBeta => ShiftFamily::ConstantBeta,
        FamilyName::MultiplicationPotential => ShiftFamily::MultiplicationPotential,
        FamilyName::FiniteRank => {
            let rank = f.rank.unwrap_or(1);
            if rank == 0 || rank > basis.mode_count() {
                p.config(format!(
                    "family.rank: {rank} outside 1..={}",
                    basis.mode_count()
                ));
                return None;
            }
            ShiftFamily::FiniteRank { rank }
        }
    })
}

fn build_solver(s: &SolverConfig, seed: u64, p: &mut Problems) -> SolveOptions {
    let method = match s.expectation {
        ExpectationName::Quadrature => {
            if s.quadrature_order == 0 || s.quadrature_order > 200 {
                p.config(format!(
                    "solver.quadrature_order: {} outside 1..=200",
                    s.quadrature_order
                ));
            }
            ExpectationMethod::Quadrature {
                order: s.quadrature_order,
            }
        }
        ExpectationName::MonteCarlo => {
            if s.mc_samples < 2 {
                p.config("solver.mc_samples: at least 2 samples required");
            }
            ExpectationMethod::MonteCarlo {
                samples: s.mc_samples,
                seed,
            }
        }
    };
    let opts = SolveOptions {
        max_iterations: s.max_iterations,
        gradient_tolerance: s.gradient_tolerance,
        step_rule: StepRule {
            initial_step: s.initial_step,
            shrink: s.shrink,
            sufficient_decrease: s.sufficient_decrease,
            max_backtracks: s.max_backtracks,
        },
        boundary_margin: s.boundary_margin,
        seed,
        method,
        ..SolveOptions::default()
    };
    if let Err(e) = opts.validate() {
        p.config(format!("solver: {e}"));
    }
    opts
}

/// `(−1/λ₁, ∞)`, the `β` for which `C₀⁻¹ + β·I` stays positive.
fn beta_interval(basis: &SpectralBasis) -> f64 {
    -1.0 / basis.eigenvalues()[0]
}

fn build_inits(
    init: &InitConfig,
    basis: &Arc<SpectralBasis>,
    family: ShiftFamily,
    seed: u64,
    p: &mut Problems,
) -> Vec<Init> {
    let g = basis.mode_count();
    let mut inits = Vec::new();
    if init.beta.is_some() || init.mean.is_some() {
        let beta = init.beta.unwrap_or(0.0);
        let lower = beta_interval(basis);
        if !beta.is_finite() {
            p.config("init.beta: must be finite");
        } else if beta <= lower {
            p.config(format!(
                "init.beta: β = {beta} is outside the admissible interval ({lower:.6}, ∞) \
                 given by −1/λ₁ with λ₁ = {:.6}",
                basis.eigenvalues()[0]
            ));
        }
        let mean = match &init.mean {
            Some(m) if m.len() != g => {
                p.config(format!("init.mean: {} coefficients for γ = {g}", m.len()));
                DVector::zeros(g)
            }
            Some(m) => DVector::from_column_slice(m),
            None => DVector::zeros(g),
        };
        let shift = family.constant(beta, basis);
        if beta.is_finite() && beta > lower {
            match positivity_margin(&shift, basis) {
                Ok(m) if m < 1e-8 => p.numeric.push(format!(
                    "init: positivity margin {m:e} of the explicit start is below 1e-8"
                )),
                Ok(_) => {}
                Err(e) => p.from_core("init", e),
            }
        }
        inits.push(Init { mean, shift });
    }
    if !(init.mean_scale >= 0.0 && init.mean_scale.is_finite()) {
        p.config("init.mean_scale: must be non-negative");
    }
    if !(init.shift_scale >= 0.0 && init.shift_scale < 1.0) {
        p.config("init.shift_scale: must lie in [0, 1) to keep random starts admissible");
    }
    inits.extend(random_inits(
        basis,
        family,
        init.random,
        init.mean_scale,
        init.shift_scale,
        seed,
    ));
    if inits.is_empty() {
        p.config("init: no starts (set init.random ≥ 1, init.beta or init.mean)");
    }
    inits
}

fn build_target(
    t: &TargetConfig,
    basis: &Arc<SpectralBasis>,
    p: &mut Problems,
) -> Option<TargetSpec> {
    let phi = match ScalarPotential::parse(&t.potential) {
        Ok(phi) => phi,
        Err(e) => {
            p.from_core("target.potential", e);
            return None;
        }
    };
    if let Some(a) = &t.profile {
        if a.len() != basis.grid_size() {
            p.config(format!(
                "target.profile: {} values for a grid of {}",
                a.len(),
                basis.grid_size()
            ));
            return None;
        }
        if a.iter().any(|v| !v.is_finite()) {
            p.config("target.profile: values must be finite");
            return None;
        }
    }
    Some(TargetSpec::new(
        basis.clone(),
        Potential::SeparablePointwise {
            phi,
            profile: t.profile.clone(),
        },
    ))
}

impl RunConfig {
    /// Builds the run inputs, checking every precondition that can be
    /// checked without running.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let scenario = self.scenario();
        let mut p = Problems::default();
        let basis = self.basis.as_ref().and_then(|b| build_basis(b, &mut p));
        let solve = build_solver(self.solver.as_ref().expect("resolved"), self.seed, &mut p);
        let reg = match &self.regularization {
            Some(r) => RegularizationSpec::new(r.delta, r.r).unwrap_or_else(|e| {
                p.config(format!("regularization: {e}"));
                RegularizationSpec::none()
            }),
            None => RegularizationSpec::none(),
        };
        let mut target = None;
        let mut family = None;
        let mut inits = Vec::new();
        if let Some(basis) = &basis {
            if let Some(t) = &self.target {
                target = build_target(t, basis, &mut p);
            }
            if let Some(f) = &self.family {
                family = build_family(f, basis, &mut p);
            }
            if let (Some(i), Some(f)) = (&self.init, family) {
                inits = build_inits(i, basis, f, self.seed, &mut p);
            }
            if reg.delta > 0.0
                && family.is_some_and(|f| f != ShiftFamily::MultiplicationPotential)
                && scenario != Scenario::SequenceStudy
            {
                p.config(
                    "regularization.delta: the penalty only applies to multiplication_potential",
                );
            }
        }
        let mut eps_grid = Vec::new();
        match scenario {
            Scenario::DoubleWell => {
                let dw = self.double_well.as_ref().expect("resolved");
                match dw.epsilon_grid.values() {
                    Ok(v) if v[0] <= 0.0 => {
                        p.config("double_well.epsilon_grid: ε must be positive")
                    }
                    Ok(v) => eps_grid = v,
                    Err(e) => p.config(format!("double_well.epsilon_grid: {e}")),
                }
                if dw.fit_epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    p.config("double_well.fit_epsilons: ε must be positive");
                }
                if !dw.fit_epsilons.is_empty() && dw.starts.is_empty() {
                    p.config("double_well.starts: at least one start is needed for the fits");
                }
                if dw
                    .starts
                    .iter()
                    .any(|s| !(s[1] > 0.0 && s[1].is_finite() && s[0].is_finite()))
                {
                    p.config("double_well.starts: each start is [m, σ] with σ > 0");
                }
            }
            Scenario::Mixture => {
                let m = self.mixture.as_ref().expect("resolved");
                if m.components == 0 {
                    p.config("mixture.components: at least one component");
                }
                if m.offsets.len() != m.components {
                    p.config(format!(
                        "mixture.offsets: {} offsets for {} components",
                        m.offsets.len(),
                        m.components
                    ));
                }
                if m.fit_samples < 2 {
                    p.config("mixture.fit_samples: at least 2");
                }
                if m.final_samples < 100 {
                    p.config("mixture.final_samples: at least 100");
                }
                if let Some(basis) = &basis {
                    let lower = beta_interval(basis);
                    if !(m.beta > lower) {
                        p.config(format!(
                            "mixture.beta: β = {} is outside the admissible interval ({lower:.6}, ∞)",
                            m.beta
                        ));
                    }
                }
            }
            Scenario::Interpolate => {
                let c = self.interpolate.as_ref().expect("resolved");
                if c.pairs == 0 {
                    p.config("interpolate.pairs: at least one pair");
                }
                if c.t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    p.config("interpolate.t_grid: values must lie in [0, 1]");
                }
                if !(c.scale >= 0.0 && c.scale.is_finite()) {
                    p.config("interpolate.scale: must be non-negative");
                }
                if c.kappa.is_some_and(|k| !k.is_finite()) {
                    p.config("interpolate.kappa: must be finite");
                }
            }
            Scenario::Diagnose => {
                let d = self.diagnose.as_ref().expect("resolved");
                if d.importance_samples < 2 {
                    p.config("diagnose.importance_samples: at least 2");
                }
                if d.normalizer_samples < 2 {
                    p.config("diagnose.normalizer_samples: at least 2");
                }
            }
            Scenario::SequenceStudy => {
                let s = self.sequence_study.as_ref().expect("resolved");
                if s.n_list.is_empty() {
                    p.config("sequence_study.n_list: at least one n");
                }
                if s.refit_starts == 0 {
                    p.config("sequence_study.refit_starts: at least one start");
                }
                if let Some(basis) = &basis {
                    if basis.kind() != BasisKind::DirichletBridge {
                        p.config("basis.kind: sequence studies run on the bridge basis");
                    } else {
                        if s.refit_modes == 0 || s.refit_modes > basis.mode_count() {
                            p.config(format!(
                                "sequence_study.refit_modes: {} outside 1..={}",
                                s.refit_modes,
                                basis.mode_count()
                            ));
                        }
                        let kind = self.sequence_kind();
                        for &n in &s.n_list {
                            if let Err(e) =
                                make_sequence_potential(SequenceFamily { kind, n }, basis)
                            {
                                p.from_core(&format!("sequence_study.n_list[n = {n}]"), e);
                            }
                        }
                    }
                }
            }
            Scenario::Approximate => {}
        }
        if !p.config.is_empty() {
            let mut all = p.config;
            all.extend(p.numeric);
            return Err(CliError::Config(all));
        }
        if !p.numeric.is_empty() {
            return Err(CliError::Numeric(p.numeric.join("; ")));
        }
        Ok(Prepared {
            basis,
            target,
            family,
            reg,
            solve,
            inits,
            eps_grid,
        })
    }

    pub fn sequence_kind(&self) -> SequenceKind {
        let s = self.sequence_study.as_ref().expect("resolved");
        match s.family {
            SequenceName::Mollifier => SequenceKind::Mollifier,
            SequenceName::Oscillation => SequenceKind::Oscillation {
                amplitude: s.amplitude,
            },
        }
    }
}

//! TOML experiment configuration.
//!
//! ```toml
//! seed = 1
//! output = "out"
//!
//! [contract]
//! n_exercise = 15
//! q_max = 6
//! Q_min = 50
//! Q_max = 80
//! strike = 20.0
//! constraint = "firm"          # or "pen", with penalty_A / penalty_B
//! payoff = "fixed_strike"      # "indexed_strike", "call"
//!
//! [model]
//! alpha = [0.4]                # 1/years
//! sigma = [0.7]                # 1/sqrt(years)
//! f0 = 20.0                    # or one value per exercise date t_0..t_n
//!
//! [solver]
//! m = 1
//! paths = 100000
//!
//! [engine]
//! engine = "grid"
//! bang_bang = "off"
//!
//! [sweep]
//! f0_min = 5.0
//! f0_max = 35.0
//! f0_step = 2.5
//!
//! [[scenarios]]
//! name = "sigma_0.2"
//! sigma = [0.2]
//! ```
//!
//! Every scenario is resolved into a validated [`ModelSpec`] and
//! [`ContractSpec`] at parse time.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bdpp_solver::{ControlSet, EngineKind, GridOptions, Integration, LsmcOptions, TransitionKind};
use crate::error::{Result, SwingError};
use crate::grid::UniformGrid;
use crate::market_models::{uniform_times, InitialCurve, ModelSpec, ScalarField};
use crate::swing_contract::{Constraint, ContractSpec, IndexWindow, PayoffKind};

/// Upper end of the admissible truncation parameters, `1/(2+√2)`.
pub const LAMBDA_MAX: f64 = 0.292_893_218_813_452_5;
pub const DEFAULT_LAMBDA: f64 = 0.25;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    output: Option<PathBuf>,
    contract: RawContract,
    model: RawModel,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    engine: RawEngine,
    #[serde(default)]
    sweep: RawSweep,
    scenarios: Option<Vec<RawScenario>>,
    #[serde(default)]
    verify: VerifyConfig,
    #[serde(default)]
    euler_gap: EulerGapConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContract {
    n_exercise: usize,
    /// Years; defaults to daily exercise, `n / 365`.
    maturity: Option<f64>,
    q_max: i64,
    #[serde(rename = "Q_min")]
    volume_min: i64,
    #[serde(rename = "Q_max")]
    volume_max: i64,
    strike: f64,
    #[serde(default = "firm")]
    constraint: Constraint,
    #[serde(rename = "penalty_A", default)]
    penalty_a: f64,
    #[serde(rename = "penalty_B", default)]
    penalty_b: f64,
    #[serde(default = "fixed_strike")]
    payoff: PayoffKind,
    index_window: Option<WindowKey>,
}

fn firm() -> Constraint {
    Constraint::Firm
}

fn fixed_strike() -> PayoffKind {
    PayoffKind::FixedStrike
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum WindowKey {
    Lookback(usize),
    Name(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    factor_count: Option<usize>,
    alpha: OneOrMany,
    sigma: OneOrMany,
    #[serde(default)]
    rho: f64,
    f0: OneOrMany,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    m: usize,
    /// Training paths of the regression engine.
    paths: usize,
    /// Paths of the forward policy simulation.
    pricing_paths: Option<usize>,
    seed: Option<u64>,
    truncation_lambda: Option<f64>,
    quad_nodes: usize,
    integration: Integration,
    transition: TransitionKind,
    x_grid: Option<RawGrid>,
    x_points: usize,
    width_stds: f64,
}

impl Default for RawSolver {
    fn default() -> Self {
        let g = GridOptions::default();
        RawSolver {
            m: g.m,
            paths: LsmcOptions::default().paths,
            pricing_paths: None,
            seed: None,
            truncation_lambda: None,
            quad_nodes: g.quad_nodes,
            integration: g.integration,
            transition: g.transition,
            x_grid: None,
            x_points: g.x_points,
            width_stds: g.width_stds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl RawGrid {
    fn build(&self) -> Result<UniformGrid> {
        UniformGrid::new(self.min, self.max, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BangBangMode {
    Off,
    On,
    /// Solve with full enumeration and also report the endpoint-control
    /// discrepancy.
    Verify,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawEngine {
    engine: EngineKind,
    basis_degree: usize,
    q_step: i64,
    bang_bang: BangBangMode,
}

impl Default for RawEngine {
    fn default() -> Self {
        RawEngine { engine: EngineKind::Grid, basis_degree: 3, q_step: 1, bang_bang: BangBangMode::Off }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    f0_min: f64,
    f0_max: f64,
    f0_step: f64,
}

impl Default for RawSweep {
    fn default() -> Self {
        RawSweep { f0_min: 5.0, f0_max: 35.0, f0_step: 2.5 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    factor_count: Option<usize>,
    alpha: Option<OneOrMany>,
    sigma: Option<OneOrMany>,
    rho: Option<f64>,
    strike: Option<f64>,
    constraint: Option<Constraint>,
    #[serde(rename = "penalty_A")]
    penalty_a: Option<f64>,
    #[serde(rename = "penalty_B")]
    penalty_b: Option<f64>,
    payoff: Option<PayoffKind>,
}

/// A scalar volatility field `σ(t, x)` described in the config.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `c x`.
    Linear { c: f64 },
    /// `σ̃ e^{-α(T - t)} x`: the spot of a one-factor model.
    Forward { sigma: f64, alpha: f64, maturity: f64 },
    /// `c √|x|`.
    SqrtAbs { c: f64 },
    /// `c (2 + cos(w x))`.
    Cosine { c: f64, w: f64 },
}

impl FieldSpec {
    pub fn field(&self) -> ScalarField {
        match *self {
            FieldSpec::Linear { c } => ScalarField::linear(c),
            FieldSpec::Forward { sigma, alpha, maturity } => {
                ScalarField::new(move |t, x| sigma * (-alpha * (maturity - t)).exp() * x)
            }
            FieldSpec::SqrtAbs { c } => ScalarField::new(move |_, x| c * x.abs().sqrt()),
            FieldSpec::Cosine { c, w } => ScalarField::new(move |_, x| c * (2.0 + (w * x).cos())),
        }
    }

    /// `sup_t [σ(t, ·)]_Lip`, when finite.
    pub fn lipschitz(&self) -> Option<f64> {
        match *self {
            FieldSpec::Linear { c } => Some(c.abs()),
            FieldSpec::Forward { sigma, .. } => Some(sigma.abs()),
            FieldSpec::SqrtAbs { c } => (c == 0.0).then_some(0.0),
            FieldSpec::Cosine { c, w } => Some((c * w).abs()),
        }
    }

    /// Time at which the field is largest in absolute value.
    pub fn peak_time(&self) -> f64 {
        match *self {
            FieldSpec::Forward { maturity, .. } => maturity,
            _ => 0.0,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            FieldSpec::Linear { c } | FieldSpec::SqrtAbs { c } => c.is_finite(),
            FieldSpec::Forward { sigma, alpha, maturity } => {
                sigma.is_finite() && alpha > 0.0 && alpha.is_finite() && maturity > 0.0 && maturity.is_finite()
            }
            FieldSpec::Cosine { c, w } => c.is_finite() && w.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SwingError::config(format!("{what}: invalid field parameters {self:?}")))
        }
    }
}

/// Settings of the verification suite.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Field whose `⪯`-convexity is checked, and the smaller side of the
    /// domination pair.
    pub field: FieldSpec,
    /// Larger side of the domination pair.
    pub dominating: FieldSpec,
    /// Price-state grid for the domination and Lipschitz checks.
    pub price_grid: RawGrid,
    /// Grid on which field convexity is checked.
    pub field_grid: RawGrid,
    /// Initial spot of the price-state checks.
    pub x0: f64,
    pub stein_x: f64,
    pub stein_h: f64,
    pub refinement_ms: Vec<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let maturity = 15.0 / 365.0;
        VerifyConfig {
            field: FieldSpec::Forward { sigma: 0.2, alpha: 0.4, maturity },
            dominating: FieldSpec::Forward { sigma: 0.7, alpha: 0.4, maturity },
            price_grid: RawGrid { min: 0.0, max: 60.0, points: 301 },
            field_grid: RawGrid { min: -3.0, max: 3.0, points: 601 },
            x0: 20.0,
            stein_x: 1.0,
            stein_h: 0.01,
            refinement_ms: vec![1, 2, 4, 8, 16],
        }
    }
}

/// Settings of the truncated-versus-plain Euler study.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EulerGapConfig {
    pub field: FieldSpec,
    pub n: usize,
    pub maturity: f64,
    pub ms: Vec<usize>,
    /// Starting points are `points` equally spaced nodes of `[x_min, x_max]`.
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    /// Moment order of the gap.
    pub u: f64,
    pub paths: usize,
}

impl Default for EulerGapConfig {
    fn default() -> Self {
        EulerGapConfig {
            field: FieldSpec::Forward { sigma: 0.7, alpha: 0.4, maturity: 1.0 },
            n: 4,
            maturity: 1.0,
            ms: vec![2, 4, 8, 16],
            x_min: -3.0,
            x_max: 3.0,
            points: 13,
            u: 2.0,
            paths: 20_000,
        }
    }
}

impl EulerGapConfig {
    pub fn starts(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.x_min];
        }
        let step = (self.x_max - self.x_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.x_min + step * i as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        self.field.validate("euler_gap.field")?;
        if self.n == 0 || self.points == 0 || self.paths == 0 || self.ms.is_empty() || self.ms.contains(&0) {
            return Err(SwingError::config("euler_gap: n, points, paths and every m must be positive"));
        }
        if !(self.maturity > 0.0) || !(self.x_min <= self.x_max) || !(self.u >= 1.0) {
            return Err(SwingError::config("euler_gap: need maturity > 0, x_min <= x_max and u >= 1"));
        }
        if self.field.lipschitz().is_none() {
            return Err(SwingError::config("euler_gap: the field must be Lipschitz"));
        }
        Ok(())
    }
}

/// Validated solver and engine settings.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub engine: EngineKind,
    pub bang_bang: BangBangMode,
    pub grid: GridOptions,
    pub lsmc: LsmcOptions,
    pub pricing_paths: usize,
    pub truncation_lambda: f64,
}

impl SolverConfig {
    pub fn controls(&self) -> ControlSet {
        match self.bang_bang {
            BangBangMode::On => ControlSet::BangBang,
            BangBangMode::Off | BangBangMode::Verify => ControlSet::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub f0_min: f64,
    pub f0_max: f64,
    pub f0_step: f64,
}

impl SweepRange {
    pub fn new(f0_min: f64, f0_max: f64, f0_step: f64) -> Result<Self> {
        if !(f0_min.is_finite() && f0_max.is_finite() && f0_step.is_finite()) {
            return Err(SwingError::config("sweep bounds must be finite"));
        }
        if !(f0_step > 0.0) || f0_max < f0_min {
            return Err(SwingError::config(format!(
                "empty sweep: need f0_step > 0 and f0_min <= f0_max, got [{f0_min}, {f0_max}] step {f0_step}"
            )));
        }
        if !(f0_min > 0.0) {
            return Err(SwingError::config(format!("forward prices must be > 0, got f0_min = {f0_min}")));
        }
        Ok(SweepRange { f0_min, f0_max, f0_step })
    }

    /// `floor((f0_max - f0_min) / f0_step) + 1`.
    pub fn len(&self) -> usize {
        ((self.f0_max - self.f0_min) / self.f0_step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.f0_min + self.f0_step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub contract: ContractSpec,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub solver: SolverConfig,
    pub sweep: SweepRange,
    pub scenarios: Vec<Scenario>,
    pub verify: VerifyConfig,
    pub euler_gap: EulerGapConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| SwingError::config(e.to_string()))?;
        resolve(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SwingError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| SwingError::config(format!("no scenario named `{name}`")))
    }

    /// Keeps only the named scenario.
    pub fn restrict_to(&mut self, name: &str) -> Result<()> {
        let s = self.scenario(name)?.clone();
        self.scenarios = vec![s];
        Ok(())
    }

    /// Sets the seed of both engines.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.solver.lsmc.seed = seed;
    }

    /// Switches engine and re-checks that every scenario supports it.
    pub fn set_engine(&mut self, engine: EngineKind) -> Result<()> {
        self.solver.engine = engine;
        check_engine(&self.solver, &self.scenarios)
    }
}

fn check_engine(solver: &SolverConfig, scenarios: &[Scenario]) -> Result<()> {
    match solver.engine {
        EngineKind::Grid => {
            for s in scenarios {
                if s.model.factor_count() != 1 {
                    return Err(SwingError::config(format!(
                        "scenario `{}`: the grid engine needs a one-factor model",
                        s.name
                    )));
                }
                if s.contract.payoff == PayoffKind::IndexedStrike {
                    return Err(SwingError::config(format!(
                        "scenario `{}`: the indexed strike needs the lsmc engine",
                        s.name
                    )));
                }
            }
        }
        EngineKind::Lsmc => {
            if solver.bang_bang == BangBangMode::Verify {
                return Err(SwingError::config("bang_bang = \"verify\" needs the grid engine"));
            }
        }
    }
    Ok(())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) && !name.starts_with('.')
}

fn build_model(
    factor_count: Option<usize>,
    alpha: &OneOrMany,
    sigma: &OneOrMany,
    rho: f64,
    f0: &OneOrMany,
    maturity: f64,
    n: usize,
) -> Result<ModelSpec> {
    let (alpha, sigma) = (alpha.values(), sigma.values());
    let q = factor_count.unwrap_or(alpha.len().max(sigma.len()));
    let broadcast = |v: Vec<f64>, what: &str| -> Result<Vec<f64>> {
        match v.len() {
            1 => Ok(vec![v[0]; q]),
            l if l == q => Ok(v),
            l => Err(SwingError::config(format!("{what}: expected 1 or {q} values, got {l}"))),
        }
    };
    let curve = match f0 {
        OneOrMany::One(v) => InitialCurve::Flat(*v),
        OneOrMany::Many(v) if v.len() == n + 1 => {
            InitialCurve::Steps { times: uniform_times(maturity, n), values: v.clone() }
        }
        OneOrMany::Many(v) => {
            return Err(SwingError::config(format!(
                "f0: expected a scalar or {} per-date values, got {}",
                n + 1,
                v.len()
            )))
        }
    };
    ModelSpec::new(broadcast(alpha, "alpha")?, broadcast(sigma, "sigma")?, rho, curve)
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let c = &raw.contract;
    let index_window = match &c.index_window {
        None => IndexWindow::Full,
        Some(WindowKey::Name(s)) if s == "full" => IndexWindow::Full,
        Some(WindowKey::Name(s)) => {
            return Err(SwingError::config(format!("index_window: expected \"full\" or a length, got `{s}`")))
        }
        Some(WindowKey::Lookback(l)) => IndexWindow::Lookback(*l),
    };
    let maturity = c.maturity.unwrap_or(c.n_exercise as f64 / 365.0);

    let solver = {
        let s = &raw.solver;
        let e = &raw.engine;
        let lambda = s.truncation_lambda.unwrap_or(DEFAULT_LAMBDA);
        if !(lambda > 0.0 && lambda < LAMBDA_MAX) {
            return Err(SwingError::config(format!("truncation_lambda must lie in (0, {LAMBDA_MAX:.7}), got {lambda}")));
        }
        if s.m == 0 || s.paths < 2 || s.quad_nodes == 0 || s.x_points < 3 || !(s.width_stds > 0.0) {
            return Err(SwingError::config("solver: need m >= 1, paths >= 2, quad_nodes >= 1, x_points >= 3, width_stds > 0"));
        }
        if e.basis_degree == 0 || e.q_step <= 0 {
            return Err(SwingError::config("engine: need basis_degree >= 1 and q_step >= 1"));
        }
        let seed = raw.seed.or(s.seed).unwrap_or(1);
        let controls = match e.bang_bang {
            BangBangMode::On => ControlSet::BangBang,
            _ => ControlSet::Full,
        };
        SolverConfig {
            engine: e.engine,
            bang_bang: e.bang_bang,
            grid: GridOptions {
                m: s.m,
                integration: s.integration,
                quad_nodes: s.quad_nodes,
                transition: s.transition,
                controls,
                delta_q: e.q_step,
                x_grid: s.x_grid.map(|g| g.build()).transpose()?,
                x_points: s.x_points,
                width_stds: s.width_stds,
                truncation: None,
            },
            lsmc: LsmcOptions {
                paths: s.paths,
                seed,
                basis_degree: e.basis_degree,
                ridge: LsmcOptions::default().ridge,
                controls,
                delta_q: e.q_step,
            },
            pricing_paths: s.pricing_paths.unwrap_or(s.paths),
            truncation_lambda: lambda,
        }
    };
    if solver.pricing_paths == 0 {
        return Err(SwingError::config("solver: pricing_paths must be positive"));
    }

    let sweep = SweepRange::new(raw.sweep.f0_min, raw.sweep.f0_max, raw.sweep.f0_step)?;

    let raw_scenarios = raw.scenarios.clone().unwrap_or_else(|| {
        vec![RawScenario {
            name: "base".into(),
            factor_count: None,
            alpha: None,
            sigma: None,
            rho: None,
            strike: None,
            constraint: None,
            penalty_a: None,
            penalty_b: None,
            payoff: None,
        }]
    });
    if raw_scenarios.is_empty() {
        return Err(SwingError::config("scenario list is empty"));
    }
    let mut scenarios: Vec<Scenario> = Vec::with_capacity(raw_scenarios.len());
    for r in &raw_scenarios {
        if !valid_name(&r.name) {
            return Err(SwingError::config(format!(
                "scenario name `{}` must be non-empty and use only letters, digits, `_`, `-`, `.`",
                r.name
            )));
        }
        if scenarios.iter().any(|s| s.name == r.name) {
            return Err(SwingError::config(format!("duplicate scenario `{}`", r.name)));
        }
        let within = |e: SwingError| SwingError::Scenario { scenario: r.name.clone(), source: Box::new(e) };
        let model = build_model(
            r.factor_count.or(raw.model.factor_count),
            r.alpha.as_ref().unwrap_or(&raw.model.alpha),
            r.sigma.as_ref().unwrap_or(&raw.model.sigma),
            r.rho.unwrap_or(raw.model.rho),
            &raw.model.f0,
            maturity,
            c.n_exercise,
        )
        .map_err(within)?;
        let contract = ContractSpec {
            n: c.n_exercise,
            maturity,
            q_max: c.q_max,
            volume_min: c.volume_min,
            volume_max: c.volume_max,
            strike: r.strike.unwrap_or(c.strike),
            constraint: r.constraint.unwrap_or(c.constraint),
            penalty_a: r.penalty_a.unwrap_or(c.penalty_a),
            penalty_b: r.penalty_b.unwrap_or(c.penalty_b),
            payoff: r.payoff.unwrap_or(c.payoff),
            index_window,
        };
        contract.validate().map_err(within)?;
        crate::swing_contract::build_volume_grid(&contract, solver.lsmc.delta_q).map_err(within)?;
        scenarios.push(Scenario { name: r.name.clone(), model, contract });
    }
    check_engine(&solver, &scenarios)?;

    let verify = raw.verify;
    verify.field.validate("verify.field")?;
    verify.dominating.validate("verify.dominating")?;
    verify.price_grid.build()?;
    verify.field_grid.build()?;
    if !(verify.stein_h > 0.0) || !verify.stein_x.is_finite() || !(verify.x0 > 0.0) {
        return Err(SwingError::config("verify: need stein_h > 0, finite stein_x and x0 > 0"));
    }
    if verify.refinement_ms.len() < 2 || verify.refinement_ms.contains(&0) {
        return Err(SwingError::config("verify: refinement_ms needs at least two positive entries"));
    }
    raw.euler_gap.validate()?;

    Ok(ExperimentConfig {
        seed: solver.lsmc.seed,
        output: raw.output,
        solver,
        sweep,
        scenarios,
        verify,
        euler_gap: raw.euler_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seed = 3
        [contract]
        n_exercise = 15
        q_max = 6
        Q_min = 50
        Q_max = 80
        strike = 20.0
        [model]
        alpha = [0.4]
        sigma = [0.7]
        f0 = 20.0
    "#;

    #[test]
    fn defaults_fill_the_reference_setup() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.scenarios.len(), 1);
        assert_eq!(cfg.scenarios[0].name, "base");
        assert_eq!(cfg.sweep.len(), 13);
        assert_eq!(cfg.sweep.points()[12], 35.0);
        let c = &cfg.scenarios[0].contract;
        assert_eq!((c.n, c.q_max, c.volume_min, c.volume_max), (15, 6, 50, 80));
        assert!((c.maturity - 15.0 / 365.0).abs() < 1e-15);
        assert_eq!(cfg.solver.engine, EngineKind::Grid);
    }

    #[test]
    fn scenarios_override_the_base_blocks() {
        let text = format!(
            "{BASE}\n[[scenarios]]\nname = \"low\"\nsigma = 0.2\n[[scenarios]]\nname = \"pen\"\nconstraint = \"pen\"\npenalty_A = 0.2\npenalty_B = 0.2\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.scenarios[0].model.vols(), &[0.2]);
        assert_eq!(cfg.scenarios[1].model.vols(), &[0.7]);
        assert_eq!(cfg.scenarios[1].contract.constraint, Constraint::Pen);
        assert_eq!(cfg.scenarios[1].contract.penalty_a, 0.2);
    }

    #[test]
    fn rho_outside_the_admissible_range_is_rejected() {
        let text = BASE.replace("alpha = [0.4]", "alpha = 0.8\nfactor_count = 3").replace("sigma = [0.7]", "sigma = 0.7\nrho = -0.6");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.is_config(), "{err}");
        let ok = text.replace("rho = -0.6", "rho = 0.4");
        let text = format!("{ok}\n[engine]\nengine = \"lsmc\"\nbasis_degree = 3\nq_step = 1\nbang_bang = \"off\"\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.scenarios[0].model.factor_count(), 3);
    }

    #[test]
    fn invalid_blocks_are_rejected_at_parse_time() {
        let cases = [
            BASE.replace("Q_min = 50", "Q_min = 51"),
            BASE.replace("f0 = 20.0", "f0 = [20.0, 21.0]"),
            format!("{BASE}\n[sweep]\nf0_min = 10.0\nf0_max = 5.0\nf0_step = 1.0\n"),
            format!("{BASE}\nscenarios = []\n"),
            format!("{BASE}\n[[scenarios]]\nname = \"a/b\"\n"),
            format!("{BASE}\n[[scenarios]]\nname = \"a\"\n[[scenarios]]\nname = \"a\"\n"),
            format!("{BASE}\n[solver]\nm = 1\npaths = 10\ntruncation_lambda = 0.3\n"),
            BASE.replace("strike = 20.0", "strike = 20.0\nunknown_key = 1"),
            BASE.replace("strike = 20.0", "strike = 20.0\npayoff = \"indexed_strike\""),
        ];
        for text in cases {
            let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
            assert!(err.is_config(), "{err}");
        }
    }

    #[test]
    fn per_date_curves_need_one_value_per_date() {
        let values: Vec<String> = (0..16).map(|k| format!("{}.0", 20 + k % 3)).collect();
        let text = BASE.replace("f0 = 20.0", &format!("f0 = [{}]", values.join(", ")));
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(!cfg.scenarios[0].model.initial_curve().is_flat());
    }

    #[test]
    fn row_count_matches_the_floor_formula() {
        for (lo, hi, step, want) in [(5.0, 35.0, 2.5, 13), (5.0, 6.0, 0.3, 4), (1.0, 1.0, 1.0, 1), (0.1, 0.7, 0.1, 7)] {
            let s = SweepRange::new(lo, hi, step).unwrap();
            assert_eq!(s.len(), want);
            assert_eq!(s.points().len(), want);
        }
    }
}

//! Verification suite and the truncated-versus-plain Euler study.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, FieldSpec, Scenario};
use crate::bdpp_solver::{
    bang_bang_vs_enumeration, compare_surfaces, empirical_lipschitz, m_refinement_study, solve_grid, EngineKind,
    GridOptions, GridState,
};
use crate::convex_order::{
    check_matrix_field_convexity, estimate_semiconvexity, lipschitz_chain_bound, psd_order, OrderVerdict,
    VerdictStatus, Witness,
};
use crate::error::{Result, SwingError};
use crate::grid::{second_differences, UniformGrid};
use crate::market_models::{
    cholesky_explicit, gamma_matrix, uniform_times, vol_field_multifactor, ModelSpec,
};
use crate::schemes::{
    arch_dynamics, truncated_plain_gap, truncated_stein_check, truncation_threshold, GapRow, GapStudy,
    TruncationConstants,
};
use crate::swing_contract::{build_volume_grid, ContractSpec, PayoffKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check does not apply to the configured input.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub witness: String,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, pass: bool, worst_violation: f64, tolerance: f64, witness: String, detail: String) -> Self {
        CheckOutcome {
            name: name.into(),
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            worst_violation,
            tolerance,
            witness,
            detail,
        }
    }

    fn skipped(name: impl Into<String>, why: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            status: CheckStatus::Skipped,
            worst_violation: 0.0,
            tolerance: 0.0,
            witness: String::new(),
            detail: why.into(),
        }
    }

    fn from_verdict(name: impl Into<String>, v: &OrderVerdict, detail: String) -> Self {
        let status = match v.status {
            VerdictStatus::Holds => CheckStatus::Pass,
            VerdictStatus::Fails => CheckStatus::Fail,
            VerdictStatus::Indeterminate => CheckStatus::Skipped,
        };
        CheckOutcome {
            name: name.into(),
            status,
            worst_violation: v.worst_violation,
            tolerance: v.tolerance,
            witness: describe(&v.witness),
            detail,
        }
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

fn describe(w: &Witness) -> String {
    match w {
        Witness::None => "none".into(),
        Witness::Direction(d) => format!("direction {d:?}"),
        Witness::Threshold(k) => format!("threshold {k}"),
        Witness::Mean => "mean".into(),
        Witness::TestFunction(i) => format!("test function #{i}"),
        Witness::GridPoint { t, x, component } => format!("t = {t}, x = {x}, component {component}"),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        !self.checks.iter().any(CheckOutcome::failed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| c.failed()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "SKIP",
            };
            writeln!(f, "{tag} {}", c.name)?;
            if c.status != CheckStatus::Skipped {
                writeln!(f, "    worst_violation = {:.6e}", c.worst_violation)?;
                writeln!(f, "    tolerance       = {:.6e}", c.tolerance)?;
                writeln!(f, "    witness         = {}", c.witness)?;
            }
            if !c.detail.is_empty() {
                writeln!(f, "    detail          = {}", c.detail)?;
            }
        }
        let failed = self.failures().len();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// `a_σ` of a field at its peak time, on `[-10, 10]`.
fn semiconvexity_of(spec: &FieldSpec) -> Result<f64> {
    let field = spec.field();
    let t = spec.peak_time();
    let grid = UniformGrid::new(-10.0, 10.0, 2001)?;
    Ok(estimate_semiconvexity(|x| field.value(t, x), &grid)?.a_sigma)
}

fn truncation_constants(spec: &FieldSpec) -> Result<Option<TruncationConstants>> {
    let Some(sigma_lip) = spec.lipschitz() else {
        return Ok(None);
    };
    Ok(Some(TruncationConstants { sigma_lip, a_sigma: semiconvexity_of(spec)? }))
}

/// Rows of the truncated-versus-plain study with its trend verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerGapReport {
    pub rows: Vec<GapRow>,
    pub strictly_decreasing: bool,
    /// `max_m sup_x gap(x) / (1 + |x|)`.
    pub max_ratio: f64,
}

pub fn run_euler_gap(config: &ExperimentConfig) -> Result<EulerGapReport> {
    let g = &config.euler_gap;
    let constants = truncation_constants(&g.field)?
        .ok_or_else(|| SwingError::config("euler_gap: the field must be Lipschitz"))?;
    let study = GapStudy {
        n: g.n,
        maturity: g.maturity,
        lambda: config.solver.truncation_lambda,
        constants,
        starts: g.starts(),
        u: g.u,
        paths: g.paths,
        seed: config.seed,
    };
    let rows = truncated_plain_gap(&study, &arch_dynamics(g.field.field()), &g.ms)?;
    let strictly_decreasing = rows.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap);
    let max_ratio = rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    Ok(EulerGapReport { rows, strictly_decreasing, max_ratio })
}

/// Writes `<dir>/euler_gap.csv`.
pub fn write_gap_csv(report: &EulerGapReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("euler_gap.csv");
    let tmp = dir.join(".euler_gap.csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(["m", "threshold", "sup_gap", "max_ratio", "truncation_rate"])?;
        for r in &report.rows {
            w.write_record([
                r.m.to_string(),
                r.threshold.to_string(),
                r.sup_gap.to_string(),
                r.max_ratio.to_string(),
                r.truncation_rate.to_string(),
            ])?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

fn grid_capable(s: &Scenario) -> bool {
    s.model.factor_count() == 1 && s.contract.payoff != PayoffKind::IndexedStrike
}

/// One-factor model and non-indexed contract taken from the first scenario.
fn reference_pair(config: &ExperimentConfig) -> (ModelSpec, ContractSpec) {
    let s = &config.scenarios[0];
    let model = if s.model.factor_count() == 1 {
        s.model.clone()
    } else {
        ModelSpec::new(
            vec![s.model.mean_reversions()[0]],
            vec![s.model.vols()[0]],
            0.0,
            s.model.initial_curve().clone(),
        )
        .expect("sub-model of a valid model")
    };
    let mut contract = s.contract.clone();
    if contract.payoff == PayoffKind::IndexedStrike {
        contract.payoff = PayoffKind::FixedStrike;
    }
    (model, contract)
}

fn check_cholesky(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut cases: Vec<(usize, f64)> = Vec::new();
    for q in 2..=10usize {
        let lo = -1.0 / (q as f64 - 1.0) + 0.01;
        let hi = 0.99;
        cases.extend((0..20).map(|i| (q, lo + (hi - lo) * i as f64 / 19.0)));
    }
    for s in &config.scenarios {
        if s.model.factor_count() >= 2 {
            cases.push((s.model.factor_count(), s.model.rho()));
        }
    }
    let mut worst = (0.0, 0, 0.0);
    for &(q, rho) in &cases {
        let l = cholesky_explicit(rho, q)?;
        let err = (&l * l.transpose() - gamma_matrix(rho, q)?).amax();
        if err >= worst.0 {
            worst = (err, q, rho);
        }
    }
    let tol = 1e-12;
    Ok(CheckOutcome::new(
        "cholesky_identity",
        worst.0 <= tol,
        worst.0,
        tol,
        format!("q = {}, rho = {}", worst.1, worst.2),
        format!("{} (q, rho) pairs", cases.len()),
    ))
}

fn check_fields(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let grid = UniformGrid::new(config.verify.field_grid.min, config.verify.field_grid.max, config.verify.field_grid.points)?;
    let mut out = Vec::new();
    for s in &config.scenarios {
        let c = &s.contract;
        let times = uniform_times(c.maturity, c.n);
        let field = vol_field_multifactor(&s.model, c.maturity, &times);
        let v = check_matrix_field_convexity(&field, &grid, &times, 1e-12)?;
        out.push(CheckOutcome::from_verdict(
            format!("field_convexity:{}", s.name),
            &v,
            format!("{} factors, |λ_i| by second differences", s.model.factor_count()),
        ));
    }
    let spec = config.verify.field;
    let field = spec.field();
    let times: Vec<f64> = vec![0.0, spec.peak_time()];
    let v = check_matrix_field_convexity(&field, &grid, &times, 1e-12)?;
    out.push(CheckOutcome::from_verdict("field_convexity:verify.field", &v, format!("{spec:?}")));
    Ok(out)
}

fn grid_curve(config: &ExperimentConfig, s: &Scenario) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut prices = Vec::new();
    let mut deltas = Vec::new();
    for f0 in config.sweep.points() {
        let surface = solve_grid(&GridState::Factor(s.model.with_flat_f0(f0)?), &s.contract, &config.solver.grid)?;
        let g = surface.as_grid().expect("grid engine");
        prices.push(g.value_at_origin());
        deltas.push(g.grid_delta(&s.contract, &surface.volumes).expect("factor state"));
    }
    Ok((prices, deltas))
}

fn check_f0_convexity(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let results: Vec<Result<Vec<CheckOutcome>>> = config
        .scenarios
        .par_iter()
        .map(|s| {
            let names = (format!("convexity_in_f0:{}", s.name), format!("delta_monotone:{}", s.name));
            if !grid_capable(s) {
                let why = "needs a one-factor, non-indexed scenario for the grid engine";
                return Ok(vec![CheckOutcome::skipped(names.0, why), CheckOutcome::skipped(names.1, why)]);
            }
            let (prices, deltas) = grid_curve(config, s)?;
            let points = config.sweep.points();
            let scale = prices.iter().fold(1.0f64, |a, p| a.max(p.abs()));
            let tol = 1e-6 * scale;
            let (i, d2) = second_differences(&prices)
                .into_iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, 0.0));
            let convex = CheckOutcome::new(
                names.0,
                -d2 <= tol,
                (-d2).max(0.0),
                tol,
                format!("f0 = {}", points.get(i + 1).copied().unwrap_or(f64::NAN)),
                format!("{} grid prices", prices.len()),
            );
            let (j, drop) = deltas
                .windows(2)
                .map(|w| w[0] - w[1])
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, 0.0));
            let monotone = CheckOutcome::new(
                names.1,
                drop <= 1e-6,
                drop.max(0.0),
                1e-6,
                format!("f0 = {}", points.get(j + 1).copied().unwrap_or(f64::NAN)),
                "grid deltas along the sweep".into(),
            );
            Ok(vec![convex, monotone])
        })
        .collect();
    Ok(results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

fn price_state(spec: &FieldSpec, x0: f64) -> GridState {
    GridState::Price { field: spec.field(), x0 }
}

fn check_domination(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let v = &config.verify;
    let (_, contract) = reference_pair(config);
    let grid = UniformGrid::new(v.price_grid.min, v.price_grid.max, v.price_grid.points)?;
    let (small, large) = (v.field.field(), v.dominating.field());
    let times = uniform_times(contract.maturity, contract.n);

    // Pointwise ϑ ⪯ θ on the grid at every exercise date.
    let mut worst: Option<(OrderVerdict, f64, f64)> = None;
    for &t in &times {
        for x in grid.nodes() {
            let a = DMatrix::from_element(1, 1, small.value(t, x));
            let b = DMatrix::from_element(1, 1, large.value(t, x));
            let verdict = psd_order(&a, &b, 1e-12)?;
            let replace = match &worst {
                None => true,
                Some((w, _, _)) => verdict.worst_violation - verdict.tolerance > w.worst_violation - w.tolerance,
            };
            if replace {
                worst = Some((verdict, t, x));
            }
        }
    }
    let (pw, t, x) = worst.expect("nonempty grid");
    let pointwise = CheckOutcome::new(
        "domination_pointwise",
        pw.holds,
        pw.worst_violation,
        pw.tolerance,
        format!("t = {t}, x = {x}"),
        "verify.field ⪯ verify.dominating".into(),
    );

    let opts = GridOptions { x_grid: Some(grid), ..config.solver.grid.clone() };
    let lo = solve_grid(&price_state(&v.field, v.x0), &contract, &opts)?;
    let hi = solve_grid(&price_state(&v.dominating, v.x0), &contract, &opts)?;
    let cmp = compare_surfaces(&lo, &hi)?;
    let tol = 1e-8;
    let (k, i, q) = cmp.worst;
    let values = CheckOutcome::new(
        "domination_values",
        cmp.max_excess <= tol,
        cmp.max_excess.max(0.0),
        tol,
        format!("k = {k}, x = {}, Q = {q}", lo.as_grid().expect("grid engine").grid.node(i)),
        "v[verify.field] ≤ v[verify.dominating] at every node".into(),
    );

    // Lipschitz chain bound on the dominating surface.
    let slopes = empirical_lipschitz(&hi)?;
    let sigma_lip = v.dominating.lipschitz();
    let lipschitz = match sigma_lip {
        None => CheckOutcome::skipped("lipschitz_bound", "verify.dominating is not Lipschitz"),
        Some(sigma_lip) => {
            let n = contract.n;
            let h = contract.maturity / (n * opts.m) as f64;
            let payoff_lips = vec![contract.q_max as f64; n];
            let volumes = build_volume_grid(&contract, opts.delta_q)?;
            let penalty_lip = volumes.levels(n).iter().map(|&q| contract.penalty_units(q)).fold(0.0, f64::max);
            let mut worst = (f64::NEG_INFINITY, 0usize, 0.0, 0.0);
            let mut envelope = true;
            for (k, &slope) in slopes.iter().enumerate() {
                let b = lipschitz_chain_bound(k, opts.m, h, 0.0, sigma_lip, &payoff_lips, penalty_lip)?;
                envelope &= b.envelope_holds();
                if slope - b.bound > worst.0 {
                    worst = (slope - b.bound, k, slope, b.bound);
                }
            }
            CheckOutcome::new(
                "lipschitz_bound",
                worst.0 <= 1e-9 && envelope,
                worst.0.max(0.0),
                1e-9,
                format!("k = {}: slope {} vs bound {}", worst.1, worst.2, worst.3),
                format!("C^(mi) ≤ e^(t_i C) at every date: {envelope}"),
            )
        }
    };
    Ok(vec![pointwise, values, lipschitz])
}

fn check_stein(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let v = &config.verify;
    let names = ["stein_identity:square", "stein_identity:exp"];
    let Some(c) = truncation_constants(&v.field)? else {
        return Ok(names.iter().map(|n| CheckOutcome::skipped(*n, "verify.field is not Lipschitz")).collect());
    };
    let s = match truncation_threshold(v.stein_h, c.sigma_lip, c.a_sigma, config.solver.truncation_lambda) {
        Ok(s) => s,
        Err(e) => return Ok(names.iter().map(|n| CheckOutcome::skipped(*n, e.to_string())).collect()),
    };
    let sigma = v.field.field().value(v.field.peak_time(), v.stein_x);
    let scale = v.stein_h.sqrt() * sigma;
    let square = truncated_stein_check(|y| 2.0 * y, |_| 2.0, v.stein_x, scale, s);
    let exp = truncated_stein_check(|y| (y / 4.0).exp() / 4.0, |y| (y / 4.0).exp() / 16.0, v.stein_x, scale, s);
    let witness = format!("x = {}, h = {}, s_h = {s}", v.stein_x, v.stein_h);
    Ok(vec![
        CheckOutcome::new(names[0], square.residual <= 1e-8, square.residual, 1e-8, witness.clone(), format!("lhs = {}", square.lhs)),
        CheckOutcome::new(names[1], exp.residual <= 1e-6, exp.residual, 1e-6, witness, format!("lhs = {}", exp.lhs)),
    ])
}

fn check_euler_gap(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let report = run_euler_gap(config)?;
    let gaps: Vec<f64> = report.rows.iter().map(|r| r.sup_gap).collect();
    let worst = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckOutcome::new(
        "euler_gap",
        report.strictly_decreasing && report.max_ratio.is_finite(),
        worst.max(0.0),
        0.0,
        format!("sup gaps {gaps:?}"),
        format!("max gap/(1+|x|) = {}", report.max_ratio),
    ))
}

fn check_bang_bang(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let (model, _) = reference_pair(config);
    let opts = GridOptions { m: 1, ..config.solver.grid.clone() };
    let base = ContractSpec::firm(5, 2, 4, 8, 20.0)?;
    let cases = [
        ("bang_bang:fixed_strike", base.clone()),
        ("bang_bang:call", base.clone().with_payoff(PayoffKind::Call)),
        ("bang_bang:pen", base.with_penalty(0.2, 0.2)?),
    ];
    let mut out = Vec::new();
    for (name, contract) in cases {
        let r = bang_bang_vs_enumeration(&GridState::Factor(model.clone()), &contract, &opts)?;
        let (k, i, q) = r.worst;
        out.push(CheckOutcome::new(
            name,
            r.max_abs_discrepancy == 0.0,
            r.max_abs_discrepancy,
            0.0,
            format!("k = {k}, node {i}, Q = {q}"),
            format!("on nodes reachable by endpoint controls; all nodes: {:.3e}", r.max_abs_discrepancy_all_nodes),
        ));
    }
    Ok(out)
}

fn check_refinement(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let Some(s) = config
        .scenarios
        .iter()
        .filter(|s| grid_capable(s))
        .max_by(|a, b| a.model.vols()[0].total_cmp(&b.model.vols()[0]))
    else {
        return Ok(CheckOutcome::skipped("m_refinement", "no one-factor, non-indexed scenario"));
    };
    let study = m_refinement_study(
        &GridState::Factor(s.model.clone()),
        &s.contract,
        &config.verify.refinement_ms,
        &config.solver.grid,
    )?;
    let rel = study.final_relative_error().unwrap_or(f64::NAN);
    let gaps: Vec<f64> = study.rows.iter().filter_map(|r| r.gap_to_previous).collect();
    Ok(CheckOutcome::new(
        format!("m_refinement:{}", s.name),
        study.gaps_shrink() && rel <= 1e-3,
        rel,
        1e-3,
        format!("gaps {gaps:?}"),
        format!("relative error of the finest m against the exact transition; reference {:?}", study.reference),
    ))
}

fn check_configured_bang_bang(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for s in config.scenarios.iter().filter(|s| grid_capable(s)) {
        let r = bang_bang_vs_enumeration(&GridState::Factor(s.model.clone()), &s.contract, &config.solver.grid)?;
        out.push(CheckOutcome::new(
            format!("bang_bang:{}", s.name),
            r.max_abs_discrepancy == 0.0,
            r.max_abs_discrepancy,
            0.0,
            format!("k = {}, node {}, Q = {}", r.worst.0, r.worst.1, r.worst.2),
            format!("full {} vs endpoint {}", r.full_price, r.bang_bang_price),
        ));
    }
    Ok(out)
}

/// Runs every check of the suite. An `Err` means a check could not be
/// evaluated; a failed check is reported in the returned report.
pub fn run_verification_suite(config: &ExperimentConfig) -> Result<VerificationReport> {
    let mut checks = vec![check_cholesky(config)?];
    checks.extend(check_fields(config)?);
    checks.extend(check_f0_convexity(config)?);
    checks.extend(check_domination(config)?);
    checks.push(check_euler_gap(config)?);
    checks.extend(check_stein(config)?);
    checks.extend(check_bang_bang(config)?);
    checks.push(check_refinement(config)?);
    if config.solver.bang_bang == super::config::BangBangMode::Verify && config.solver.engine == EngineKind::Grid {
        checks.extend(check_configured_bang_bang(config)?);
    }
    Ok(VerificationReport { checks })
}

//! Price and delta curves against the initial forward level.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{BangBangMode, ExperimentConfig, Scenario};
use crate::bdpp_solver::{
    bang_bang_vs_enumeration, price, simulate_factor_paths, solve_grid, solve_lsmc, solve_lsmc_on, EngineKind,
    GridState, PolicySimulation, PricingResult, ValueSurface,
};
use crate::error::{Result, SwingError};
use crate::swing_contract::Constraint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub f0: f64,
    pub price: f64,
    pub delta: f64,
    pub price_std_error: f64,
    pub delta_std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCurve {
    pub scenario: String,
    pub engine: EngineKind,
    /// Ordered by `f0`.
    pub rows: Vec<SweepRow>,
    pub diagnostics: Vec<String>,
}

impl ScenarioCurve {
    pub fn prices(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.price).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.delta).collect()
    }
}

/// Seed of the pricing paths, kept apart from the training seed.
pub fn pricing_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn in_scenario<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        SwingError::Scenario { .. } => e,
        other => SwingError::Scenario { scenario: name.to_string(), source: Box::new(other) },
    })
}

fn push_unique(out: &mut Vec<String>, items: &[String]) {
    for d in items {
        if !out.contains(d) {
            out.push(d.clone());
        }
    }
}

/// Values each scenario at its configured initial curve.
pub fn price_scenarios(config: &ExperimentConfig) -> Result<Vec<(String, PricingResult)>> {
    let sim = PolicySimulation { paths: config.solver.pricing_paths, seed: pricing_seed(config.seed) };
    config
        .scenarios
        .par_iter()
        .map(|s| {
            let r = solve_scenario(config, s).and_then(|surface| price(&surface, sim));
            in_scenario(&s.name, r).map(|r| (s.name.clone(), r))
        })
        .collect()
}

/// Solves one scenario with the configured engine.
pub fn solve_scenario(config: &ExperimentConfig, scenario: &Scenario) -> Result<ValueSurface> {
    match config.solver.engine {
        EngineKind::Grid => solve_grid(&GridState::Factor(scenario.model.clone()), &scenario.contract, &config.solver.grid),
        EngineKind::Lsmc => solve_lsmc(&scenario.model, &scenario.contract, &config.solver.lsmc),
    }
}

/// Price and delta on the flat curves `F(0, t) = f0` of the sweep, one curve
/// per scenario. Scenarios run in parallel; the regression engine shares its
/// training and pricing paths across the `f0` values of a scenario.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<ScenarioCurve>> {
    config
        .scenarios
        .par_iter()
        .map(|s| in_scenario(&s.name, sweep_scenario(config, s)))
        .collect()
}

/// [`run_sweep`] for contracts under the penalty regime.
pub fn run_penalty_experiment(config: &ExperimentConfig) -> Result<Vec<ScenarioCurve>> {
    if let Some(s) = config.scenarios.iter().find(|s| s.contract.constraint != Constraint::Pen) {
        return Err(SwingError::config(format!(
            "penalty experiment: scenario `{}` uses firm constraints",
            s.name
        )));
    }
    run_sweep(config)
}

fn sweep_scenario(config: &ExperimentConfig, s: &Scenario) -> Result<ScenarioCurve> {
    let solver = &config.solver;
    let points = config.sweep.points();
    let mut diagnostics = Vec::new();
    let mut rows = Vec::with_capacity(points.len());
    match solver.engine {
        EngineKind::Grid => {
            for f0 in points {
                let state = GridState::Factor(s.model.with_flat_f0(f0)?);
                let surface = solve_grid(&state, &s.contract, &solver.grid)?;
                let g = surface.as_grid().expect("grid engine");
                let delta = g
                    .grid_delta(&s.contract, &surface.volumes)
                    .ok_or_else(|| SwingError::Numerical("grid delta unavailable".into()))?;
                push_unique(&mut diagnostics, &surface.diagnostics);
                if solver.bang_bang == BangBangMode::Verify {
                    let report = bang_bang_vs_enumeration(&state, &s.contract, &solver.grid)?;
                    diagnostics.push(format!(
                        "f0 = {f0}: endpoint controls differ from enumeration by {:.3e} on reachable nodes, {:.3e} on all nodes",
                        report.max_abs_discrepancy, report.max_abs_discrepancy_all_nodes
                    ));
                }
                rows.push(SweepRow { f0, price: g.value_at_origin(), delta, price_std_error: 0.0, delta_std_error: 0.0 });
            }
        }
        EngineKind::Lsmc => {
            let c = &s.contract;
            let lsmc = &solver.lsmc;
            let train = simulate_factor_paths(&s.model, c.maturity, c.n, lsmc.paths, lsmc.seed)?;
            let test = simulate_factor_paths(&s.model, c.maturity, c.n, solver.pricing_paths, pricing_seed(lsmc.seed))?;
            for f0 in points {
                let model = s.model.with_flat_f0(f0)?;
                let surface = solve_lsmc_on(&train, &model, c, lsmc)?;
                let eval = surface.as_lsmc().expect("regression engine").simulate_on(&surface, &test)?;
                push_unique(&mut diagnostics, &surface.diagnostics);
                rows.push(SweepRow {
                    f0,
                    price: eval.mean,
                    delta: eval.delta.unwrap_or(f64::NAN),
                    price_std_error: eval.std_error,
                    delta_std_error: eval.delta_std_error,
                });
            }
        }
    }
    if rows.iter().any(|r| !r.price.is_finite() || !r.delta.is_finite()) {
        return Err(SwingError::Numerical("non-finite price or delta in the sweep".into()));
    }
    Ok(ScenarioCurve { scenario: s.name.clone(), engine: solver.engine, rows, diagnostics })
}

/// Writes `<dir>/<scenario>.csv` with header `f0,price,delta`. The file is
/// written under a temporary name and renamed into place.
pub fn write_sweep_csv(curve: &ScenarioCurve, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", curve.scenario));
    let tmp = dir.join(format!(".{}.csv.tmp", curve.scenario));
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(["f0", "price", "delta"])?;
        for r in &curve.rows {
            w.write_record([r.f0.to_string(), r.price.to_string(), r.delta.to_string()])?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

//! Backward dynamic programming for swing contracts.
//!
//! Two engines produce a [`ValueSurface`]:
//!
//! * [`solve_grid`]: one-dimensional Markov state on a uniform grid, with
//!   quadrature transitions between exercise dates;
//! * [`solve_lsmc`]: regression Monte Carlo on exactly simulated factor paths,
//!   for several factors and path-dependent payoffs.
//!
//! Both support full enumeration of the integer controls or the restriction to
//! the two endpoints of each admissible interval.

mod grid_engine;
mod lsmc;
mod studies;

use serde::{Deserialize, Serialize};

pub use grid_engine::{solve_grid, GridOptions, GridState, GridSurface, Integration, TransitionKind};
pub use lsmc::{simulate_factor_paths, solve_lsmc, solve_lsmc_on, FactorPaths, LsmcOptions, LsmcSurface};
pub use studies::{
    bang_bang_vs_enumeration, compare_surfaces, empirical_lipschitz, m_refinement_study,
    endpoint_reachable, min_second_difference,
    BangBangReport, MRefinementRow, MRefinementStudy, SurfaceComparison,
};

use crate::error::Result;
use crate::swing_contract::{ContractSpec, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Grid,
    Lsmc,
}

/// Which discretised controls the maximisation visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSet {
    /// Every multiple of `delta_q` in the admissible interval.
    Full,
    /// Only the two endpoints of the admissible interval.
    BangBang,
}

/// Value functions `v_k` of a solved contract.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub engine: EngineKind,
    pub m: usize,
    pub contract: ContractSpec,
    pub volumes: VolumeGrid,
    pub diagnostics: Vec<String>,
    pub kind: SurfaceKind,
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    Grid(GridSurface),
    Lsmc(LsmcSurface),
}

impl ValueSurface {
    pub fn as_grid(&self) -> Option<&GridSurface> {
        match &self.kind {
            SurfaceKind::Grid(g) => Some(g),
            SurfaceKind::Lsmc(_) => None,
        }
    }

    pub fn as_lsmc(&self) -> Option<&LsmcSurface> {
        match &self.kind {
            SurfaceKind::Lsmc(l) => Some(l),
            SurfaceKind::Grid(_) => None,
        }
    }
}

/// Distribution of the total consumption `Q_n` under the simulated policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    /// `(Q_n, relative frequency)`, increasing in `Q_n`.
    pub terminal_volumes: Vec<(i64, f64)>,
    pub mean_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingResult {
    pub price: f64,
    /// Zero for the deterministic grid value.
    pub std_error: f64,
    /// Envelope delta with respect to a parallel shift of the initial curve.
    pub delta: Option<f64>,
    pub delta_std_error: f64,
    /// Envelope delta with respect to each `F(0, t_k)`, `k = 0..=n`.
    pub delta_by_date: Vec<f64>,
    pub policy_summary: PolicySummary,
    pub diagnostics: Vec<String>,
}

/// Result of simulating a policy forward.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub mean: f64,
    pub std_error: f64,
    pub delta: Option<f64>,
    pub delta_std_error: f64,
    pub delta_by_date: Vec<f64>,
    pub summary: PolicySummary,
    /// Per-path cash flows, kept for paired comparisons.
    pub path_values: Vec<f64>,
    /// Per-path envelope deltas.
    pub path_deltas: Vec<f64>,
}

/// Forward simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySimulation {
    pub paths: usize,
    pub seed: u64,
}

/// Contract value at inception with policy statistics from `sim`.
///
/// The grid engine reports its deterministic value `v_0(x_0, 0)` and grid
/// delta; the regression engine reports the forward-simulated (low-biased)
/// value and envelope delta. `delta_by_date` and the policy summary always
/// come from the simulation.
pub fn price(surface: &ValueSurface, sim: PolicySimulation) -> Result<PricingResult> {
    let eval = simulate_policy(surface, sim)?;
    let (value, std_error, delta, delta_std_error) = match &surface.kind {
        SurfaceKind::Grid(g) => (g.value_at_origin(), 0.0, g.grid_delta(&surface.contract, &surface.volumes), 0.0),
        SurfaceKind::Lsmc(_) => (eval.mean, eval.std_error, eval.delta, eval.delta_std_error),
    };
    Ok(PricingResult {
        price: value,
        std_error,
        delta,
        delta_std_error,
        delta_by_date: eval.delta_by_date,
        policy_summary: eval.summary,
        diagnostics: surface.diagnostics.clone(),
    })
}

/// Simulates the optimal policy of `surface` on fresh paths.
pub fn simulate_policy(surface: &ValueSurface, sim: PolicySimulation) -> Result<PolicyEvaluation> {
    match &surface.kind {
        SurfaceKind::Grid(g) => g.simulate(surface, sim),
        SurfaceKind::Lsmc(l) => {
            let paths = l.fresh_paths(sim)?;
            l.simulate_on(surface, &paths)
        }
    }
}

/// Envelope delta `E Σ_k q*_k ∂Ψ_k/∂F_0 + ∂P/∂F_0` at the simulated optimal policy.
pub fn delta_envelope(surface: &ValueSurface, sim: PolicySimulation) -> Result<(f64, f64)> {
    let eval = simulate_policy(surface, sim)?;
    let delta = eval.delta.ok_or_else(|| {
        crate::error::SwingError::config("delta needs a model-driven state (factor or regression engine)")
    })?;
    Ok((delta, eval.delta_std_error))
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn summarize_volumes(volumes: &[i64]) -> PolicySummary {
    let mut sorted = volumes.to_vec();
    sorted.sort_unstable();
    let total = sorted.len() as f64;
    let mut out: Vec<(i64, f64)> = Vec::new();
    for v in &sorted {
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 += 1.0,
            _ => out.push((*v, 1.0)),
        }
    }
    out.iter_mut().for_each(|e| e.1 /= total);
    PolicySummary {
        terminal_volumes: out,
        mean_volume: sorted.iter().sum::<i64>() as f64 / total,
    }
}

/// Best control among `candidates`: maximises `q u + cont(Q + q)`; ties go to
/// the smallest control.
#[inline]
pub(crate) fn best_control(candidates: &[i64], unit: f64, cont: impl Fn(i64) -> f64) -> (i64, f64) {
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &q in candidates {
        let v = q as f64 * unit + cont(q);
        if v > best.1 {
            best = (q, v);
        }
    }
    best
}

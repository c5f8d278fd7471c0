//! Grid/quadrature engine for a scalar Markov state.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    best_control, mean_and_se, summarize_volumes, ControlSet, EngineKind, PolicyEvaluation,
    PolicySimulation, SurfaceKind, ValueSurface,
};
use crate::error::{Result, SwingError};
use crate::grid::UniformGrid;
use crate::market_models::{lambda_sq, spot_from_factors, uniform_times, ModelSpec, ScalarField};
use crate::quadrature::norm_cdf;
use crate::schemes::{
    arch_dynamics, ou_step_std, path_rng, truncation_threshold, Dynamics, NoiseLaw,
    TransitionMatrix, TransitionRule, TruncationConstants, DEFAULT_QUAD_NODES,
};
use crate::swing_contract::{
    build_volume_grid, penalty, unit_payoff, ContractSpec, PayoffKind, SpotInfo, VolumeGrid,
};

/// Markov state carried by the grid.
#[derive(Debug, Clone)]
pub enum GridState {
    /// Factor `X` of a one-factor model: `dX = -αX dt + dW`, spot
    /// `F(0,t) exp(σ̃ X - λ_t²/2)`.
    Factor(ModelSpec),
    /// The spot itself, driftless: `dX = σ_t(X) dW`, started at `x0`.
    Price { field: ScalarField, x0: f64 },
}

impl GridState {
    /// Price state with `σ_t(x) = σ̃ e^{-α(T-t)} x`.
    pub fn forward_price(sigma: f64, alpha: f64, maturity: f64, x0: f64) -> Self {
        GridState::Price {
            field: ScalarField::new(move |t, x| sigma * (-alpha * (maturity - t)).exp() * x),
            x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// `m` Euler sub-steps per exercise interval. For the factor state the
    /// composed law is Gaussian and is used in closed form.
    Euler,
    /// `m` Euler sub-steps, each a separate quadrature operator.
    EulerSubsteps,
    /// Exact OU transition over each exercise interval (factor state only).
    ExactOu,
}

/// How each transition integrates the interpolated value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Gauss–Hermite nodes (composite Gauss–Legendre under truncation).
    GaussHermite,
    /// Closed-form Gaussian integral of the piecewise-linear interpolant.
    ExactInterpolant,
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub m: usize,
    pub integration: Integration,
    /// Node count for [`Integration::GaussHermite`].
    pub quad_nodes: usize,
    pub transition: TransitionKind,
    pub controls: ControlSet,
    pub delta_q: i64,
    /// Overrides the default factor grid; required for the price state.
    pub x_grid: Option<UniformGrid>,
    pub x_points: usize,
    /// Half-width of the default factor grid in horizon standard deviations.
    pub width_stds: f64,
    /// Truncated noise `Z 1{|Z| ≤ s_h}` in the Euler sub-steps.
    pub truncation: Option<(f64, TruncationConstants)>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            m: 1,
            integration: Integration::ExactInterpolant,
            quad_nodes: DEFAULT_QUAD_NODES,
            transition: TransitionKind::Euler,
            controls: ControlSet::Full,
            delta_q: 1,
            x_grid: None,
            x_points: 401,
            width_stds: 6.0,
            truncation: None,
        }
    }
}

/// How the forward simulation moves the state between exercise dates.
#[derive(Debug, Clone)]
enum SimLaw {
    /// `substeps` repetitions of `x ← a x + s z`.
    Affine { a: f64, s: f64, substeps: usize },
    Euler { dynamics: Dynamics, h: f64, m: usize },
}

#[derive(Debug, Clone)]
pub struct GridSurface {
    pub grid: UniformGrid,
    pub times: Vec<f64>,
    /// `spots[k][i]`: spot at node `i` on date `k`.
    pub spots: Vec<Vec<f64>>,
    /// `values[k][j][i]`: `v_k(x_i, Q_j)` with `Q_j = levels(k)[j]`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// `continuation[k][j][i]`: `P(v_{k+1}(·, Q_j))(x_i)` with `Q_j = levels(k+1)[j]`.
    pub continuation: Vec<Vec<Vec<f64>>>,
    pub x0: f64,
    state: GridState,
    sim: SimLaw,
    noise_cut: Option<f64>,
    controls: ControlSet,
    mats: Vec<TransitionMatrix>,
    /// Indices into `mats` applied (last to first) over each exercise interval.
    schedule: Vec<Vec<usize>>,
}

impl GridSurface {
    /// `v_0(x_0, 0)`.
    pub fn value_at_origin(&self) -> f64 {
        self.grid.interpolate(&self.values[0][0], self.x0)
    }

    pub fn value_slice(&self, volumes: &VolumeGrid, k: usize, volume: i64) -> Option<&[f64]> {
        volumes.index_of(k, volume).map(|j| self.values[k][j].as_slice())
    }

    fn transport(&self, k: usize, v: &[f64]) -> Vec<f64> {
        let mut cur = v.to_vec();
        let mut next = vec![0.0; cur.len()];
        for &l in self.schedule[k].iter().rev() {
            self.mats[l].apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Envelope delta computed on the grid: `D_k = q* ∂Ψ_k/∂F_0 + P D_{k+1}`
    /// along the grid's own maximisers, `D_n = ∂P/∂F_0`. It is a
    /// subgradient of the grid value in a flat shift of the curve, so it is
    /// non-decreasing in `F_0`. `None` for the price state.
    pub fn grid_delta(&self, contract: &ContractSpec, volumes: &VolumeGrid) -> Option<f64> {
        let model = match &self.state {
            GridState::Factor(m) => m,
            GridState::Price { .. } => return None,
        };
        let n = contract.n;
        let dspot = |k: usize| -> Vec<f64> {
            let f = model.f0(self.times[k]);
            self.spots[k].iter().map(|s| s / f).collect()
        };
        let ds = dspot(n);
        let mut d: Vec<Vec<f64>> = volumes
            .levels(n)
            .iter()
            .map(|&vol| ds.iter().map(|s| -contract.penalty_units(vol) * s).collect())
            .collect();
        for k in (0..n).rev() {
            let cont: Vec<Vec<f64>> = d.par_iter().map(|v| self.transport(k, v)).collect();
            let ds = dspot(k);
            let units: Vec<(f64, f64)> = self.spots[k]
                .iter()
                .zip(&ds)
                .map(|(&s, &g)| {
                    let u = unit_payoff(contract.payoff, SpotInfo::spot(s), contract.strike).unwrap_or(f64::NAN);
                    let du = match contract.payoff {
                        PayoffKind::Call if s <= contract.strike => 0.0,
                        _ => g,
                    };
                    (u, du)
                })
                .collect();
            d = volumes
                .levels(k)
                .par_iter()
                .map(|&vol| {
                    let candidates = match self.controls {
                        ControlSet::Full => volumes.controls(k, vol),
                        ControlSet::BangBang => volumes.endpoint_controls(k, vol),
                    };
                    let cols: Vec<usize> = candidates
                        .iter()
                        .map(|&q| volumes.index_of(k + 1, vol + q).expect("reachable volume node"))
                        .collect();
                    (0..units.len())
                        .map(|i| {
                            let (unit, du) = units[i];
                            let (q, _) = best_control(&candidates, unit, |q| {
                                let pos = candidates.iter().position(|c| *c == q).expect("candidate");
                                self.continuation[k][cols[pos]][i]
                            });
                            let pos = candidates.iter().position(|c| *c == q).expect("candidate");
                            q as f64 * du + cont[cols[pos]][i]
                        })
                        .collect()
                })
                .collect();
        }
        Some(self.grid.interpolate(&d[0], self.x0))
    }

    fn spot_at(&self, k: usize, x: f64) -> f64 {
        match &self.state {
            GridState::Factor(model) => {
                let t = self.times[k];
                spot_from_factors(t, &[x], model, lambda_sq(t, model))
            }
            GridState::Price { .. } => x,
        }
    }

    fn advance(&self, k: usize, x: f64, rng: &mut impl rand::Rng) -> f64 {
        let mut draw = || {
            let z: f64 = StandardNormal.sample(rng);
            match self.noise_cut {
                Some(s) if z.abs() > s => 0.0,
                _ => z,
            }
        };
        match &self.sim {
            SimLaw::Affine { a, s, substeps } => {
                (0..*substeps).fold(x, |y, _| a * y + s * draw())
            }
            SimLaw::Euler { dynamics, h, m } => {
                let mut y = x;
                for l in 0..*m {
                    let t = self.times[k] + *h * l as f64;
                    y += h * dynamics.kappa(t) * (y - dynamics.zeta()[0])
                        + h.sqrt() * dynamics.sigma_scalar(t, y) * draw();
                }
                y
            }
        }
    }

    pub(crate) fn simulate(&self, surface: &ValueSurface, sim: PolicySimulation) -> Result<PolicyEvaluation> {
        if sim.paths == 0 {
            return Err(SwingError::config("policy simulation needs at least one path"));
        }
        let contract = &surface.contract;
        let volumes = &surface.volumes;
        let n = contract.n;
        let model = match &self.state {
            GridState::Factor(m) => Some(m),
            GridState::Price { .. } => None,
        };
        let rows: Vec<Result<(f64, Vec<f64>, i64)>> = (0..sim.paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_rng(sim.seed, p as u64);
                let mut x = self.x0;
                let mut volume = 0i64;
                let mut cash = 0.0;
                let mut dby = vec![0.0; n + 1];
                for k in 0..n {
                    let spot = self.spot_at(k, x);
                    let unit = unit_payoff(contract.payoff, SpotInfo::spot(spot), contract.strike)?;
                    let candidates = match self.controls {
                        ControlSet::Full => volumes.controls(k, volume),
                        ControlSet::BangBang => volumes.endpoint_controls(k, volume),
                    };
                    let (q, _) = best_control(&candidates, unit, |q| {
                        let j = volumes.index_of(k + 1, volume + q).expect("reachable volume node");
                        self.grid.interpolate(&self.continuation[k][j], x)
                    });
                    cash += q as f64 * unit;
                    if let Some(m) = model {
                        let dunit = match contract.payoff {
                            PayoffKind::Call if spot <= contract.strike => 0.0,
                            _ => spot / m.f0(self.times[k]),
                        };
                        dby[k] = q as f64 * dunit;
                    }
                    volume += q;
                    x = self.advance(k, x, &mut rng);
                    if !x.is_finite() {
                        return Err(SwingError::NonFinite { path: p, step: k + 1 });
                    }
                }
                let spot = self.spot_at(n, x);
                cash += penalty(contract, spot, volume);
                if let Some(m) = model {
                    dby[n] = -contract.penalty_units(volume) * spot / m.f0(self.times[n]);
                }
                Ok((cash, dby, volume))
            })
            .collect();
        let rows: Vec<(f64, Vec<f64>, i64)> = rows.into_iter().collect::<Result<_>>()?;
        let path_values: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let path_deltas: Vec<f64> = rows.iter().map(|r| r.1.iter().sum()).collect();
        let final_volumes: Vec<i64> = rows.iter().map(|r| r.2).collect();
        let (mean, std_error) = mean_and_se(&path_values);
        let (delta, delta_se) = mean_and_se(&path_deltas);
        let delta_by_date: Vec<f64> = (0..=n)
            .map(|k| rows.iter().map(|r| r.1[k]).sum::<f64>() / rows.len() as f64)
            .collect();
        Ok(PolicyEvaluation {
            mean,
            std_error,
            delta: model.map(|_| delta),
            delta_std_error: if model.is_some() { delta_se } else { 0.0 },
            delta_by_date: if model.is_some() { delta_by_date } else { Vec::new() },
            summary: summarize_volumes(&final_volumes),
            path_values,
            path_deltas,
        })
    }
}

/// Variance of `m` composed Euler steps of `dX = -αX dt + dW` with step `h`.
fn collapsed_euler(alpha: f64, h: f64, m: usize) -> (f64, f64) {
    let r = 1.0 - alpha * h;
    let a = r.powi(m as i32);
    let var: f64 = (0..m).map(|j| h * r.powi(2 * j as i32)).sum();
    (a, var.sqrt())
}

/// Solves the backward recursion on a one-dimensional grid.
pub fn solve_grid(state: &GridState, contract: &ContractSpec, options: &GridOptions) -> Result<ValueSurface> {
    contract.validate()?;
    if contract.payoff == PayoffKind::IndexedStrike {
        return Err(SwingError::config(
            "the grid engine has a scalar Markov state; the indexed strike needs the regression engine",
        ));
    }
    if options.m == 0 || options.quad_nodes == 0 {
        return Err(SwingError::config("m and quad_nodes must be positive"));
    }
    let volumes = build_volume_grid(contract, options.delta_q)?;
    let n = contract.n;
    let maturity = contract.maturity;
    let times = uniform_times(maturity, n);
    let dt = maturity / n as f64;
    let h = dt / options.m as f64;
    let mut diagnostics = Vec::new();

    let noise_cut = match options.truncation {
        Some((lambda, c)) => Some(truncation_threshold(h, c.sigma_lip, c.a_sigma, lambda)?),
        None => None,
    };
    let rule = match (options.integration, noise_cut) {
        (Integration::GaussHermite, Some(s)) => NoiseLaw::truncated_gaussian(s, options.quad_nodes).into(),
        (Integration::GaussHermite, None) => NoiseLaw::gaussian(options.quad_nodes).into(),
        (Integration::ExactInterpolant, cut) => TransitionRule::ExactInterpolant { cut },
    };

    let (grid, x0) = match state {
        GridState::Factor(model) => {
            if model.factor_count() != 1 {
                return Err(SwingError::config("the grid engine needs a one-factor model"));
            }
            let alpha = model.mean_reversions()[0];
            let horizon = ou_step_std(alpha, maturity);
            let grid = match &options.x_grid {
                Some(g) => g.clone(),
                None => UniformGrid::centered(0.0, options.width_stds * horizon, options.x_points)?,
            };
            let half = grid.max.min(-grid.min);
            let tail = 2.0 * (1.0 - norm_cdf(half / horizon));
            if tail > 1e-6 {
                diagnostics.push(format!("x-grid too narrow: terminal mass beyond grid ≈ {tail:.2e}"));
            }
            (grid, 0.0)
        }
        GridState::Price { x0, .. } => {
            let grid = options
                .x_grid
                .clone()
                .ok_or_else(|| SwingError::config("the price state needs an explicit x-grid"))?;
            (grid, *x0)
        }
    };

    // Transition operators and the sub-step schedule of each exercise interval.
    let mut mats: Vec<TransitionMatrix> = Vec::new();
    let mut schedule: Vec<Vec<usize>> = Vec::with_capacity(n);
    let sim = match state {
        GridState::Factor(model) => {
            let alpha = model.mean_reversions()[0];
            let (a, s, substeps) = match options.transition {
                TransitionKind::Euler if noise_cut.is_none() => {
                    let (a, s) = collapsed_euler(alpha, h, options.m);
                    (a, s, 1)
                }
                TransitionKind::Euler | TransitionKind::EulerSubsteps => {
                    (1.0 - alpha * h, h.sqrt(), options.m)
                }
                TransitionKind::ExactOu => {
                    if noise_cut.is_some() {
                        return Err(SwingError::config("the exact transition has no truncated variant"));
                    }
                    ((-alpha * dt).exp(), ou_step_std(alpha, dt), 1)
                }
            };
            // With a zero loading the spot ignores the factor; a degenerate
            // transition keeps constants exact.
            let s = if model.vols()[0] == 0.0 { 0.0 } else { s };
            mats.push(TransitionMatrix::affine(&grid, &rule, |x| (a * x, s)));
            schedule.extend((0..n).map(|_| vec![0; substeps]));
            SimLaw::Affine { a, s, substeps }
        }
        GridState::Price { field, .. } => {
            if options.transition == TransitionKind::ExactOu {
                return Err(SwingError::config("the exact transition exists only for the factor state"));
            }
            let dynamics = arch_dynamics(field.clone());
            let built: Vec<Result<TransitionMatrix>> = (0..n * options.m)
                .into_par_iter()
                .map(|l| TransitionMatrix::euler(&grid, h * l as f64, &dynamics, h, &rule))
                .collect();
            mats = built.into_iter().collect::<Result<_>>()?;
            schedule.extend((0..n).map(|k| (k * options.m..(k + 1) * options.m).collect()));
            SimLaw::Euler { dynamics, h, m: options.m }
        }
    };

    let nodes = grid.nodes();
    let spots: Vec<Vec<f64>> = (0..=n)
        .map(|k| match state {
            GridState::Factor(model) => {
                let t = times[k];
                let l2 = lambda_sq(t, model);
                nodes.iter().map(|&x| spot_from_factors(t, &[x], model, l2)).collect()
            }
            GridState::Price { .. } => nodes.clone(),
        })
        .collect();

    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n + 1];
    let mut continuation: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    values[n] = volumes
        .levels(n)
        .iter()
        .map(|&vol| spots[n].iter().map(|&s| penalty(contract, s, vol)).collect())
        .collect();

    for k in (0..n).rev() {
        let cont: Vec<Vec<f64>> = values[k + 1]
            .par_iter()
            .map(|v| {
                let mut cur = v.clone();
                let mut next = vec![0.0; cur.len()];
                for &l in schedule[k].iter().rev() {
                    mats[l].apply_into(&cur, &mut next);
                    std::mem::swap(&mut cur, &mut next);
                }
                cur
            })
            .collect();
        if cont.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SwingError::Numerical(format!("non-finite continuation value at date {k}")));
        }
        let units: Vec<f64> = spots[k]
            .iter()
            .map(|&s| unit_payoff(contract.payoff, SpotInfo::spot(s), contract.strike))
            .collect::<Result<_>>()?;
        let slice: Vec<Vec<f64>> = volumes
            .levels(k)
            .par_iter()
            .map(|&vol| {
                let candidates = match options.controls {
                    ControlSet::Full => volumes.controls(k, vol),
                    ControlSet::BangBang => volumes.endpoint_controls(k, vol),
                };
                let cols: Vec<(i64, &Vec<f64>)> = candidates
                    .iter()
                    .map(|&q| (q, &cont[volumes.index_of(k + 1, vol + q).expect("reachable volume node")]))
                    .collect();
                (0..nodes.len())
                    .map(|i| {
                        cols.iter()
                            .map(|(q, c)| *q as f64 * units[i] + c[i])
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect()
            })
            .collect();
        values[k] = slice;
        continuation[k] = cont;
    }

    let surface = GridSurface {
        grid,
        times,
        spots,
        values,
        continuation,
        x0,
        state: state.clone(),
        sim,
        noise_cut,
        controls: options.controls,
        mats,
        schedule,
    };
    Ok(ValueSurface {
        engine: EngineKind::Grid,
        m: options.m,
        contract: contract.clone(),
        volumes,
        diagnostics,
        kind: SurfaceKind::Grid(surface),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdpp_solver::{price, PolicySimulation};
    use crate::swing_contract::Constraint;

    fn reference_contract() -> ContractSpec {
        ContractSpec::firm(15, 6, 50, 80, 20.0).unwrap()
    }

    fn sim() -> PolicySimulation {
        PolicySimulation { paths: 2000, seed: 7 }
    }

    #[test]
    fn zero_vol_firm_prices_are_exact() {
        for f0 in [10.0, 20.0, 30.0] {
            let model = ModelSpec::one_factor(0.4, 0.0, f0).unwrap();
            let s = solve_grid(&GridState::Factor(model), &reference_contract(), &GridOptions::default()).unwrap();
            let want = 80.0 * (f0 - 20.0f64).max(0.0) - 50.0 * (20.0 - f0).max(0.0);
            let got = s.as_grid().unwrap().value_at_origin();
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "f0={f0}: {got} vs {want}");
        }
    }

    #[test]
    fn terminal_slice_is_the_penalty() {
        let contract = reference_contract().with_penalty(0.2, 0.2).unwrap();
        let model = ModelSpec::one_factor(0.4, 0.7, 20.0).unwrap();
        let s = solve_grid(&GridState::Factor(model), &contract, &GridOptions::default()).unwrap();
        let g = s.as_grid().unwrap();
        for (j, &vol) in s.volumes.levels(15).iter().enumerate() {
            for (i, &spot) in g.spots[15].iter().enumerate() {
                assert_eq!(g.values[15][j][i], penalty(&contract, spot, vol));
            }
        }
    }

    #[test]
    fn single_date_pen_without_penalty_is_the_payoff() {
        // One date, A = B = 0: the value is max over q of q (F0 - K).
        let contract = ContractSpec::firm(1, 3, 0, 3, 20.0)
            .unwrap()
            .with_penalty(0.0, 0.0)
            .unwrap();
        assert_eq!(contract.constraint, Constraint::Pen);
        for f0 in [15.0, 25.0] {
            let model = ModelSpec::one_factor(0.4, 0.5, f0).unwrap();
            let s = solve_grid(&GridState::Factor(model), &contract, &GridOptions::default()).unwrap();
            let got = s.as_grid().unwrap().value_at_origin();
            assert!((got - 3.0 * (f0 - 20.0f64).max(0.0)).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn one_date_call_continuation_matches_closed_form() {
        let model = ModelSpec::one_factor(0.4, 0.3, 20.0).unwrap();
        let contract = ContractSpec::firm(2, 1, 0, 2, 20.0).unwrap().with_payoff(PayoffKind::Call);
        let opts = GridOptions { transition: TransitionKind::ExactOu, ..GridOptions::default() };
        let s = solve_grid(&GridState::Factor(model.clone()), &contract, &opts).unwrap();
        let g = s.as_grid().unwrap();
        // Continuation at date 0, volume 0 is E (S_{t1} - K)_+ under the exact law.
        let t1 = g.times[1];
        let lam = lambda_sq(t1, &model).sqrt();
        // Log-normal call with total log-variance lam² and forward 20.
        let d1 = (lam * lam / 2.0) / lam;
        let want = 20.0 * norm_cdf(d1) - 20.0 * norm_cdf(d1 - lam);
        let j = s.volumes.index_of(1, 0).unwrap();
        let got = g.grid.interpolate(&g.continuation[0][j], 0.0);
        assert!((got - want).abs() < 2e-3 * want, "{got} vs {want}");
    }

    #[test]
    fn grid_price_matches_forward_simulation() {
        let model = ModelSpec::one_factor(0.4, 0.7, 22.0).unwrap();
        let s = solve_grid(&GridState::Factor(model), &reference_contract(), &GridOptions::default()).unwrap();
        let r = price(&s, PolicySimulation { paths: 20000, seed: 3 }).unwrap();
        let eval = crate::bdpp_solver::simulate_policy(&s, PolicySimulation { paths: 20000, seed: 3 }).unwrap();
        assert!((eval.mean - r.price).abs() < 4.0 * eval.std_error + 1e-6, "{} vs {}", eval.mean, r.price);
        let support = &r.policy_summary.terminal_volumes;
        assert!(support.iter().all(|(v, _)| (50..=80).contains(v)));
    }

    #[test]
    fn grid_delta_is_monotone_and_matches_differences() {
        let contract = reference_contract();
        let solve = |f0: f64| {
            let model = ModelSpec::one_factor(0.4, 0.7, f0).unwrap();
            solve_grid(&GridState::Factor(model), &contract, &GridOptions::default()).unwrap()
        };
        let deltas: Vec<f64> = [15.0, 17.5, 20.0, 22.5, 25.0]
            .iter()
            .map(|&f| {
                let s = solve(f);
                s.as_grid().unwrap().grid_delta(&s.contract, &s.volumes).unwrap()
            })
            .collect();
        assert!(deltas.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{deltas:?}");
        let v = |f: f64| solve(f).as_grid().unwrap().value_at_origin();
        let fd = (v(20.01) - v(19.99)) / 0.02;
        assert!((fd - deltas[2]).abs() < 1e-3 * fd.abs(), "{fd} vs {}", deltas[2]);
    }

    #[test]
    fn zero_vol_delta_is_the_volume() {
        for (f0, want) in [(30.0, 80.0), (10.0, 50.0)] {
            let model = ModelSpec::one_factor(0.4, 0.0, f0).unwrap();
            let s = solve_grid(&GridState::Factor(model), &reference_contract(), &GridOptions::default()).unwrap();
            let r = price(&s, sim()).unwrap();
            assert!((r.delta.unwrap() - want).abs() < 1e-10);
            let g = s.as_grid().unwrap().grid_delta(&s.contract, &s.volumes).unwrap();
            assert!((g - want).abs() < 1e-10);
        }
    }

    #[test]
    fn indexed_strike_is_rejected() {
        let model = ModelSpec::one_factor(0.4, 0.2, 20.0).unwrap();
        let c = reference_contract().with_payoff(PayoffKind::IndexedStrike);
        let err = solve_grid(&GridState::Factor(model), &c, &GridOptions::default()).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn substeps_converge_to_the_collapsed_law() {
        // Each sub-step re-interpolates, so the gap is O(dx²) per sub-step.
        let model = ModelSpec::one_factor(0.4, 0.7, 21.0).unwrap();
        let contract = ContractSpec::firm(5, 2, 4, 8, 20.0).unwrap();
        let gap = |points: usize| {
            let a = GridOptions { m: 4, x_points: points, ..GridOptions::default() };
            let b = GridOptions { transition: TransitionKind::EulerSubsteps, ..a.clone() };
            let va = solve_grid(&GridState::Factor(model.clone()), &contract, &a).unwrap();
            let vb = solve_grid(&GridState::Factor(model.clone()), &contract, &b).unwrap();
            let va = va.as_grid().unwrap().value_at_origin();
            (va - vb.as_grid().unwrap().value_at_origin()).abs() / va
        };
        let (coarse, fine) = (gap(201), gap(801));
        assert!(fine < coarse / 8.0, "{coarse} {fine}");
        assert!(fine < 1e-4, "{fine}");
    }

    #[test]
    fn price_state_needs_a_grid() {
        let st = GridState::forward_price(0.2, 0.4, 15.0 / 365.0, 20.0);
        assert!(solve_grid(&st, &reference_contract(), &GridOptions::default()).unwrap_err().is_config());
    }
}

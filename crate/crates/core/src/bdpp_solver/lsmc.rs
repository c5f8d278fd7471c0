//! Regression Monte Carlo engine on exactly simulated factor paths.

use nalgebra::{Cholesky, DMatrix};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{
    best_control, mean_and_se, summarize_volumes, ControlSet, EngineKind, PolicyEvaluation,
    PolicySimulation, SurfaceKind, ValueSurface,
};
use crate::error::{Result, SwingError};
use crate::market_models::{lambda_sq, spot_from_factors, uniform_times, ModelSpec};
use crate::schemes::path_rng;
use crate::swing_contract::{
    build_volume_grid, penalty, unit_payoff, ContractSpec, IndexWindow, PayoffKind, SpotInfo,
};

#[derive(Debug, Clone)]
pub struct LsmcOptions {
    pub paths: usize,
    pub seed: u64,
    /// Maximal total degree of the monomial basis.
    pub basis_degree: usize,
    /// Added to the diagonal of the normalised normal equations.
    pub ridge: f64,
    pub controls: ControlSet,
    pub delta_q: i64,
}

impl Default for LsmcOptions {
    fn default() -> Self {
        LsmcOptions {
            paths: 100_000,
            seed: 1,
            basis_degree: 3,
            ridge: 1e-10,
            controls: ControlSet::Full,
            delta_q: 1,
        }
    }
}

/// Factor values at the exercise dates of `count` independent paths.
#[derive(Debug, Clone)]
pub struct FactorPaths {
    pub times: Vec<f64>,
    pub count: usize,
    q: usize,
    alphas: Vec<f64>,
    rho: f64,
    /// `data[(k * count + p) * q + i]`.
    data: Vec<f64>,
}

impl FactorPaths {
    pub fn factors(&self, k: usize, p: usize) -> &[f64] {
        let at = (k * self.count + p) * self.q;
        &self.data[at..at + self.q]
    }

    pub fn factor_count(&self) -> usize {
        self.q
    }

    fn compatible(&self, model: &ModelSpec, contract: &ContractSpec) -> Result<()> {
        let same = self.q == model.factor_count()
            && self.alphas == model.mean_reversions()
            && self.rho == model.rho()
            && self.times.len() == contract.n + 1
            && (self.times[contract.n] - contract.maturity).abs() <= 1e-12 * contract.maturity;
        if same {
            Ok(())
        } else {
            Err(SwingError::config("factor paths were simulated for another model or date grid"))
        }
    }
}

/// Exact simulation of the OU factors at `t_k = k T / n`, started at zero.
///
/// Paths depend on the mean reversions and correlation only, so one ensemble
/// serves every initial curve and every vector of volatilities.
pub fn simulate_factor_paths(
    model: &ModelSpec,
    maturity: f64,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<FactorPaths> {
    if count == 0 || n == 0 {
        return Err(SwingError::config("need at least one path and one date"));
    }
    let q = model.factor_count();
    let dt = maturity / n as f64;
    let chol = Cholesky::new(model.step_covariance(dt))
        .ok_or_else(|| SwingError::Numerical("factor step covariance is not positive definite".into()))?
        .l();
    let decay: Vec<f64> = model.mean_reversions().iter().map(|a| (-a * dt).exp()).collect();
    let per_path: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let mut out = vec![0.0; (n + 1) * q];
            let mut z = vec![0.0; q];
            for k in 0..n {
                z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                for i in 0..q {
                    let noise: f64 = (0..=i).map(|j| chol[(i, j)] * z[j]).sum();
                    out[(k + 1) * q + i] = decay[i] * out[k * q + i] + noise;
                }
            }
            out
        })
        .collect();
    let mut data = vec![0.0; (n + 1) * count * q];
    for (p, path) in per_path.iter().enumerate() {
        for k in 0..=n {
            let at = (k * count + p) * q;
            data[at..at + q].copy_from_slice(&path[k * q..(k + 1) * q]);
        }
    }
    Ok(FactorPaths {
        times: uniform_times(maturity, n),
        count,
        q,
        alphas: model.mean_reversions().to_vec(),
        rho: model.rho(),
        data,
    })
}

/// Standardised monomial basis at one date.
#[derive(Debug, Clone)]
pub struct Basis {
    /// Indices of the raw features kept (nonconstant across paths).
    kept: Vec<usize>,
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Exponents over the kept features, one vector per column.
    exponents: Vec<Vec<u32>>,
}

impl Basis {
    pub fn columns(&self) -> usize {
        self.exponents.len()
    }

    fn row_into(&self, raw: &[f64], out: &mut [f64]) {
        let z: Vec<f64> = self
            .kept
            .iter()
            .enumerate()
            .map(|(f, &r)| (raw[r] - self.means[f]) / self.stds[f])
            .collect();
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e.iter().zip(&z).map(|(&p, &v)| v.powi(p as i32)).product();
        }
    }
}

/// Exponent vectors of all monomials in `vars` variables with total degree at
/// most `degree`, ordered by degree.
pub(crate) fn monomial_exponents(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(vars: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == vars {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=left {
            prefix.push(e);
            rec(vars, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    rec(vars, degree as u32, &mut Vec::new(), &mut all);
    all.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    all
}

fn fit_basis(raw: &[Vec<f64>], degree: usize) -> Basis {
    let count = raw.len() as f64;
    let width = raw.first().map_or(0, |r| r.len());
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for f in 0..width {
        let mean = raw.iter().map(|r| r[f]).sum::<f64>() / count;
        let var = raw.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / count;
        let scale = raw.iter().map(|r| r[f].abs()).fold(0.0, f64::max).max(1.0);
        if var.sqrt() > 1e-12 * scale {
            kept.push(f);
            means.push(mean);
            stds.push(var.sqrt());
        }
    }
    let exponents = monomial_exponents(kept.len(), degree);
    Basis { kept, means, stds, exponents }
}

/// Regression coefficients of the continuation values at one date.
#[derive(Debug, Clone)]
pub struct DateRegression {
    pub basis: Basis,
    /// `coefficients[j]` for volume node `levels(k+1)[j]`.
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LsmcSurface {
    pub model: ModelSpec,
    pub times: Vec<f64>,
    pub regressions: Vec<DateRegression>,
    /// Mean realised cash flow on the training paths.
    pub in_sample_value: f64,
    controls: ControlSet,
}

/// Raw regression features at date `k`: the factors, then the index level for
/// the indexed strike.
fn raw_features(factors: &[f64], index: Option<f64>) -> Vec<f64> {
    let mut out = factors.to_vec();
    out.extend(index);
    out
}

/// Spot history helper shared by the backward and forward passes.
struct PathSpots<'a> {
    model: &'a ModelSpec,
    times: &'a [f64],
    lambdas: Vec<f64>,
}

impl<'a> PathSpots<'a> {
    fn new(model: &'a ModelSpec, times: &'a [f64]) -> Self {
        let lambdas = times.iter().map(|&t| lambda_sq(t, model)).collect();
        PathSpots { model, times, lambdas }
    }

    fn spot(&self, paths: &FactorPaths, k: usize, p: usize) -> f64 {
        spot_from_factors(self.times[k], paths.factors(k, p), self.model, self.lambdas[k])
    }
}

fn spot_info(contract: &ContractSpec, k: usize, history: &[f64]) -> SpotInfo {
    let spot = history[k];
    match contract.payoff {
        PayoffKind::IndexedStrike => SpotInfo { spot, index: Some(contract.index_level(k, &history[..=k])) },
        _ => SpotInfo::spot(spot),
    }
}

fn index_feature(contract: &ContractSpec, k: usize, history: &[f64]) -> Option<f64> {
    (contract.payoff == PayoffKind::IndexedStrike).then(|| contract.index_level(k, &history[..=k]))
}

/// Solves on freshly simulated training paths.
pub fn solve_lsmc(model: &ModelSpec, contract: &ContractSpec, options: &LsmcOptions) -> Result<ValueSurface> {
    let paths = simulate_factor_paths(model, contract.maturity, contract.n, options.paths, options.seed)?;
    solve_lsmc_on(&paths, model, contract, options)
}

/// Solves on a given training ensemble.
pub fn solve_lsmc_on(
    paths: &FactorPaths,
    model: &ModelSpec,
    contract: &ContractSpec,
    options: &LsmcOptions,
) -> Result<ValueSurface> {
    contract.validate()?;
    paths.compatible(model, contract)?;
    if paths.count < 2 {
        return Err(SwingError::config("regression needs at least two training paths"));
    }
    let volumes = build_volume_grid(contract, options.delta_q)?;
    let n = contract.n;
    let times = paths.times.clone();
    let spots_of = PathSpots::new(model, &times);
    let count = paths.count;
    let mut diagnostics = Vec::new();

    // Spot histories, path-major.
    let history: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|p| (0..=n).map(|k| spots_of.spot(paths, k, p)).collect())
        .collect();

    // Realised values per volume node at date k+1: column j holds the paths.
    let terminal = volumes.levels(n);
    let mut realised = DMatrix::from_fn(count, terminal.len(), |p, j| {
        penalty(contract, history[p][n], terminal[j])
    });
    let mut regressions: Vec<Option<DateRegression>> = vec![None; n];

    for k in (0..n).rev() {
        let raw: Vec<Vec<f64>> = (0..count)
            .map(|p| raw_features(paths.factors(k, p), index_feature(contract, k, &history[p])))
            .collect();
        let (reg, fitted) = regress(&raw, &realised, options, k, &mut diagnostics)?;

        let units: Vec<f64> = (0..count)
            .map(|p| unit_payoff(contract.payoff, spot_info(contract, k, &history[p]), contract.strike))
            .collect::<Result<_>>()?;
        let levels = volumes.levels(k);
        let candidates: Vec<Vec<(i64, usize)>> = levels
            .iter()
            .map(|&vol| {
                let qs = match options.controls {
                    ControlSet::Full => volumes.controls(k, vol),
                    ControlSet::BangBang => volumes.endpoint_controls(k, vol),
                };
                qs.into_iter()
                    .map(|q| (q, volumes.index_of(k + 1, vol + q).expect("reachable volume node")))
                    .collect()
            })
            .collect();
        let columns: Vec<Vec<f64>> = candidates
            .par_iter()
            .map(|cands| {
                let qs: Vec<i64> = cands.iter().map(|c| c.0).collect();
                (0..count)
                    .map(|p| {
                        let (q, _) = best_control(&qs, units[p], |q| {
                            let j = cands.iter().find(|c| c.0 == q).unwrap().1;
                            fitted[(p, j)]
                        });
                        let j = cands.iter().find(|c| c.0 == q).unwrap().1;
                        q as f64 * units[p] + realised[(p, j)]
                    })
                    .collect()
            })
            .collect();
        realised = DMatrix::from_fn(count, levels.len(), |p, j| columns[j][p]);
        regressions[k] = Some(reg);
    }

    let first: Vec<f64> = realised.column(0).iter().copied().collect();
    let (in_sample_value, _) = mean_and_se(&first);
    let surface = LsmcSurface {
        model: model.clone(),
        times,
        regressions: regressions.into_iter().map(|r| r.expect("every date regressed")).collect(),
        in_sample_value,
        controls: options.controls,
    };
    Ok(ValueSurface {
        engine: EngineKind::Lsmc,
        m: 1,
        contract: contract.clone(),
        volumes,
        diagnostics,
        kind: SurfaceKind::Lsmc(surface),
    })
}

/// Least squares of every column of `targets` on the basis built from `raw`,
/// lowering the degree until the normal equations factorise.
fn regress(
    raw: &[Vec<f64>],
    targets: &DMatrix<f64>,
    options: &LsmcOptions,
    k: usize,
    diagnostics: &mut Vec<String>,
) -> Result<(DateRegression, DMatrix<f64>)> {
    let count = raw.len();
    for degree in (0..=options.basis_degree).rev() {
        let basis = fit_basis(raw, degree);
        let cols = basis.columns();
        let mut design = DMatrix::zeros(count, cols);
        let mut row = vec![0.0; cols];
        for (p, r) in raw.iter().enumerate() {
            basis.row_into(r, &mut row);
            for (c, v) in row.iter().enumerate() {
                design[(p, c)] = *v;
            }
        }
        let mut gram = design.tr_mul(&design) / count as f64;
        for c in 0..cols {
            gram[(c, c)] += options.ridge;
        }
        let Some(chol) = Cholesky::new(gram) else {
            diagnostics.push(format!("date {k}: normal equations singular at degree {degree}; lowering"));
            continue;
        };
        let rhs = design.tr_mul(targets) / count as f64;
        let beta = chol.solve(&rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            diagnostics.push(format!("date {k}: non-finite coefficients at degree {degree}; lowering"));
            continue;
        }
        let fitted = &design * &beta;
        let coefficients = (0..beta.ncols()).map(|j| beta.column(j).iter().copied().collect()).collect();
        return Ok((DateRegression { basis, coefficients }, fitted));
    }
    Err(SwingError::Numerical(format!("regression failed at date {k} for every degree")))
}

impl LsmcSurface {
    pub(crate) fn fresh_paths(&self, sim: PolicySimulation) -> Result<FactorPaths> {
        let n = self.times.len() - 1;
        simulate_factor_paths(&self.model, self.times[n], n, sim.paths, sim.seed)
    }

    /// Simulates the regression policy on `paths`, which should be independent
    /// of the training ensemble for a low-biased price.
    pub fn simulate_on(&self, surface: &ValueSurface, paths: &FactorPaths) -> Result<PolicyEvaluation> {
        let contract = &surface.contract;
        let volumes = &surface.volumes;
        paths.compatible(&self.model, contract)?;
        let n = contract.n;
        let spots_of = PathSpots::new(&self.model, &self.times);
        let f0: Vec<f64> = self.times.iter().map(|&t| self.model.f0(t)).collect();
        let rows: Vec<Result<(f64, Vec<f64>, i64)>> = (0..paths.count)
            .into_par_iter()
            .map(|p| {
                let history: Vec<f64> = (0..=n).map(|k| spots_of.spot(paths, k, p)).collect();
                let mut volume = 0i64;
                let mut cash = 0.0;
                let mut dby = vec![0.0; n + 1];
                let mut phi = Vec::new();
                for k in 0..n {
                    let info = spot_info(contract, k, &history);
                    let unit = unit_payoff(contract.payoff, info, contract.strike)?;
                    let reg = &self.regressions[k];
                    phi.resize(reg.basis.columns(), 0.0);
                    let raw = raw_features(paths.factors(k, p), index_feature(contract, k, &history));
                    reg.basis.row_into(&raw, &mut phi);
                    let candidates = match self.controls {
                        ControlSet::Full => volumes.controls(k, volume),
                        ControlSet::BangBang => volumes.endpoint_controls(k, volume),
                    };
                    let (q, _) = best_control(&candidates, unit, |q| {
                        let j = volumes.index_of(k + 1, volume + q).expect("reachable volume node");
                        reg.coefficients[j].iter().zip(&phi).map(|(b, f)| b * f).sum()
                    });
                    cash += q as f64 * unit;
                    let qf = q as f64;
                    match contract.payoff {
                        PayoffKind::FixedStrike => dby[k] += qf * history[k] / f0[k],
                        PayoffKind::Call => {
                            if history[k] > contract.strike {
                                dby[k] += qf * history[k] / f0[k];
                            }
                        }
                        PayoffKind::IndexedStrike => {
                            dby[k] += qf * history[k] / f0[k];
                            if k == 0 {
                                dby[0] -= qf * history[0] / f0[0];
                            } else {
                                let start = match contract.index_window {
                                    IndexWindow::Full => 0,
                                    IndexWindow::Lookback(l) => k.saturating_sub(l),
                                };
                                let w = qf / (k - start) as f64;
                                for i in start..k {
                                    dby[i] -= w * history[i] / f0[i];
                                }
                            }
                        }
                    }
                    volume += q;
                }
                cash += penalty(contract, history[n], volume);
                dby[n] -= contract.penalty_units(volume) * history[n] / f0[n];
                if !cash.is_finite() {
                    return Err(SwingError::NonFinite { path: p, step: n });
                }
                Ok((cash, dby, volume))
            })
            .collect();
        let rows: Vec<(f64, Vec<f64>, i64)> = rows.into_iter().collect::<Result<_>>()?;
        let path_values: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let path_deltas: Vec<f64> = rows.iter().map(|r| r.1.iter().sum()).collect();
        let final_volumes: Vec<i64> = rows.iter().map(|r| r.2).collect();
        let (mean, std_error) = mean_and_se(&path_values);
        let (delta, delta_std_error) = mean_and_se(&path_deltas);
        let delta_by_date = (0..=n)
            .map(|k| rows.iter().map(|r| r.1[k]).sum::<f64>() / rows.len() as f64)
            .collect();
        Ok(PolicyEvaluation {
            mean,
            std_error,
            delta: Some(delta),
            delta_std_error,
            delta_by_date,
            summary: summarize_volumes(&final_volumes),
            path_values,
            path_deltas,
        })
    }
}

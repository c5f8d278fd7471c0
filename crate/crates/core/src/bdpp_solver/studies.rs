//! Comparisons between grid value surfaces.

use serde::{Deserialize, Serialize};

use super::{solve_grid, ControlSet, GridOptions, GridState, TransitionKind, ValueSurface};
use crate::error::{Result, SwingError};
use crate::grid::second_differences;
use crate::swing_contract::{ContractSpec, VolumeGrid};

/// Largest pointwise excess of one surface over another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceComparison {
    /// `max (a - b)` over all `(k, x-node, Q)`.
    pub max_excess: f64,
    pub max_abs_difference: f64,
    /// `(k, x-node index, Q)` of the largest excess.
    pub worst: (usize, usize, i64),
}

/// Compares two grid surfaces solved on the same grids.
pub fn compare_surfaces(a: &ValueSurface, b: &ValueSurface) -> Result<SurfaceComparison> {
    let (ga, gb) = match (a.as_grid(), b.as_grid()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(SwingError::config("surface comparison needs two grid surfaces")),
    };
    if ga.grid != gb.grid || a.volumes != b.volumes {
        return Err(SwingError::config("surfaces live on different grids"));
    }
    let mut out = SurfaceComparison { max_excess: f64::NEG_INFINITY, max_abs_difference: 0.0, worst: (0, 0, 0) };
    for k in 0..ga.values.len() {
        for (j, &vol) in a.volumes.levels(k).iter().enumerate() {
            for (i, (x, y)) in ga.values[k][j].iter().zip(&gb.values[k][j]).enumerate() {
                let d = x - y;
                if d > out.max_excess {
                    out.max_excess = d;
                    out.worst = (k, i, vol);
                }
                out.max_abs_difference = out.max_abs_difference.max(d.abs());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BangBangReport {
    /// Largest `|v_full - v_endpoint|` over `(k, x-node, Q)` with `Q` reachable
    /// from `Q_0 = 0` by endpoint controls.
    pub max_abs_discrepancy: f64,
    /// `(k, x-node index, Q)` of that discrepancy.
    pub worst: (usize, usize, i64),
    /// Same maximum over every volume node, reachable or not.
    pub max_abs_discrepancy_all_nodes: f64,
    pub worst_all_nodes: (usize, usize, i64),
    /// Volume nodes reachable by endpoint controls, per date.
    pub reachable: Vec<Vec<i64>>,
    pub full_price: f64,
    pub bang_bang_price: f64,
}

/// Volumes reachable from zero when every control is an endpoint of its
/// admissible interval.
pub fn endpoint_reachable(volumes: &VolumeGrid) -> Vec<Vec<i64>> {
    let n = volumes.n();
    let mut out: Vec<Vec<i64>> = vec![vec![0]];
    for k in 0..n {
        let mut next: Vec<i64> = out[k]
            .iter()
            .flat_map(|&vol| volumes.endpoint_controls(k, vol).into_iter().map(move |q| vol + q))
            .collect();
        next.sort_unstable();
        next.dedup();
        out.push(next);
    }
    out
}

/// Solves with endpoint controls and with full enumeration and compares the
/// value surfaces node by node.
pub fn bang_bang_vs_enumeration(
    state: &GridState,
    contract: &ContractSpec,
    options: &GridOptions,
) -> Result<BangBangReport> {
    let full = solve_grid(state, contract, &GridOptions { controls: ControlSet::Full, ..options.clone() })?;
    let bang = solve_grid(state, contract, &GridOptions { controls: ControlSet::BangBang, ..options.clone() })?;
    let (gf, gb) = (full.as_grid().expect("grid engine"), bang.as_grid().expect("grid engine"));
    let reachable = endpoint_reachable(&full.volumes);
    let mut report = BangBangReport {
        max_abs_discrepancy: 0.0,
        worst: (0, 0, 0),
        max_abs_discrepancy_all_nodes: 0.0,
        worst_all_nodes: (0, 0, 0),
        reachable,
        full_price: gf.value_at_origin(),
        bang_bang_price: gb.value_at_origin(),
    };
    for k in 0..gf.values.len() {
        for (j, &vol) in full.volumes.levels(k).iter().enumerate() {
            let on_path = report.reachable[k].contains(&vol);
            for (i, (a, b)) in gf.values[k][j].iter().zip(&gb.values[k][j]).enumerate() {
                let d = (a - b).abs();
                if d > report.max_abs_discrepancy_all_nodes {
                    report.max_abs_discrepancy_all_nodes = d;
                    report.worst_all_nodes = (k, i, vol);
                }
                if on_path && d > report.max_abs_discrepancy {
                    report.max_abs_discrepancy = d;
                    report.worst = (k, i, vol);
                }
            }
        }
    }
    Ok(report)
}

/// Largest discrete slope `|v_k(x_{i+1}, Q) - v_k(x_i, Q)| / Δx` per date.
pub fn empirical_lipschitz(surface: &ValueSurface) -> Result<Vec<f64>> {
    let g = surface
        .as_grid()
        .ok_or_else(|| SwingError::config("slopes need a grid surface"))?;
    let dx = g.grid.step();
    Ok(g.values
        .iter()
        .map(|slice| {
            slice
                .iter()
                .flat_map(|v| v.windows(2).map(|w| (w[1] - w[0]).abs() / dx))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Smallest discrete second difference over every slice `v_k(·, Q)`.
pub fn min_second_difference(surface: &ValueSurface) -> Result<f64> {
    let g = surface
        .as_grid()
        .ok_or_else(|| SwingError::config("convexity check needs a grid surface"))?;
    Ok(g.values
        .iter()
        .flatten()
        .flat_map(|v| second_differences(v))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRefinementRow {
    pub m: usize,
    pub price: f64,
    /// `|v^(m) - v^(m')|` against the previous row.
    pub gap_to_previous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRefinementStudy {
    pub rows: Vec<MRefinementRow>,
    /// Price under the exact OU transition, when the state allows it.
    pub reference: Option<f64>,
}

impl MRefinementStudy {
    pub fn gaps_shrink(&self) -> bool {
        let gaps: Vec<f64> = self.rows.iter().filter_map(|r| r.gap_to_previous).collect();
        gaps.windows(2).all(|w| w[1] < w[0])
    }

    /// `|v^(m_last) - reference| / |reference|`.
    pub fn final_relative_error(&self) -> Option<f64> {
        let last = self.rows.last()?.price;
        self.reference.map(|r| (last - r).abs() / r.abs())
    }
}

/// Grid prices for each `m` on the same x-grid, with the exact-transition
/// reference for the factor state.
pub fn m_refinement_study(
    state: &GridState,
    contract: &ContractSpec,
    ms: &[usize],
    options: &GridOptions,
) -> Result<MRefinementStudy> {
    let mut rows: Vec<MRefinementRow> = Vec::with_capacity(ms.len());
    for &m in ms {
        let s = solve_grid(state, contract, &GridOptions { m, ..options.clone() })?;
        let price = s.as_grid().expect("grid engine").value_at_origin();
        let gap_to_previous = rows.last().map(|r| (price - r.price).abs());
        rows.push(MRefinementRow { m, price, gap_to_previous });
    }
    let reference = match state {
        GridState::Factor(_) => {
            let opts = GridOptions { transition: TransitionKind::ExactOu, m: 1, truncation: None, ..options.clone() };
            Some(solve_grid(state, contract, &opts)?.as_grid().expect("grid engine").value_at_origin())
        }
        GridState::Price { .. } => None,
    };
    Ok(MRefinementStudy { rows, reference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use crate::market_models::ModelSpec;
    use crate::swing_contract::PayoffKind;

    #[test]
    fn zero_vol_m_refinement_is_flat() {
        let model = ModelSpec::one_factor(0.4, 0.0, 25.0).unwrap();
        let contract = ContractSpec::firm(15, 6, 50, 80, 20.0).unwrap();
        let study = m_refinement_study(&GridState::Factor(model), &contract, &[1, 2, 4], &GridOptions::default()).unwrap();
        for r in &study.rows {
            assert!((r.price - 400.0).abs() < 1e-10);
        }
        assert!((study.reference.unwrap() - 400.0).abs() < 1e-10);
    }

    #[test]
    fn self_comparison_is_zero() {
        let model = ModelSpec::one_factor(0.4, 0.5, 20.0).unwrap();
        let contract = ContractSpec::firm(5, 2, 4, 8, 20.0).unwrap().with_payoff(PayoffKind::Call);
        let s = solve_grid(&GridState::Factor(model), &contract, &GridOptions::default()).unwrap();
        let c = compare_surfaces(&s, &s).unwrap();
        assert_eq!(c.max_abs_difference, 0.0);
        assert!(min_second_difference(&s).unwrap() > -1e-9);
    }

    #[test]
    fn slopes_of_the_price_state_are_bounded_by_remaining_volume() {
        let contract = ContractSpec::firm(5, 2, 4, 8, 20.0).unwrap();
        let state = GridState::forward_price(0.7, 0.4, contract.maturity, 20.0);
        let opts = GridOptions { x_grid: Some(UniformGrid::new(0.0, 60.0, 301).unwrap()), ..GridOptions::default() };
        let s = solve_grid(&state, &contract, &opts).unwrap();
        let slopes = empirical_lipschitz(&s).unwrap();
        for (k, sl) in slopes.iter().enumerate().take(5) {
            assert!(*sl <= 2.0 * (5 - k) as f64 + 1e-6, "k={k}: {sl}");
        }
    }
}

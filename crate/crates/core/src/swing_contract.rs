//! Swing contract terms: volume constraints, admissible controls, payoffs and
//! the terminal penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SwingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Hard global constraint `Q_n ∈ [Q_min, Q_max]`.
    Firm,
    /// Violations allowed and charged at maturity.
    Pen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    FixedStrike,
    IndexedStrike,
    Call,
}

/// Averaging window `I_k` of the indexed strike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexWindow {
    /// `I_k = {0, …, k-1}`.
    Full,
    /// `I_k = {k-L, …, k-1} ∩ {0, …}`.
    Lookback(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub n: usize,
    pub maturity: f64,
    /// Local bound `q̄` per date (the local lower bound is zero).
    pub q_max: i64,
    /// Global lower bound `Q̲`.
    pub volume_min: i64,
    /// Global upper bound `Q̄`.
    pub volume_max: i64,
    pub strike: f64,
    pub constraint: Constraint,
    pub penalty_a: f64,
    pub penalty_b: f64,
    pub payoff: PayoffKind,
    pub index_window: IndexWindow,
}

impl ContractSpec {
    /// Firm fixed-strike contract with daily exercise (`T = n / 365`).
    pub fn firm(n: usize, q_max: i64, volume_min: i64, volume_max: i64, strike: f64) -> Result<Self> {
        let spec = ContractSpec {
            n,
            maturity: n as f64 / 365.0,
            q_max,
            volume_min,
            volume_max,
            strike,
            constraint: Constraint::Firm,
            penalty_a: 0.0,
            penalty_b: 0.0,
            payoff: PayoffKind::FixedStrike,
            index_window: IndexWindow::Full,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_payoff(mut self, payoff: PayoffKind) -> Self {
        self.payoff = payoff;
        self
    }

    pub fn with_penalty(mut self, a: f64, b: f64) -> Result<Self> {
        self.constraint = Constraint::Pen;
        self.penalty_a = a;
        self.penalty_b = b;
        self.validate()?;
        Ok(self)
    }

    pub fn with_maturity(mut self, maturity: f64) -> Result<Self> {
        self.maturity = maturity;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(SwingError::config(m));
        if self.n == 0 {
            return err("n_exercise must be positive".into());
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return err(format!("maturity must be > 0, got {}", self.maturity));
        }
        if self.q_max <= 0 {
            return err(format!("q_max must be positive, got {}", self.q_max));
        }
        if self.volume_min < 0 || self.volume_min > self.volume_max {
            return err(format!(
                "need 0 <= Q_min <= Q_max, got [{}, {}]",
                self.volume_min, self.volume_max
            ));
        }
        if (self.volume_max - self.volume_min) % self.q_max != 0 {
            return err(format!(
                "Q_max - Q_min = {} is not a multiple of q_max = {}",
                self.volume_max - self.volume_min,
                self.q_max
            ));
        }
        if self.constraint == Constraint::Firm && self.volume_min > self.n as i64 * self.q_max {
            return err(format!(
                "firm contract infeasible: Q_min = {} exceeds n * q_max = {}",
                self.volume_min,
                self.n as i64 * self.q_max
            ));
        }
        if !self.strike.is_finite() {
            return err("strike must be finite".into());
        }
        if !(self.penalty_a >= 0.0 && self.penalty_b >= 0.0)
            || !(self.penalty_a.is_finite() && self.penalty_b.is_finite())
        {
            return err("penalty coefficients must be finite and >= 0".into());
        }
        if self.index_window == IndexWindow::Lookback(0) {
            return err("index window of length 0 is empty".into());
        }
        Ok(())
    }

    /// Lower end `Q^d(t_k)` of the attainable cumulative volume.
    pub fn lower_attainable(&self, k: usize) -> i64 {
        match self.constraint {
            Constraint::Firm => (self.volume_min - (self.n - k) as i64 * self.q_max).max(0),
            Constraint::Pen => 0,
        }
    }

    /// Upper end `Q^u(t_k)` of the attainable cumulative volume.
    pub fn upper_attainable(&self, k: usize) -> i64 {
        match self.constraint {
            Constraint::Firm => (k as i64 * self.q_max).min(self.volume_max),
            Constraint::Pen => k as i64 * self.q_max,
        }
    }

    /// Admissible control interval at date `k` with cumulative volume `volume`.
    pub fn admissible(&self, k: usize, volume: i64) -> (i64, i64) {
        match self.constraint {
            Constraint::Firm => (
                (self.lower_attainable(k + 1) - volume).max(0),
                self.q_max.min(self.upper_attainable(k + 1) - volume),
            ),
            Constraint::Pen => (0, self.q_max),
        }
    }

    /// `A (Q - Q̲)_- + B (Q - Q̄)_+`: penalty per unit of terminal spot.
    pub fn penalty_units(&self, volume: i64) -> f64 {
        match self.constraint {
            Constraint::Firm => 0.0,
            Constraint::Pen => {
                self.penalty_a * (self.volume_min - volume).max(0) as f64
                    + self.penalty_b * (volume - self.volume_max).max(0) as f64
            }
        }
    }

    /// Index level for the indexed strike at date `k`. `spots` holds
    /// `S_{t_0}, …, S_{t_k}`. At `k = 0` the past is empty and the index is `S_{t_0}`.
    pub fn index_level(&self, k: usize, spots: &[f64]) -> f64 {
        if k == 0 {
            return spots[0];
        }
        let start = match self.index_window {
            IndexWindow::Full => 0,
            IndexWindow::Lookback(l) => k.saturating_sub(l),
        };
        spots[start..k].iter().sum::<f64>() / (k - start) as f64
    }
}

/// Spot information a payoff may depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotInfo {
    pub spot: f64,
    /// Running index average, required by the indexed strike.
    pub index: Option<f64>,
}

impl SpotInfo {
    pub fn spot(spot: f64) -> Self {
        SpotInfo { spot, index: None }
    }
}

/// Payoff `Ψ_k(q, ·)` of exercising volume `q`.
pub fn payoff(kind: PayoffKind, q: f64, info: SpotInfo, strike: f64) -> Result<f64> {
    Ok(q * unit_payoff(kind, info, strike)?)
}

/// Payoff per unit volume.
#[inline]
pub fn unit_payoff(kind: PayoffKind, info: SpotInfo, strike: f64) -> Result<f64> {
    match kind {
        PayoffKind::FixedStrike => Ok(info.spot - strike),
        PayoffKind::Call => Ok((info.spot - strike).max(0.0)),
        PayoffKind::IndexedStrike => info
            .index
            .map(|idx| info.spot - idx)
            .ok_or_else(|| SwingError::config("indexed strike needs a nonempty index window")),
    }
}

/// Terminal condition `P_c(t_n, S, Q_n)`.
pub fn penalty(contract: &ContractSpec, terminal_spot: f64, volume: i64) -> f64 {
    match contract.constraint {
        Constraint::Firm => 0.0,
        Constraint::Pen => -terminal_spot * contract.penalty_units(volume),
    }
}

/// Discretised attainable volumes per date and the admissible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    delta_q: i64,
    /// `levels[k]` lists the volume nodes at date `k`, increasing.
    levels: Vec<Vec<i64>>,
    contract: ContractSpec,
}

fn ceil_to(v: i64, step: i64) -> i64 {
    v.div_euclid(step) * step + if v.rem_euclid(step) == 0 { 0 } else { step }
}

fn floor_to(v: i64, step: i64) -> i64 {
    v.div_euclid(step) * step
}

pub fn build_volume_grid(contract: &ContractSpec, delta_q: i64) -> Result<VolumeGrid> {
    contract.validate()?;
    if delta_q <= 0 || contract.q_max % delta_q != 0 {
        return Err(SwingError::config(format!(
            "delta_q = {delta_q} must be a positive divisor of q_max = {}",
            contract.q_max
        )));
    }
    let levels: Vec<Vec<i64>> = (0..=contract.n)
        .map(|k| {
            let lo = ceil_to(contract.lower_attainable(k), delta_q);
            let hi = floor_to(contract.upper_attainable(k), delta_q);
            (0..)
                .map(|i| lo + i * delta_q)
                .take_while(|&v| v <= hi)
                .collect()
        })
        .collect();
    if levels.iter().any(|l| l.is_empty()) {
        return Err(SwingError::config("volume grid has an empty date; no feasible consumption"));
    }
    Ok(VolumeGrid { delta_q, levels, contract: contract.clone() })
}

impl VolumeGrid {
    pub fn delta_q(&self) -> i64 {
        self.delta_q
    }

    pub fn n(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self, k: usize) -> &[i64] {
        &self.levels[k]
    }

    /// Position of `volume` among the nodes of date `k`.
    pub fn index_of(&self, k: usize, volume: i64) -> Option<usize> {
        let level = &self.levels[k];
        let first = *level.first()?;
        let off = volume - first;
        if off < 0 || off % self.delta_q != 0 {
            return None;
        }
        let i = (off / self.delta_q) as usize;
        (i < level.len()).then_some(i)
    }

    /// All discretised admissible controls at `(k, volume)`.
    pub fn controls(&self, k: usize, volume: i64) -> Vec<i64> {
        let (lo, hi) = self.contract.admissible(k, volume);
        let lo = ceil_to(lo, self.delta_q);
        let hi = floor_to(hi, self.delta_q);
        (0..).map(|i| lo + i * self.delta_q).take_while(|&q| q <= hi).collect()
    }

    /// Endpoints of the discretised admissible set.
    pub fn endpoint_controls(&self, k: usize, volume: i64) -> Vec<i64> {
        let all = self.controls(k, volume);
        match (all.first(), all.last()) {
            (Some(&a), Some(&b)) if a != b => vec![a, b],
            (Some(&a), _) => vec![a],
            _ => vec![],
        }
    }

    pub fn contract(&self) -> &ContractSpec {
        &self.contract
    }
}

//! Uniform one-dimensional state grid with linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SwingError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl UniformGrid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(SwingError::config(format!("invalid grid bounds [{min}, {max}]")));
        }
        if points < 3 {
            return Err(SwingError::config("grid needs at least 3 points"));
        }
        Ok(UniformGrid { min, max, points })
    }

    /// Grid centred at `center` with half-width `half_width`.
    pub fn centered(center: f64, half_width: f64, points: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, points)
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.max
        } else {
            self.min + self.step() * i as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    /// Left neighbour index and weight on the right neighbour. Outside the grid
    /// the weight leaves `[0, 1]`, which continues the end segment linearly.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let mut u = (x - self.min) / self.step();
        // Points within rounding of a node sit on it, so node values come back exactly.
        if (u - u.round()).abs() < 1e-9 {
            u = u.round();
        }
        let i = (u.floor().max(0.0) as usize).min(self.points - 2);
        (i, u - i as f64)
    }

    /// Linear interpolation of grid values, with linear extrapolation.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (i, w) = self.locate(x);
        (1.0 - w) * values[i] + w * values[i + 1]
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let u = ((x - self.min) / self.step()).round();
        (u.max(0.0) as usize).min(self.points - 1)
    }
}

/// Centred second differences `f_{i-1} - 2 f_i + f_{i+1}` at interior points.
pub fn second_differences(values: &[f64]) -> Vec<f64> {
    values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect()
}

//! Log-normal forward-curve models driven by Ornstein–Uhlenbeck factors.
//!
//! The forward price with delivery `T` follows
//!
//! ```text
//! dF(t, T) / F(t, T) = Σ_i σ̃_i exp(-α_i (T - t)) dW_i(t)
//! ```
//!
//! with equicorrelated Brownian motions, `d<W_i, W_j> = ρ dt` for `i ≠ j`.
//! The spot `S_t = F(t, t)` is a deterministic function of the factor vector
//! `X_t^i = ∫_0^t exp(-α_i (t - s)) dW_i(s)`:
//!
//! ```text
//! S_t = F(0, t) · exp(<σ̃, X_t> - λ_t² / 2)
//! ```
//!
//! where `λ_t²` is the variance of `<σ̃, X_t>`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SwingError};

/// Initial forward curve `t ↦ F(0, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialCurve {
    Flat(f64),
    /// Step curve: `values[k]` applies on `[times[k], times[k + 1])`.
    Steps { times: Vec<f64>, values: Vec<f64> },
}

impl InitialCurve {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            InitialCurve::Flat(f0) => *f0,
            InitialCurve::Steps { times, values } => {
                let idx = times.partition_point(|&s| s <= t + 1e-12);
                values[idx.saturating_sub(1).min(values.len() - 1)]
            }
        }
    }

    /// Multiplies the whole curve by `factor`.
    pub fn scaled(&self, factor: f64) -> InitialCurve {
        match self {
            InitialCurve::Flat(f0) => InitialCurve::Flat(f0 * factor),
            InitialCurve::Steps { times, values } => InitialCurve::Steps {
                times: times.clone(),
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, InitialCurve::Flat(_))
    }

    fn validate(&self) -> Result<()> {
        match self {
            InitialCurve::Flat(f0) if *f0 > 0.0 && f0.is_finite() => Ok(()),
            InitialCurve::Flat(f0) => Err(SwingError::config(format!(
                "initial forward must be positive, got {f0}"
            ))),
            InitialCurve::Steps { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(SwingError::config(
                        "initial curve needs matching, nonempty times and values",
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(SwingError::config("initial curve times must increase"));
                }
                if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(SwingError::config(format!(
                        "initial curve values must be positive, got {v}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One-factor or q-factor log-normal forward model with equicorrelation `ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    mean_reversions: Vec<f64>,
    vols: Vec<f64>,
    rho: f64,
    initial_curve: InitialCurve,
}

impl ModelSpec {
    /// Builds and validates a model. `mean_reversions` (α, 1/years) and
    /// `vols` (σ̃, 1/√years) must have one entry per factor.
    pub fn new(
        mean_reversions: Vec<f64>,
        vols: Vec<f64>,
        rho: f64,
        initial_curve: InitialCurve,
    ) -> Result<Self> {
        let q = mean_reversions.len();
        if q == 0 {
            return Err(SwingError::config("factor_count must be at least 1"));
        }
        if vols.len() != q {
            return Err(SwingError::config(format!(
                "expected {q} volatilities, got {}",
                vols.len()
            )));
        }
        if let Some(a) = mean_reversions.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(SwingError::config(format!("mean reversion must be > 0, got {a}")));
        }
        if let Some(s) = vols.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(SwingError::config(format!("volatility must be >= 0, got {s}")));
        }
        if q >= 2 {
            check_rho(rho, q).map_err(|e| SwingError::config(e.to_string()))?;
        }
        initial_curve.validate()?;
        Ok(ModelSpec {
            mean_reversions,
            vols,
            rho: if q == 1 { 0.0 } else { rho },
            initial_curve,
        })
    }

    pub fn one_factor(alpha: f64, sigma: f64, f0: f64) -> Result<Self> {
        Self::new(vec![alpha], vec![sigma], 0.0, InitialCurve::Flat(f0))
    }

    pub fn factor_count(&self) -> usize {
        self.mean_reversions.len()
    }

    pub fn mean_reversions(&self) -> &[f64] {
        &self.mean_reversions
    }

    pub fn vols(&self) -> &[f64] {
        &self.vols
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn initial_curve(&self) -> &InitialCurve {
        &self.initial_curve
    }

    pub fn f0(&self, t: f64) -> f64 {
        self.initial_curve.at(t)
    }

    pub fn with_initial_curve(&self, curve: InitialCurve) -> Result<Self> {
        Self::new(self.mean_reversions.clone(), self.vols.clone(), self.rho, curve)
    }

    pub fn with_flat_f0(&self, f0: f64) -> Result<Self> {
        self.with_initial_curve(InitialCurve::Flat(f0))
    }

    /// Correlation between factors `i` and `j`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            self.rho
        }
    }

    /// Cholesky factor `L(ρ)` of the factor correlation matrix.
    pub fn correlation_factor(&self) -> DMatrix<f64> {
        let q = self.factor_count();
        if q == 1 {
            DMatrix::identity(1, 1)
        } else {
            cholesky_explicit(self.rho, q).expect("rho validated at construction")
        }
    }

    /// Covariance of the exact factor increment over `dt`:
    /// `Cov(ξ_i, ξ_j) = ρ_ij (1 - exp(-(α_i + α_j) dt)) / (α_i + α_j)`.
    pub fn step_covariance(&self, dt: f64) -> DMatrix<f64> {
        let q = self.factor_count();
        DMatrix::from_fn(q, q, |i, j| {
            let a = self.mean_reversions[i] + self.mean_reversions[j];
            self.correlation(i, j) * (-(-a * dt).exp_m1()) / a
        })
    }
}

/// Checks that `ρ` lies in the open interval `(-1/(q-1), 1)`.
pub fn check_rho(rho: f64, q: usize) -> Result<()> {
    let lower = if q <= 1 { f64::NEG_INFINITY } else { -1.0 / (q as f64 - 1.0) };
    if rho.is_finite() && rho > lower && rho < 1.0 {
        Ok(())
    } else {
        Err(SwingError::domain(format!(
            "rho = {rho} outside ({lower}, 1) for q = {q}"
        )))
    }
}

/// Equicorrelation matrix `Γ(ρ)_ij = ρ + (1 - ρ) 1{i = j}`.
pub fn gamma_matrix(rho: f64, q: usize) -> Result<DMatrix<f64>> {
    if q == 0 {
        return Err(SwingError::domain("q must be positive"));
    }
    check_rho(rho, q)?;
    Ok(DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { rho }))
}

/// Closed-form lower Cholesky factor of `Γ(ρ)`.
///
/// Column `j` holds `d_j` on the diagonal and the constant `ℓ_j` below it, with
/// `d_1 = 1`, `ℓ_1 = ρ`, `d_j = √(d_{j-1}² - ℓ_{j-1}²)` and `ℓ_j = (ρ - 1)/d_j + d_j`.
pub fn cholesky_explicit(rho: f64, q: usize) -> Result<DMatrix<f64>> {
    check_rho(rho, q)?;
    let mut l = DMatrix::zeros(q, q);
    let (mut d, mut ell) = (1.0_f64, rho);
    for j in 0..q {
        if j > 0 {
            let d_sq = d * d - ell * ell;
            if d_sq <= 0.0 {
                return Err(SwingError::domain(format!(
                    "Cholesky recurrence broke down at column {j} (d² = {d_sq})"
                )));
            }
            d = d_sq.sqrt();
            ell = (rho - 1.0) / d + d;
        }
        l[(j, j)] = d;
        for i in (j + 1)..q {
            l[(i, j)] = ell;
        }
    }
    Ok(l)
}

/// Variance compensator `λ_t²` of `<σ̃, X_t>`.
pub fn lambda_sq(t: f64, model: &ModelSpec) -> f64 {
    let q = model.factor_count();
    let (a, s) = (model.mean_reversions(), model.vols());
    let mut total = 0.0;
    for i in 0..q {
        for j in 0..q {
            let rate = a[i] + a[j];
            total += model.correlation(i, j) * s[i] * s[j] * (-(-rate * t).exp_m1()) / rate;
        }
    }
    total
}

/// Factor vector at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub time: f64,
    pub factors: Vec<f64>,
}

impl FactorState {
    pub fn new(time: f64, factors: Vec<f64>) -> Self {
        FactorState { time, factors }
    }

    pub fn origin(q: usize) -> Self {
        FactorState { time: 0.0, factors: vec![0.0; q] }
    }
}

/// Spot price `F(0, t) · exp(<σ̃, X_t> - λ_t²/2)`.
pub fn spot_price(state: &FactorState, model: &ModelSpec) -> Result<f64> {
    if state.factors.len() != model.factor_count() {
        return Err(SwingError::Dimension {
            expected: format!("{} factors", model.factor_count()),
            got: format!("{}", state.factors.len()),
        });
    }
    Ok(spot_from_factors(state.time, &state.factors, model, lambda_sq(state.time, model)))
}

/// Spot with a precomputed `λ_t²`, for hot loops.
#[inline]
pub fn spot_from_factors(t: f64, factors: &[f64], model: &ModelSpec, lambda_sq_t: f64) -> f64 {
    let dot: f64 = model.vols().iter().zip(factors).map(|(s, x)| s * x).sum();
    model.f0(t) * (dot - 0.5 * lambda_sq_t).exp()
}

/// Records whether a field has the `A · diag(λ_1(x), …, λ_q(x)) · O` shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralForm {
    RowDiagOrthogonal,
    Scalar,
    Opaque,
}

/// Time-indexed matrix volatility `σ_t(x) ∈ M_{d,q}`.
pub trait VolField: Send + Sync {
    /// `(d, q)`: state and noise dimensions.
    fn dims(&self) -> (usize, usize);

    /// Writes `σ_t(x)` row-major into `out` (length `d·q`).
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn structural_form(&self) -> StructuralForm {
        StructuralForm::Opaque
    }

    /// Diagonal entries `λ_i(t, x)` for row-diag-orthogonal fields with scalar state.
    fn diag_entries(&self, _t: f64, _x: f64) -> Option<Vec<f64>> {
        None
    }

    fn evaluate(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let (d, q) = self.dims();
        let mut buf = vec![0.0; d * q];
        self.eval_into(t, x, &mut buf);
        DMatrix::from_row_slice(d, q, &buf)
    }
}

type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Scalar field `(t, x) ↦ σ_t(x)` with `d = q = 1`.
#[derive(Clone)]
pub struct ScalarField {
    f: ScalarFn,
}

impl ScalarField {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField { f: Arc::new(f) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c)
    }

    /// `σ(x) = c · x`.
    pub fn linear(c: f64) -> Self {
        Self::new(move |_, x| c * x)
    }

    #[inline]
    pub fn value(&self, t: f64, x: f64) -> f64 {
        (self.f)(t, x)
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarField")
    }
}

impl VolField for ScalarField {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = (self.f)(t, x[0]);
    }

    fn structural_form(&self) -> StructuralForm {
        StructuralForm::Scalar
    }
}

type MatrixFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// General field given by a closure. Carries no structural information.
#[derive(Clone)]
pub struct OpaqueField {
    dims: (usize, usize),
    f: MatrixFn,
}

impl OpaqueField {
    pub fn new(
        d: usize,
        q: usize,
        f: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        OpaqueField { dims: (d, q), f: Arc::new(f) }
    }
}

impl VolField for OpaqueField {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let m = (self.f)(t, x);
        let (d, q) = self.dims;
        for r in 0..d {
            for c in 0..q {
                out[r * q + c] = m[(r, c)];
            }
        }
    }
}

/// Volatility of the forward `F(·, T)` for fixed delivery `T`, scalar state
/// `x = F(t, T)` and `q` noises:
///
/// ```text
/// σ_t(x) = x · (σ̃_1 e^{-α_1 (T - t)}, …, σ̃_q e^{-α_q (T - t)}) · L(ρ)
/// ```
///
/// [`ForwardVolField::step_matrix`] returns the per-exercise-step version
/// `σ_{ρ,k}(x) = √Δt_k · σ_{t_k}(x)`.
#[derive(Debug, Clone)]
pub struct ForwardVolField {
    vols: Vec<f64>,
    mean_reversions: Vec<f64>,
    chol: DMatrix<f64>,
    maturity: f64,
    times: Vec<f64>,
}

impl ForwardVolField {
    /// Row `A_t = (σ̃_j e^{-α_j (T - t)})_j · L(ρ)`, the state-free part of the field.
    pub fn loading_row(&self, t: f64) -> Vec<f64> {
        let q = self.vols.len();
        let w: Vec<f64> = (0..q)
            .map(|i| self.vols[i] * (-self.mean_reversions[i] * (self.maturity - t)).exp())
            .collect();
        (0..q).map(|j| (0..q).map(|i| w[i] * self.chol[(i, j)]).sum()).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    /// `σ_{ρ,k}(x)` as a `1 × q` matrix, including the `√Δt_k` factor.
    pub fn step_matrix(&self, k: usize, x: f64) -> DMatrix<f64> {
        let dt = self.times[k + 1] - self.times[k];
        let row = self.loading_row(self.times[k]);
        DMatrix::from_iterator(1, row.len(), row.into_iter().map(|a| a * x * dt.sqrt()))
    }

    /// Lipschitz constant in `x` (Euclidean row norm), uniform in `t ≤ T`.
    pub fn lipschitz(&self) -> f64 {
        let row = self.loading_row(self.maturity);
        row.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

impl VolField for ForwardVolField {
    fn dims(&self) -> (usize, usize) {
        (1, self.vols.len())
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(self.loading_row(t)) {
            *o = a * x[0];
        }
    }

    fn structural_form(&self) -> StructuralForm {
        StructuralForm::RowDiagOrthogonal
    }

    fn diag_entries(&self, _t: f64, x: f64) -> Option<Vec<f64>> {
        Some(vec![x; self.vols.len()])
    }
}

/// Builds the forward volatility field of `model` for delivery `maturity` on
/// the given step grid `t_0 < t_1 < … < t_N`.
pub fn vol_field_multifactor(model: &ModelSpec, maturity: f64, times: &[f64]) -> ForwardVolField {
    ForwardVolField {
        vols: model.vols().to_vec(),
        mean_reversions: model.mean_reversions().to_vec(),
        chol: model.correlation_factor(),
        maturity,
        times: times.to_vec(),
    }
}

/// Uniform grid `t_k = k T / n`, `k = 0..=n`.
pub fn uniform_times(maturity: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| maturity * k as f64 / n as f64).collect()
}

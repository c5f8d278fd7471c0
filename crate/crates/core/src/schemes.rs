//! Euler discretisation of `dX = κ(t)(X - ζ) dt + σ_t(X) dW`, its truncated-noise
//! variant, exact Ornstein–Uhlenbeck steps, and quadrature transition operators.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SwingError};
use crate::grid::UniformGrid;
use crate::market_models::{ScalarField, VolField};
use crate::quadrature::{composite_gauss_legendre, gauss_hermite, norm_cdf, norm_pdf, Rule};

/// Upper end `1/(2 + √2)` of the admissible truncation parameter range.
pub const LAMBDA_MAX: f64 = 0.292_893_218_813_452_5;
pub const DEFAULT_TRUNCATION_LAMBDA: f64 = 0.25;
pub const DEFAULT_QUAD_NODES: usize = 32;

/// Per-path random generator: one ChaCha stream per path index.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Sub-steps per exercise interval.
    pub m: usize,
    /// Number of exercise intervals.
    pub n: usize,
    pub maturity: f64,
    pub truncation_lambda: Option<f64>,
    pub seed: u64,
    pub path_count: usize,
}

impl SchemeConfig {
    pub fn new(m: usize, n: usize, maturity: f64, seed: u64, path_count: usize) -> Result<Self> {
        let cfg = SchemeConfig { m, n, maturity, truncation_lambda: None, seed, path_count };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_truncation(mut self, lambda: f64) -> Result<Self> {
        self.truncation_lambda = Some(lambda);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(SwingError::config("m and n must be positive"));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(SwingError::config(format!("maturity must be > 0, got {}", self.maturity)));
        }
        if self.path_count == 0 {
            return Err(SwingError::config("path_count must be positive"));
        }
        if let Some(l) = self.truncation_lambda {
            check_lambda(l)?;
        }
        Ok(())
    }

    /// Euler step `h = T / (m n)`.
    pub fn h(&self) -> f64 {
        self.maturity / (self.m * self.n) as f64
    }

    pub fn steps(&self) -> usize {
        self.m * self.n
    }

    /// `t_ℓ = ℓ T / (m n)`.
    pub fn time(&self, ell: usize) -> f64 {
        if ell == self.steps() {
            self.maturity
        } else {
            self.maturity * ell as f64 / self.steps() as f64
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < LAMBDA_MAX {
        Ok(())
    } else {
        Err(SwingError::domain(format!(
            "truncation lambda {lambda} outside (0, {LAMBDA_MAX})"
        )))
    }
}

type KappaFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Coefficients of the diffusion: scalar time-dependent `κ`, mean level `ζ`
/// and volatility field.
#[derive(Clone)]
pub struct Dynamics {
    kappa: KappaFn,
    zeta: Vec<f64>,
    vol: Arc<dyn VolField>,
}

impl Dynamics {
    /// Driftless dynamics `dX = σ_t(X) dW`.
    pub fn driftless(vol: impl VolField + 'static) -> Self {
        let d = vol.dims().0;
        Dynamics { kappa: Arc::new(|_| 0.0), zeta: vec![0.0; d], vol: Arc::new(vol) }
    }

    pub fn with_drift(
        mut self,
        kappa: impl Fn(f64) -> f64 + Send + Sync + 'static,
        zeta: Vec<f64>,
    ) -> Result<Self> {
        if zeta.len() != self.dims().0 {
            return Err(SwingError::Dimension {
                expected: format!("zeta of length {}", self.dims().0),
                got: format!("{}", zeta.len()),
            });
        }
        self.kappa = Arc::new(kappa);
        self.zeta = zeta;
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.vol.dims()
    }

    pub fn kappa(&self, t: f64) -> f64 {
        (self.kappa)(t)
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn vol(&self) -> &dyn VolField {
        self.vol.as_ref()
    }

    /// Scalar volatility `σ_t(x)` for `d = q = 1`.
    #[inline]
    pub fn sigma_scalar(&self, t: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.vol.eval_into(t, &[x], &mut out);
        out[0]
    }
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dynamics").field("dims", &self.dims()).field("zeta", &self.zeta).finish()
    }
}

/// `ℰ(x, z) = x + h κ(t)(x - ζ) + √h σ_t(x) z`.
pub fn euler_step(dynamics: &Dynamics, t: f64, x: &[f64], z: &[f64], h: f64) -> Vec<f64> {
    let (d, q) = dynamics.dims();
    let mut sigma = vec![0.0; d * q];
    let mut out = vec![0.0; d];
    euler_step_into(dynamics, t, x, z, h, &mut sigma, &mut out);
    out
}

fn euler_step_into(
    dynamics: &Dynamics,
    t: f64,
    x: &[f64],
    z: &[f64],
    h: f64,
    sigma: &mut [f64],
    out: &mut [f64],
) {
    let (d, q) = dynamics.dims();
    let kappa = dynamics.kappa(t);
    let sqrt_h = h.sqrt();
    dynamics.vol.eval_into(t, x, sigma);
    for r in 0..d {
        let noise: f64 = (0..q).map(|c| sigma[r * q + c] * z[c]).sum();
        out[r] = x[r] + h * kappa * (x[r] - dynamics.zeta[r]) + sqrt_h * noise;
    }
}

/// `Z 1{|Z| ≤ s_h}` with the Euclidean norm; the whole vector is zeroed.
pub fn truncate_noise(z: &[f64], s_h: f64) -> Vec<f64> {
    let mut out = z.to_vec();
    truncate_in_place(&mut out, s_h);
    out
}

#[inline]
fn truncate_in_place(z: &mut [f64], s_h: f64) -> bool {
    let norm_sq: f64 = z.iter().map(|v| v * v).sum();
    if norm_sq > s_h * s_h {
        z.iter_mut().for_each(|v| *v = 0.0);
        true
    } else {
        false
    }
}

/// `s_h = λ / √(h ([σ]²_Lip + a_σ))`.
pub fn truncation_threshold(h: f64, sigma_lip: f64, a_sigma: f64, lambda: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(SwingError::domain(format!("step must be positive, got {h}")));
    }
    if sigma_lip < 0.0 || a_sigma < 0.0 {
        return Err(SwingError::domain("Lipschitz and semi-convexity constants must be >= 0"));
    }
    let c = sigma_lip * sigma_lip + a_sigma;
    if c == 0.0 {
        return Err(SwingError::domain(
            "constant volatility: truncation threshold is infinite",
        ));
    }
    check_lambda(lambda)?;
    Ok(lambda / (h * c).sqrt())
}

/// Constants of `σ` that fix the truncation threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConstants {
    pub sigma_lip: f64,
    pub a_sigma: f64,
}

/// Simulated states on the fine grid `t_ℓ = ℓ T/(m n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    times: Vec<f64>,
    m: usize,
    d: usize,
    paths: usize,
    /// Layout: `[path][time][component]`.
    states: Vec<f64>,
    /// Sub-steps whose noise was zeroed by truncation, as `(path, ℓ)` with `ℓ ≥ 1`.
    truncated_steps: Vec<(usize, usize)>,
}

impl PathEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn path_count(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn state(&self, path: usize, ell: usize) -> &[f64] {
        let stride = self.times.len() * self.d;
        let start = path * stride + ell * self.d;
        &self.states[start..start + self.d]
    }

    /// Fine-grid index of exercise date `k`.
    pub fn exercise_slice(&self, k: usize) -> usize {
        k * self.m
    }

    pub fn exercise_state(&self, path: usize, k: usize) -> &[f64] {
        self.state(path, self.exercise_slice(k))
    }

    pub fn truncated_steps(&self) -> &[(usize, usize)] {
        &self.truncated_steps
    }
}

/// Simulates `config.path_count` Euler paths from `x0`. With `truncation`, the
/// Gaussian innovations are replaced by `Z 1{|Z| ≤ s_h}`.
pub fn simulate_paths(
    config: &SchemeConfig,
    dynamics: &Dynamics,
    x0: &[f64],
    truncation: Option<TruncationConstants>,
) -> Result<PathEnsemble> {
    config.validate()?;
    let (d, q) = dynamics.dims();
    if x0.len() != d {
        return Err(SwingError::Dimension {
            expected: format!("initial state of length {d}"),
            got: format!("{}", x0.len()),
        });
    }
    let h = config.h();
    let s_h = match truncation {
        None => None,
        Some(c) => {
            let lambda = config.truncation_lambda.ok_or_else(|| {
                SwingError::config("truncated simulation requires truncation_lambda")
            })?;
            Some(truncation_threshold(h, c.sigma_lip, c.a_sigma, lambda)?)
        }
    };
    let steps = config.steps();
    let times: Vec<f64> = (0..=steps).map(|l| config.time(l)).collect();
    let stride = (steps + 1) * d;

    let per_path: Vec<(Vec<f64>, Vec<usize>)> = (0..config.path_count)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(config.seed, p as u64);
            let mut buf = vec![0.0; stride];
            buf[..d].copy_from_slice(x0);
            let mut z = vec![0.0; q];
            let mut sigma = vec![0.0; d * q];
            let mut cut = Vec::new();
            for ell in 0..steps {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                if let Some(s) = s_h {
                    if truncate_in_place(&mut z, s) {
                        cut.push(ell + 1);
                    }
                }
                let (head, tail) = buf.split_at_mut((ell + 1) * d);
                euler_step_into(
                    dynamics,
                    times[ell],
                    &head[ell * d..],
                    &z,
                    h,
                    &mut sigma,
                    &mut tail[..d],
                );
            }
            (buf, cut)
        })
        .collect();

    let mut states = Vec::with_capacity(config.path_count * stride);
    let mut truncated_steps = Vec::new();
    for (p, (buf, cut)) in per_path.into_iter().enumerate() {
        if let Some(pos) = buf.iter().position(|v| !v.is_finite()) {
            return Err(SwingError::NonFinite { path: p, step: pos % stride / d });
        }
        states.extend_from_slice(&buf);
        truncated_steps.extend(cut.into_iter().map(|l| (p, l)));
    }
    Ok(PathEnsemble { times, m: config.m, d, paths: config.path_count, states, truncated_steps })
}

/// Exact OU step: `e^{-α dt} x + √((1 - e^{-2α dt}) / (2α)) z`.
#[inline]
pub fn exact_ou_step(x: f64, alpha: f64, dt: f64, z: f64) -> f64 {
    (-alpha * dt).exp() * x + ou_step_std(alpha, dt) * z
}

/// Standard deviation of the exact OU increment over `dt`.
#[inline]
pub fn ou_step_std(alpha: f64, dt: f64) -> f64 {
    (-(-2.0 * alpha * dt).exp_m1() / (2.0 * alpha)).sqrt()
}

/// Discrete law used to integrate against the driving noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLaw {
    rule: Rule,
}

impl NoiseLaw {
    /// Standard normal, Gauss–Hermite with `nodes` points.
    pub fn gaussian(nodes: usize) -> Self {
        NoiseLaw { rule: gauss_hermite(nodes) }
    }

    /// Law of `Z 1{|Z| ≤ s}`: an atom at zero of mass `2(1 - Φ(s))` plus the
    /// density on `[-s, s]` by composite Gauss–Legendre.
    pub fn truncated_gaussian(s: f64, nodes: usize) -> Self {
        let panels = ((2.0 * s).ceil() as usize).max(2);
        let inner = composite_gauss_legendre(nodes, panels, -s, s);
        let mut rule = Rule { nodes: vec![0.0], weights: vec![2.0 * (1.0 - norm_cdf(s))] };
        for (z, w) in inner.nodes.iter().zip(&inner.weights) {
            rule.nodes.push(*z);
            rule.weights.push(w * norm_pdf(*z));
        }
        NoiseLaw { rule }
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }
}

/// How a transition operator integrates against the noise.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionRule {
    /// Quadrature nodes of `law` pushed through linear interpolation.
    Nodes(NoiseLaw),
    /// Closed-form Gaussian integral of the linear interpolant; `cut = Some(s)`
    /// replaces `Z` by `Z 1{|Z| ≤ s}`.
    ExactInterpolant { cut: Option<f64> },
}

impl From<NoiseLaw> for TransitionRule {
    fn from(law: NoiseLaw) -> Self {
        TransitionRule::Nodes(law)
    }
}

/// Function of the state that a transition can integrate.
pub trait Integrand: Sync {
    fn eval(&self, y: f64) -> f64;

    /// Interval outside which `eval` extrapolates.
    fn domain(&self) -> Option<(f64, f64)> {
        None
    }
}

impl<F: Fn(f64) -> f64 + Sync> Integrand for F {
    fn eval(&self, y: f64) -> f64 {
        self(y)
    }
}

/// Grid values read by linear interpolation.
#[derive(Debug, Clone, Copy)]
pub struct GridFunction<'a> {
    pub grid: &'a UniformGrid,
    pub values: &'a [f64],
}

impl Integrand for GridFunction<'_> {
    fn eval(&self, y: f64) -> f64 {
        self.grid.interpolate(self.values, y)
    }

    fn domain(&self) -> Option<(f64, f64)> {
        Some((self.grid.min, self.grid.max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutput {
    pub values: Vec<f64>,
    /// True when some quadrature point left the domain of the integrand.
    pub extrapolated: bool,
}

/// `P_ℓ(f)(x) = E f(x + h κ(t_ℓ)(x - ζ) + √h σ_{t_ℓ}(x) Z)` at every grid node.
pub fn quadrature_transition(
    f: &dyn Integrand,
    grid: &UniformGrid,
    t: f64,
    dynamics: &Dynamics,
    h: f64,
    law: &NoiseLaw,
) -> Result<TransitionOutput> {
    if dynamics.dims() != (1, 1) {
        return Err(SwingError::Dimension {
            expected: "scalar dynamics".into(),
            got: format!("{:?}", dynamics.dims()),
        });
    }
    let kappa = dynamics.kappa(t);
    let zeta = dynamics.zeta[0];
    let sqrt_h = h.sqrt();
    let domain = f.domain();
    let rows: Vec<(f64, bool)> = grid
        .nodes()
        .into_par_iter()
        .map(|x| {
            let loc = x + h * kappa * (x - zeta);
            let scale = sqrt_h * dynamics.sigma_scalar(t, x);
            let mut acc = 0.0;
            let mut out = false;
            for (z, w) in law.rule.nodes.iter().zip(&law.rule.weights) {
                let y = loc + scale * z;
                if let Some((lo, hi)) = domain {
                    out |= y < lo || y > hi;
                }
                acc += w * f.eval(y);
            }
            (acc, out)
        })
        .collect();
    let extrapolated = rows.iter().any(|r| r.1);
    let values: Vec<f64> = rows.into_iter().map(|r| r.0).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SwingError::Numerical("non-finite transition value".into()));
    }
    Ok(TransitionOutput { values, extrapolated })
}

/// Gaussian mass beyond this many standard deviations is below 1e-30.
const GAUSS_SPAN: f64 = 12.0;

/// Mass beyond the grid above which a transition reports extrapolation.
const EXTRAPOLATION_MASS: f64 = 1e-12;

#[inline]
fn upper_tail(z: f64) -> f64 {
    norm_cdf(-z)
}

/// `P(a < Z < b)` without cancellation in either tail.
#[inline]
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - upper_tail(b) - norm_cdf(a)
    }
}

fn push_interpolation(grid: &UniformGrid, y: f64, w: f64, entries: &mut Vec<(u32, f64)>) {
    let (i, u) = grid.locate(y);
    entries.push((i as u32, w * (1.0 - u)));
    entries.push((i as u32 + 1, w * u));
}

/// Sparse linear operator on grid functions: `(P f)_i = Σ_j w_ij f_j`.
///
/// Built by pushing each quadrature point through linear interpolation, so the
/// weights are those of `E f̂(loc_i + scale_i Z)` with `f̂` the interpolant.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    extrapolated: bool,
}

impl TransitionMatrix {
    /// Operator for `y = loc(x_i) + scale(x_i) z` under `law`.
    pub fn from_affine(
        grid: &UniformGrid,
        law: &NoiseLaw,
        loc_scale: impl Fn(f64) -> (f64, f64) + Sync,
    ) -> Self {
        Self::from_rows(grid, |x| {
            let (loc, scale) = loc_scale(x);
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(2 * law.rule.len());
            let mut out = false;
            for (z, w) in law.rule.nodes.iter().zip(&law.rule.weights) {
                let y = loc + scale * z;
                out |= !grid.contains(y);
                push_interpolation(grid, y, *w, &mut entries);
            }
            (entries, out)
        })
    }

    /// Operator `f ↦ E f̂(loc(x_i) + scale(x_i) Z)` with `f̂` the linear
    /// interpolant of `f` (extended linearly beyond the grid), integrated in
    /// closed form against the Gaussian law. With `cut = Some(s)` the noise is
    /// `Z 1{|Z| ≤ s}`.
    pub fn exact_interpolant(
        grid: &UniformGrid,
        cut: Option<f64>,
        loc_scale: impl Fn(f64) -> (f64, f64) + Sync,
    ) -> Self {
        Self::from_rows(grid, |x| {
            let (loc, scale) = loc_scale(x);
            let scale = scale.abs();
            let mut entries: Vec<(u32, f64)> = Vec::new();
            let z_max = cut.unwrap_or(GAUSS_SPAN).min(GAUSS_SPAN);
            let atom = match cut {
                Some(s) => 2.0 * upper_tail(s),
                None => 0.0,
            };
            if scale == 0.0 || !(z_max > 0.0) {
                push_interpolation(grid, loc, 1.0, &mut entries);
                return (entries, !grid.contains(loc));
            }
            if atom > 0.0 {
                push_interpolation(grid, loc, atom, &mut entries);
            }
            let (lo, hi) = (loc - scale * z_max, loc + scale * z_max);
            let dx = grid.step();
            let last = grid.points - 2;
            let first_cell = grid.locate(lo).0;
            let last_cell = grid.locate(hi).0;
            let mut outside = 0.0;
            for c in first_cell..=last_cell {
                let xc = grid.node(c);
                let a = if c == 0 { lo } else { xc.max(lo) };
                let b = if c == last { hi } else { (xc + dx).min(hi) };
                if b <= a {
                    continue;
                }
                let (za, zb) = ((a - loc) / scale, (b - loc) / scale);
                let m0 = normal_mass(za, zb);
                // E[(Y - x_c) 1{a < Y < b}]
                let m1 = (loc - xc) * m0 + scale * (norm_pdf(za) - norm_pdf(zb));
                entries.push((c as u32, m0 - m1 / dx));
                entries.push((c as u32 + 1, m1 / dx));
                if c == 0 && a < grid.min {
                    outside += normal_mass(za, ((grid.min.min(b)) - loc) / scale);
                }
                if c == last && b > grid.max {
                    outside += normal_mass(((grid.max.max(a)) - loc) / scale, zb);
                }
            }
            (entries, outside > EXTRAPOLATION_MASS)
        })
    }

    fn from_rows(
        grid: &UniformGrid,
        row: impl Fn(f64) -> (Vec<(u32, f64)>, bool) + Sync,
    ) -> Self {
        let rows: Vec<(Vec<(u32, f64)>, bool)> = grid
            .nodes()
            .into_par_iter()
            .map(|x| {
                let (mut entries, out) = row(x);
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
                for (c, w) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += w,
                        _ => merged.push((c, w)),
                    }
                }
                (merged, out)
            })
            .collect();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut extrapolated = false;
        offsets.push(0);
        for (entries, out) in rows {
            extrapolated |= out;
            for (c, w) in entries {
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        TransitionMatrix { offsets, cols, weights, extrapolated }
    }

    /// One Euler sub-step of `dynamics` at time `t`.
    pub fn euler(
        grid: &UniformGrid,
        t: f64,
        dynamics: &Dynamics,
        h: f64,
        rule: &TransitionRule,
    ) -> Result<Self> {
        if dynamics.dims() != (1, 1) {
            return Err(SwingError::Dimension {
                expected: "scalar dynamics".into(),
                got: format!("{:?}", dynamics.dims()),
            });
        }
        let kappa = dynamics.kappa(t);
        let zeta = dynamics.zeta[0];
        let sqrt_h = h.sqrt();
        Ok(Self::affine(grid, rule, |x| {
            (x + h * kappa * (x - zeta), sqrt_h * dynamics.sigma_scalar(t, x))
        }))
    }

    /// Dispatches on `rule`.
    pub fn affine(
        grid: &UniformGrid,
        rule: &TransitionRule,
        loc_scale: impl Fn(f64) -> (f64, f64) + Sync,
    ) -> Self {
        match rule {
            TransitionRule::Nodes(law) => Self::from_affine(grid, law, loc_scale),
            TransitionRule::ExactInterpolant { cut } => Self::exact_interpolant(grid, *cut, loc_scale),
        }
    }

    pub fn extrapolated(&self) -> bool {
        self.extrapolated
    }

    pub fn size(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            *o = self.cols[a..b]
                .iter()
                .zip(&self.weights[a..b])
                .map(|(&c, &w)| w * input[c as usize])
                .sum();
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.apply_into(input, &mut out);
        out
    }
}

/// One row of the truncated-versus-plain study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub m: usize,
    pub threshold: f64,
    /// `sup_x max_k ‖X̃_k - X̄_k‖_u`.
    pub sup_gap: f64,
    /// `sup_x gap(x) / (1 + |x|)`.
    pub max_ratio: f64,
    /// Gap at each starting point.
    pub gaps: Vec<f64>,
    /// Fraction of sub-steps whose noise was zeroed.
    pub truncation_rate: f64,
}

/// Setup for [`truncated_plain_gap`].
#[derive(Debug, Clone)]
pub struct GapStudy {
    pub n: usize,
    pub maturity: f64,
    pub lambda: f64,
    pub constants: TruncationConstants,
    pub starts: Vec<f64>,
    pub u: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Coupled plain and truncated Euler paths (same Gaussians, one truncated);
/// returns the empirical `L^u` gap at the exercise dates for each `m`.
pub fn truncated_plain_gap(study: &GapStudy, dynamics: &Dynamics, ms: &[usize]) -> Result<Vec<GapRow>> {
    if dynamics.dims() != (1, 1) {
        return Err(SwingError::Dimension {
            expected: "scalar dynamics".into(),
            got: format!("{:?}", dynamics.dims()),
        });
    }
    if !(study.u >= 1.0) {
        return Err(SwingError::domain(format!("moment order must be >= 1, got {}", study.u)));
    }
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        let cfg = SchemeConfig::new(m, study.n, study.maturity, study.seed, study.paths)?
            .with_truncation(study.lambda)?;
        let h = cfg.h();
        let s_h = truncation_threshold(h, study.constants.sigma_lip, study.constants.a_sigma, study.lambda)?;
        let steps = cfg.steps();
        let times: Vec<f64> = (0..=steps).map(|l| cfg.time(l)).collect();
        let sqrt_h = h.sqrt();
        let mut gaps = Vec::with_capacity(study.starts.len());
        let mut cut_total = 0usize;
        for &x0 in &study.starts {
            // Per path: sum over dates of |diff|^u and the truncation count.
            let per_path: Vec<(Vec<f64>, usize)> = (0..study.paths)
                .into_par_iter()
                .map(|p| {
                    let mut rng = path_rng(study.seed, p as u64);
                    let (mut plain, mut trunc) = (x0, x0);
                    let mut moments = vec![0.0; study.n];
                    let mut cuts = 0;
                    for ell in 0..steps {
                        let z: f64 = rng.sample(StandardNormal);
                        let zt = if z.abs() <= s_h {
                            z
                        } else {
                            cuts += 1;
                            0.0
                        };
                        let t = times[ell];
                        let kappa = dynamics.kappa(t);
                        let zeta = dynamics.zeta[0];
                        plain += h * kappa * (plain - zeta) + sqrt_h * dynamics.sigma_scalar(t, plain) * z;
                        trunc += h * kappa * (trunc - zeta) + sqrt_h * dynamics.sigma_scalar(t, trunc) * zt;
                        if (ell + 1) % m == 0 {
                            moments[(ell + 1) / m - 1] = (trunc - plain).abs().powf(study.u);
                        }
                    }
                    (moments, cuts)
                })
                .collect();
            let mut sums = vec![0.0; study.n];
            for (mom, cuts) in &per_path {
                for (s, v) in sums.iter_mut().zip(mom) {
                    *s += v;
                }
                cut_total += cuts;
            }
            let gap = sums
                .iter()
                .map(|s| (s / study.paths as f64).powf(1.0 / study.u))
                .fold(0.0, f64::max);
            if !gap.is_finite() {
                return Err(SwingError::Numerical(format!("non-finite gap at x = {x0}")));
            }
            gaps.push(gap);
        }
        let sup_gap = gaps.iter().copied().fold(0.0, f64::max);
        let max_ratio = gaps
            .iter()
            .zip(&study.starts)
            .map(|(g, x)| g / (1.0 + x.abs()))
            .fold(0.0, f64::max);
        let draws = (steps * study.paths * study.starts.len()) as f64;
        rows.push(GapRow {
            m,
            threshold: s_h,
            sup_gap,
            max_ratio,
            gaps,
            truncation_rate: cut_total as f64 / draws,
        });
    }
    Ok(rows)
}

/// Both sides of the truncated integration-by-parts identity for
/// `ℰ(z) = loc + scale z`:
///
/// ```text
/// ∫_{-s}^{s} f'(ℰ(z)) z φ(z) dz  =  ∫_{-s}^{s} f''(ℰ(z)) scale (φ(z) - φ(s)) dz
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteinCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn truncated_stein_check(
    df: impl Fn(f64) -> f64,
    d2f: impl Fn(f64) -> f64,
    loc: f64,
    scale: f64,
    s: f64,
) -> SteinCheck {
    let panels = ((4.0 * s).ceil() as usize).max(4);
    let rule = composite_gauss_legendre(20, panels, -s, s);
    let phi_s = norm_pdf(s);
    let lhs = rule.integrate(|z| df(loc + scale * z) * z * norm_pdf(z));
    let rhs = rule.integrate(|z| d2f(loc + scale * z) * scale * (norm_pdf(z) - phi_s));
    SteinCheck { lhs, rhs, residual: (lhs - rhs).abs() }
}

/// Scalar-field shortcut for driftless dynamics.
pub fn arch_dynamics(field: ScalarField) -> Dynamics {
    Dynamics::driftless(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_models::ScalarField;
    use proptest::prelude::*;

    #[test]
    fn euler_examples() {
        let dynamics = arch_dynamics(ScalarField::linear(0.2));
        assert_eq!(euler_step(&dynamics, 0.0, &[1.3], &[0.0], 0.01), vec![1.3]);
        let y = euler_step(&dynamics, 0.0, &[1.0], &[1.0], 0.01);
        assert!((y[0] - 1.02).abs() < 1e-15);
    }

    #[test]
    fn euler_with_drift() {
        let dynamics = arch_dynamics(ScalarField::constant(0.0))
            .with_drift(|_| -0.5, vec![2.0])
            .unwrap();
        let y = euler_step(&dynamics, 0.0, &[4.0], &[3.0], 0.1);
        assert!((y[0] - (4.0 - 0.05 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_noise(&[0.5], 2.5), vec![0.5]);
        assert_eq!(truncate_noise(&[3.0], 2.5), vec![0.0]);
        assert_eq!(truncate_noise(&[2.0, 2.0], 2.5), vec![0.0, 0.0]);
        assert_eq!(truncate_noise(&[1.5, 1.5], 2.5), vec![1.5, 1.5]);
    }

    #[test]
    fn threshold_examples() {
        assert!((truncation_threshold(0.01, 1.0, 0.0, 0.25).unwrap() - 2.5).abs() < 1e-14);
        let s = truncation_threshold(0.01, 2.0, 1.0, 0.2).unwrap();
        assert!((s - 0.894_427_190_999_915_9).abs() < 1e-12);
        let half = truncation_threshold(0.005, 2.0, 1.0, 0.2).unwrap();
        assert!((half / s - 2f64.sqrt()).abs() < 1e-12);
        assert!(truncation_threshold(0.01, 0.0, 0.0, 0.25).is_err());
        assert!(truncation_threshold(0.01, 1.0, 0.0, 0.3).is_err());
    }

    #[test]
    fn lambda_bound_value() {
        assert!((LAMBDA_MAX - 1.0 / (2.0 + 2f64.sqrt())).abs() < 1e-16);
    }

    #[test]
    fn exact_ou_examples() {
        assert!(exact_ou_step(1.0, 1e3, 1.0, 0.0).abs() < 1e-300);
        let v = exact_ou_step(0.0, 0.4, 1.0 / 15.0, 1.0);
        assert!((v - ((1.0 - (-0.8f64 / 15.0).exp()) / 0.8).sqrt()).abs() < 1e-15);
        assert!((v - 0.254_794_185).abs() < 1e-9);
        assert!((ou_step_std(0.4, 1e4).powi(2) - 1.0 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_paths_without_noise() {
        let cfg = SchemeConfig::new(2, 5, 1.0, 7, 16).unwrap();
        let ens = simulate_paths(&cfg, &arch_dynamics(ScalarField::constant(0.0)), &[3.5], None).unwrap();
        for p in 0..16 {
            for l in 0..=10 {
                assert_eq!(ens.state(p, l), &[3.5]);
            }
        }
        assert_eq!(ens.exercise_slice(3), 6);
        assert_eq!(ens.times().len(), 11);
        assert_eq!(ens.times()[10], 1.0);
    }

    #[test]
    fn simulation_is_deterministic_across_pools() {
        let cfg = SchemeConfig::new(4, 6, 0.5, 42, 200).unwrap();
        let dynamics = arch_dynamics(ScalarField::linear(0.7));
        let a = simulate_paths(&cfg, &dynamics, &[1.0], None).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_paths(&cfg, &dynamics, &[1.0], None).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_paths_differ_only_after_a_cut() {
        let cfg = SchemeConfig::new(2, 15, 1.0, 3, 400).unwrap().with_truncation(0.25).unwrap();
        let dynamics = arch_dynamics(ScalarField::linear(0.7));
        let consts = TruncationConstants { sigma_lip: 0.7, a_sigma: 0.0 };
        let plain = simulate_paths(&cfg, &dynamics, &[1.0], None).unwrap();
        let trunc = simulate_paths(&cfg, &dynamics, &[1.0], Some(consts)).unwrap();
        assert!(!trunc.truncated_steps().is_empty());
        for p in 0..400 {
            let first_cut = trunc
                .truncated_steps()
                .iter()
                .filter(|c| c.0 == p)
                .map(|c| c.1)
                .min()
                .unwrap_or(usize::MAX);
            for l in 0..=30 {
                if l < first_cut {
                    assert_eq!(plain.state(p, l), trunc.state(p, l));
                } else if l == first_cut {
                    assert_ne!(plain.state(p, l), trunc.state(p, l));
                }
            }
        }
    }

    #[test]
    fn truncated_simulation_requires_lambda() {
        let cfg = SchemeConfig::new(2, 3, 1.0, 3, 4).unwrap();
        let consts = TruncationConstants { sigma_lip: 0.7, a_sigma: 0.0 };
        let res = simulate_paths(&cfg, &arch_dynamics(ScalarField::linear(0.7)), &[1.0], Some(consts));
        assert!(res.unwrap_err().is_config());
    }

    #[test]
    fn non_finite_state_is_reported() {
        let cfg = SchemeConfig::new(1, 3, 1.0, 3, 2).unwrap();
        let dynamics = arch_dynamics(ScalarField::new(|_, x| if x > 0.5 { f64::NAN } else { 1.0 }));
        let err = simulate_paths(&cfg, &dynamics, &[1.0], None).unwrap_err();
        assert!(matches!(err, SwingError::NonFinite { step: 1, .. }), "{err}");
    }

    #[test]
    fn martingale_terminal_mean() {
        let n = 15;
        let cfg = SchemeConfig::new(1, n, 1.0, 11, 200_000).unwrap();
        let dynamics = arch_dynamics(ScalarField::new(|t, x| 0.7 * (-0.4 * (1.0 - t)).exp() * x));
        let ens = simulate_paths(&cfg, &dynamics, &[20.0], None).unwrap();
        let xs: Vec<f64> = (0..ens.path_count()).map(|p| ens.exercise_state(p, n)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let se = (var / xs.len() as f64).sqrt();
        assert!((mean - 20.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn transition_examples() {
        let grid = UniformGrid::new(-5.0, 5.0, 101).unwrap();
        let law = NoiseLaw::gaussian(32);
        let dyn_const = arch_dynamics(ScalarField::constant(0.3));
        let ones = quadrature_transition(&|_: f64| 1.0, &grid, 0.0, &dyn_const, 0.01, &law).unwrap();
        assert!(ones.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let lin = quadrature_transition(&|y: f64| y, &grid, 0.0, &dyn_const, 0.01, &law).unwrap();
        for (v, x) in lin.values.iter().zip(grid.nodes()) {
            assert!((v - x).abs() < 1e-13);
        }
        let sq = quadrature_transition(&|y: f64| y * y, &grid, 0.0, &dyn_const, 0.01, &law).unwrap();
        for (v, x) in sq.values.iter().zip(grid.nodes()) {
            assert!((v - (x * x + 0.01 * 0.09)).abs() < 1e-13);
        }
        let dyn_lin = arch_dynamics(ScalarField::linear(0.2));
        let lin = quadrature_transition(&|y: f64| y, &grid, 0.0, &dyn_lin, 0.01, &law).unwrap();
        for (v, x) in lin.values.iter().zip(grid.nodes()) {
            assert!((v - x).abs() < 1e-13);
        }
    }

    #[test]
    fn transition_flags_extrapolation() {
        let grid = UniformGrid::new(-1.0, 1.0, 21).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|x| x * x).collect();
        let f = GridFunction { grid: &grid, values: &values };
        let law = NoiseLaw::gaussian(16);
        let dynamics = arch_dynamics(ScalarField::constant(1.0));
        let out = quadrature_transition(&f, &grid, 0.0, &dynamics, 0.01, &law).unwrap();
        assert!(out.extrapolated);
        let out = quadrature_transition(&f, &grid, 0.0, &dynamics, 1e-8, &NoiseLaw::gaussian(8)).unwrap();
        assert!(out.extrapolated);
        let inner = TransitionMatrix::from_affine(&grid, &law, |x| (0.5 * x, 0.0));
        assert!(!inner.extrapolated());
    }

    #[test]
    fn matrix_agrees_with_direct_transition() {
        let grid = UniformGrid::new(-3.0, 3.0, 121).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|x| (x - 0.3).abs() + 0.1 * x * x).collect();
        let dynamics = arch_dynamics(ScalarField::new(|_, x| 0.3 + 0.1 * x.abs()));
        let law = NoiseLaw::gaussian(32);
        let direct = quadrature_transition(
            &GridFunction { grid: &grid, values: &values },
            &grid,
            0.0,
            &dynamics,
            0.05,
            &law,
        )
        .unwrap();
        let mat = TransitionMatrix::euler(&grid, 0.0, &dynamics, 0.05, &law.clone().into()).unwrap();
        for (a, b) in mat.apply(&values).iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_interpolant_reproduces_affine_functions() {
        let grid = UniformGrid::new(-2.0, 2.0, 81).unwrap();
        for cut in [None, Some(1.1)] {
            let mat = TransitionMatrix::exact_interpolant(&grid, cut, |x| (0.9 * x, 0.4 + 0.1 * x.abs()));
            let ones = mat.apply(&vec![1.0; 81]);
            let lin = mat.apply(&grid.nodes());
            for (i, x) in grid.nodes().iter().enumerate() {
                assert!((ones[i] - 1.0).abs() < 1e-13);
                assert!((lin[i] - 0.9 * x).abs() < 1e-13, "{} vs {}", lin[i], 0.9 * x);
            }
            assert!(mat.extrapolated());
        }
    }

    #[test]
    fn exact_interpolant_matches_fine_quadrature() {
        let grid = UniformGrid::new(-3.0, 3.0, 61).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|x| (x - 0.25).abs() + 0.3 * x * x).collect();
        let f = GridFunction { grid: &grid, values: &values };
        let (loc, scale) = (0.37, 0.45);
        for cut in [None, Some(1.7)] {
            let mat = TransitionMatrix::exact_interpolant(&grid, cut, |_| (loc, scale));
            let got = mat.apply(&values)[0];
            let s = cut.unwrap_or(f64::INFINITY);
            let span = s.min(12.0);
            // Panels split at every kink of the interpolant.
            let mut breaks: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|x| (x - loc) / scale)
                .filter(|z| z.abs() < span)
                .collect();
            breaks.push(-span);
            breaks.push(span);
            breaks.sort_by(f64::total_cmp);
            let body: f64 = breaks
                .windows(2)
                .map(|w| composite_gauss_legendre(10, 4, w[0], w[1]).integrate(|z| f.eval(loc + scale * z) * norm_pdf(z)))
                .sum();
            let atom = if cut.is_some() { 2.0 * (1.0 - norm_cdf(s)) * f.eval(loc) } else { 0.0 };
            assert!((got - body - atom).abs() < 1e-12, "{got} vs {}", body + atom);
        }
    }

    #[test]
    fn exact_interpolant_preserves_convexity() {
        let grid = UniformGrid::new(0.0, 60.0, 241).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|x| (x - 20.0).max(0.0) + 0.5 * (25.0 - x).max(0.0)).collect();
        let mat = TransitionMatrix::exact_interpolant(&grid, None, |x| (x, 0.3 * 0.7 * x.abs()));
        let out = mat.apply(&values);
        let min = crate::grid::second_differences(&out).into_iter().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-10, "{min}");
    }

    #[test]
    fn truncated_law_moments() {
        let s = 1.3;
        let law = NoiseLaw::truncated_gaussian(s, 16);
        let mass: f64 = law.rule().weights.iter().sum();
        assert!((mass - 1.0).abs() < 1e-14);
        let mean = law.rule().integrate(|z| z);
        assert!(mean.abs() < 1e-15);
        // E[Z² 1{|Z| ≤ s}] = (2Φ(s) - 1) - 2 s φ(s).
        let second = law.rule().integrate(|z| z * z);
        let want = 2.0 * norm_cdf(s) - 1.0 - 2.0 * s * norm_pdf(s);
        assert!((second - want).abs() < 1e-14);
    }

    #[test]
    fn transition_preserves_convexity() {
        let grid = UniformGrid::new(0.0, 60.0, 241).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|x| (x - 20.0).max(0.0) + 0.5 * (25.0 - x).max(0.0)).collect();
        let law = NoiseLaw::gaussian(32);
        for field in [
            ScalarField::linear(0.7),
            ScalarField::new(|_, x| 0.2 + 0.05 * (x - 30.0).abs()),
        ] {
            let dynamics = arch_dynamics(field);
            let out = TransitionMatrix::euler(&grid, 0.0, &dynamics, 0.1, &law.clone().into()).unwrap().apply(&values);
            let min = crate::grid::second_differences(&out).into_iter().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-10, "{min}");
        }
    }

    #[test]
    fn stein_identity_polynomial_and_exponential() {
        let (x, h, lambda) = (1.0, 0.01, 0.25);
        let sigma = 0.2 * x;
        let s = truncation_threshold(h, 0.2, 0.0, lambda).unwrap();
        let scale = h.sqrt() * sigma;
        let sq = truncated_stein_check(|y| 2.0 * y, |_| 2.0, x, scale, s);
        assert!(sq.residual <= 1e-8, "{sq:?}");
        let ex = truncated_stein_check(|y| 0.25 * (y / 4.0).exp(), |y| 0.0625 * (y / 4.0).exp(), x, scale, s);
        assert!(ex.residual <= 1e-6, "{ex:?}");
        // A short window where the boundary correction matters.
        let short = truncated_stein_check(|y| y.powi(3), |y| 3.0 * y * y, 0.5, 0.8, 1.2);
        assert!(short.residual < 1e-12 && short.lhs.abs() > 1e-2, "{short:?}");
    }

    #[test]
    fn plain_gap_vanishes_for_constant_volatility_high_threshold() {
        let study = GapStudy {
            n: 5,
            maturity: 1.0,
            lambda: 0.25,
            constants: TruncationConstants { sigma_lip: 0.001, a_sigma: 0.0 },
            starts: vec![-1.0, 0.0, 1.0],
            u: 2.0,
            paths: 2000,
            seed: 5,
        };
        let rows = truncated_plain_gap(&study, &arch_dynamics(ScalarField::constant(0.3)), &[1, 4]).unwrap();
        for r in rows {
            assert!(r.threshold > 6.0);
            assert_eq!(r.sup_gap, 0.0);
        }
    }

    proptest! {
        #[test]
        fn truncation_zeroes_whole_vector(a in -4.0..4.0f64, b in -4.0..4.0f64, s in 0.1..5.0f64) {
            let out = truncate_noise(&[a, b], s);
            if a * a + b * b <= s * s {
                prop_assert_eq!(out, vec![a, b]);
            } else {
                prop_assert_eq!(out, vec![0.0, 0.0]);
            }
        }

        #[test]
        fn truncated_euler_map_is_increasing(
            z in -3.0..3.0f64,
            x in -5.0..5.0f64,
            m in 1usize..32,
        ) {
            // σ(x) = √(2 - min(x², 1)): [σ]_Lip = 1, a_σ = 1; no drift.
            let sigma = |x: f64| (2.0 - (x * x).min(1.0)).sqrt();
            let h = 1.0 / (15.0 * m as f64);
            let s = truncation_threshold(h, 1.0, 1.0, DEFAULT_TRUNCATION_LAMBDA).unwrap();
            let zt = if z.abs() <= s { z } else { 0.0 };
            let map = |y: f64| y + h.sqrt() * sigma(y) * zt;
            let eps = 1e-6;
            prop_assert!(map(x + eps) - map(x) > 0.0);
        }
    }
}

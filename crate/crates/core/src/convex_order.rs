//! Verification of ordering properties: the `⪯` pre-order on matrices,
//! empirical convex order, convexity of volatility fields, semi-convexity and
//! Lipschitz propagation constants.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SwingError};
use crate::grid::{second_differences, UniformGrid};
use crate::market_models::{StructuralForm, VolField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Holds,
    Fails,
    /// The check does not apply to the input (an opaque field).
    Indeterminate,
}

/// Where the worst violation was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    None,
    /// Unit eigenvector of `BBᵀ - AAᵀ` for its smallest eigenvalue.
    Direction(Vec<f64>),
    /// Threshold `k` of a call or put potential.
    Threshold(f64),
    /// The means differ.
    Mean,
    /// Index into a family of test functions.
    TestFunction(usize),
    GridPoint { t: f64, x: f64, component: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub status: VerdictStatus,
    pub holds: bool,
    pub worst_violation: f64,
    pub witness: Witness,
    pub tolerance: f64,
}

impl OrderVerdict {
    fn decide(worst_violation: f64, tolerance: f64, witness: Witness) -> Self {
        let holds = worst_violation <= tolerance;
        OrderVerdict {
            status: if holds { VerdictStatus::Holds } else { VerdictStatus::Fails },
            holds,
            worst_violation,
            witness,
            tolerance,
        }
    }

    fn indeterminate(tolerance: f64) -> Self {
        OrderVerdict {
            status: VerdictStatus::Indeterminate,
            holds: false,
            worst_violation: f64::NAN,
            witness: Witness::None,
            tolerance,
        }
    }
}

/// Picks the entry with the largest `excess = difference - margin`; ties keep
/// the lowest index. Returns a verdict with `worst_violation = max(0, difference)`
/// and `tolerance = margin` at that entry.
fn worst_of(entries: impl IntoIterator<Item = (f64, f64, Witness)>) -> OrderVerdict {
    let mut best: Option<(f64, f64, Witness)> = None;
    for (diff, margin, w) in entries {
        let better = match &best {
            None => true,
            Some((d, m, _)) => diff - margin > d - m,
        };
        if better {
            best = Some((diff, margin, w));
        }
    }
    match best {
        Some((diff, margin, w)) => OrderVerdict::decide(diff.max(0.0), margin, w),
        None => OrderVerdict::decide(0.0, 0.0, Witness::None),
    }
}

/// `A ⪯ B` iff `BBᵀ - AAᵀ` is positive semidefinite, tested as
/// `λ_min ≥ -tol (1 + ‖BBᵀ‖_F)`.
pub fn psd_order(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<OrderVerdict> {
    if a.shape() != b.shape() {
        return Err(SwingError::Dimension {
            expected: format!("{:?}", b.shape()),
            got: format!("{:?}", a.shape()),
        });
    }
    let bb = b * b.transpose();
    let diff = &bb - a * a.transpose();
    let sym = (&diff + diff.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let (idx, lambda_min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty matrix");
    let tol_eff = tol * (1.0 + bb.norm());
    let direction = eig.eigenvectors.column(idx).iter().copied().collect();
    Ok(OrderVerdict::decide((-lambda_min).max(0.0), tol_eff, Witness::Direction(direction)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Convex order: equal means and ordered call potentials.
    Cvx,
    /// Non-decreasing convex order: ordered call potentials.
    Icx,
    /// Non-increasing convex order: ordered put potentials.
    Dcx,
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical `E(U - k)_+` (or `E(k - U)_+` for puts) with its standard error.
pub fn potential(samples: &[f64], k: f64, put: bool) -> (f64, f64) {
    let n = samples.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for &u in samples {
        let v = if put { (k - u).max(0.0) } else { (u - k).max(0.0) };
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / n;
    let var = if samples.len() > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// `count` equally spaced thresholds spanning the pooled sample range.
pub fn threshold_grid(u: &[f64], v: &[f64], count: usize) -> Vec<f64> {
    let (lo, hi) = u
        .iter()
        .chain(v)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if count < 2 || lo == hi {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

/// Tests `U ⪯ V` in the given mode from independent samples with
/// 3-standard-error margins.
pub fn convex_order_1d(u: &[f64], v: &[f64], thresholds: &[f64], mode: OrderMode) -> Result<OrderVerdict> {
    if u.is_empty() || v.is_empty() {
        return Err(SwingError::domain("convex order test needs nonempty samples"));
    }
    if thresholds.is_empty() {
        return Err(SwingError::domain("convex order test needs thresholds"));
    }
    let put = mode == OrderMode::Dcx;
    let mut entries: Vec<(f64, f64, Witness)> = thresholds
        .par_iter()
        .map(|&k| {
            let (pu, su) = potential(u, k, put);
            let (pv, sv) = potential(v, k, put);
            (pu - pv, 3.0 * su.hypot(sv), Witness::Threshold(k))
        })
        .collect();
    if mode == OrderMode::Cvx {
        let (mu, su) = mean_se(u);
        let (mv, sv) = mean_se(v);
        entries.push(((mu - mv).abs(), 3.0 * su.hypot(sv), Witness::Mean));
    }
    Ok(worst_of(entries))
}

/// Convex test functions for [`gaussian_convex_order_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// Euclidean norm.
    Norm,
    /// `(<u, y> - k)_+`.
    Ramp { direction: Vec<f64>, k: f64 },
}

impl TestFunction {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            TestFunction::Norm => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            TestFunction::Ramp { direction, k } => {
                (direction.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - k).max(0.0)
            }
        }
    }
}

/// The norm plus ramps over `directions` uniform directions and the given
/// thresholds.
pub fn default_test_family(d: usize, directions: usize, thresholds: &[f64], seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![TestFunction::Norm];
    for _ in 0..directions {
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|v| *v /= norm);
        for &k in thresholds {
            out.push(TestFunction::Ramp { direction: u.clone(), k });
        }
    }
    out
}

/// Empirical check of `AZ ⪯_cvx BZ` for `Z ~ N(0, I_q)` over a family of
/// convex test functions, on common samples with paired 3-standard-error
/// margins.
pub fn gaussian_convex_order_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    samples: usize,
    family: &[TestFunction],
    seed: u64,
) -> Result<OrderVerdict> {
    if a.shape() != b.shape() {
        return Err(SwingError::Dimension {
            expected: format!("{:?}", b.shape()),
            got: format!("{:?}", a.shape()),
        });
    }
    if samples < 2 || family.is_empty() {
        return Err(SwingError::domain("need at least two samples and one test function"));
    }
    let (d, q) = a.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ya = vec![0.0; samples * d];
    let mut yb = vec![0.0; samples * d];
    let mut z = vec![0.0; q];
    for s in 0..samples {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        for r in 0..d {
            ya[s * d + r] = (0..q).map(|c| a[(r, c)] * z[c]).sum();
            yb[s * d + r] = (0..q).map(|c| b[(r, c)] * z[c]).sum();
        }
    }
    let entries: Vec<(f64, f64, Witness)> = family
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let diffs: Vec<f64> = (0..samples)
                .map(|s| f.eval(&ya[s * d..(s + 1) * d]) - f.eval(&yb[s * d..(s + 1) * d]))
                .collect();
            let (m, se) = mean_se(&diffs);
            (m, 3.0 * se, Witness::TestFunction(i))
        })
        .collect();
    Ok(worst_of(entries))
}

/// Checks `⪯`-convexity of `field` through its structural form: convexity of
/// `|σ|` for scalar fields, of each `|λ_i|` for `A diag(λ(x)) O` fields, by
/// discrete second differences on `grid` at each time in `times`.
/// Opaque fields give an indeterminate verdict.
pub fn check_matrix_field_convexity(
    field: &dyn VolField,
    grid: &UniformGrid,
    times: &[f64],
    tol: f64,
) -> Result<OrderVerdict> {
    let form = field.structural_form();
    let (d, _) = field.dims();
    if form == StructuralForm::Opaque || d != 1 && form == StructuralForm::Scalar {
        return Ok(OrderVerdict::indeterminate(tol));
    }
    let nodes = grid.nodes();
    let mut entries: Vec<(f64, f64, Witness)> = Vec::new();
    for &t in times {
        let columns: Vec<Vec<f64>> = match form {
            StructuralForm::Scalar => {
                let mut out = [0.0];
                vec![nodes
                    .iter()
                    .map(|&x| {
                        field.eval_into(t, &[x], &mut out);
                        out[0].abs()
                    })
                    .collect()]
            }
            StructuralForm::RowDiagOrthogonal => {
                let rows: Vec<Vec<f64>> = nodes
                    .iter()
                    .map(|&x| {
                        field.diag_entries(t, x).ok_or_else(|| {
                            SwingError::config("field declares a diagonal form but exposes no entries")
                        })
                    })
                    .collect::<Result<_>>()?;
                let width = rows.first().map_or(0, |r| r.len());
                (0..width).map(|c| rows.iter().map(|r| r[c].abs()).collect()).collect()
            }
            StructuralForm::Opaque => unreachable!(),
        };
        for (c, col) in columns.iter().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(SwingError::Numerical(format!("non-finite field value at t = {t}")));
            }
            for (i, d2) in second_differences(col).into_iter().enumerate() {
                entries.push((-d2, tol, Witness::GridPoint { t, x: nodes[i + 1], component: c }));
            }
        }
    }
    Ok(worst_of(entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiConvexityReport {
    /// Estimated `a_σ ≥ 0`.
    pub a_sigma: f64,
    pub grid: UniformGrid,
    /// Smallest `Δ²(σ²) / Δx²` and where it occurs.
    pub min_curvature: f64,
    pub min_location: f64,
}

fn fine_grid_values(f: &dyn Fn(f64) -> f64, grid: &UniformGrid) -> Result<Vec<f64>> {
    if grid.points < 1000 {
        return Err(SwingError::domain(format!("need at least 1000 grid nodes, got {}", grid.points)));
    }
    let values: Vec<f64> = grid.nodes().iter().map(|&x| f(x)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(SwingError::Numerical(format!("non-finite value at x = {}", grid.node(i))));
    }
    Ok(values)
}

/// `a_σ = max(0, -min Δ²(σ²)/Δx²) / 2`: the smallest `a` making
/// `σ² + a x²` discretely convex on `grid`.
pub fn estimate_semiconvexity(sigma: impl Fn(f64) -> f64, grid: &UniformGrid) -> Result<SemiConvexityReport> {
    let sq = fine_grid_values(&|x| sigma(x).powi(2), grid)?;
    let step2 = grid.step().powi(2);
    let (i, min) = second_differences(&sq)
        .into_iter()
        .map(|d| d / step2)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| SwingError::domain("grid too small"))?;
    Ok(SemiConvexityReport {
        a_sigma: (-min).max(0.0) / 2.0,
        grid: grid.clone(),
        min_curvature: min,
        min_location: grid.node(i + 1),
    })
}

/// `c_β = max(0, -min (β(x_{i+1}) - β(x_i)) / Δx)`.
pub fn drift_monotonicity_coefficient(beta: impl Fn(f64) -> f64, grid: &UniformGrid) -> Result<f64> {
    let values = fine_grid_values(&beta, grid)?;
    let dx = grid.step();
    let min = values.windows(2).map(|w| (w[1] - w[0]) / dx).fold(f64::INFINITY, f64::min);
    Ok((-min).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    /// `Σ_{i=k}^{n-1} C^{mi} [Ψ_i] + C^{mn} [P]`.
    pub bound: f64,
    /// `C_{h,κ,σ} = 1 + h (κ_sup + σ_lip²/2)`.
    pub c_h: f64,
    /// `(i, C^{mi}, e^{t_i (κ_sup + σ_lip²/2)})` for `i = k..=n`, with `t_i = m i h`.
    pub envelope: Vec<(usize, f64, f64)>,
}

impl LipschitzBound {
    pub fn envelope_holds(&self) -> bool {
        self.envelope.iter().all(|(_, c, e)| *c <= *e * (1.0 + 1e-12))
    }
}

/// Lipschitz bound of `v_k` from the payoff constants `payoff_lips[i]`,
/// `i = 0..n`, and the penalty constant.
pub fn lipschitz_chain_bound(
    k: usize,
    m: usize,
    h: f64,
    kappa_sup: f64,
    sigma_lip: f64,
    payoff_lips: &[f64],
    penalty_lip: f64,
) -> Result<LipschitzBound> {
    let n = payoff_lips.len();
    if !(h > 0.0) || m == 0 || k > n {
        return Err(SwingError::domain("need h > 0, m ≥ 1 and k ≤ n"));
    }
    let rate = kappa_sup + sigma_lip * sigma_lip / 2.0;
    let c_h = 1.0 + h * rate;
    let power = |i: usize| c_h.powf((m * i) as f64);
    let bound = (k..n).map(|i| power(i) * payoff_lips[i]).sum::<f64>() + power(n) * penalty_lip;
    let envelope = (k..=n)
        .map(|i| (i, power(i), ((m * i) as f64 * h * rate).exp()))
        .collect();
    Ok(LipschitzBound { bound, c_h, envelope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_models::{vol_field_multifactor, uniform_times, InitialCurve, ModelSpec, OpaqueField, ScalarField};
    use crate::quadrature::{normal_call, INV_SQRT_2PI};
    use proptest::prelude::*;

    fn m2(v: [f64; 4]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &v)
    }

    #[test]
    fn psd_examples() {
        let v = psd_order(&DMatrix::identity(2, 2), &m2([2.0, 0.0, 0.0, 1.0]), 1e-12).unwrap();
        assert!(v.holds);
        let v = psd_order(&m2([2.0, 0.0, 0.0, 1.0]), &DMatrix::identity(2, 2), 1e-12).unwrap();
        assert!(!v.holds);
        assert!((v.worst_violation - 3.0).abs() < 1e-12);
        assert!(psd_order(&DMatrix::identity(2, 2), &DMatrix::identity(2, 3), 0.0).is_err());
    }

    #[test]
    fn psd_scalar_case_is_absolute_value_order() {
        for (a, b) in [(0.3, -0.5), (-0.5, 0.3), (1.0, 1.0), (-2.0, 2.0)] {
            let v = psd_order(&DMatrix::from_element(1, 1, a), &DMatrix::from_element(1, 1, b), 1e-14).unwrap();
            assert_eq!(v.holds, f64::abs(a) <= f64::abs(b), "{a} {b}");
        }
    }

    #[test]
    fn row_norm_order_does_not_give_psd_order() {
        // Equal row norms, rho = 0.5: |A|² = |B|² but A L ⪯ B L fails.
        let l = crate::market_models::cholesky_explicit(0.5, 2).unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]) * &l;
        let b = DMatrix::from_row_slice(1, 2, &[2f64.sqrt(), 0.0]) * &l;
        let v = psd_order(&a, &b, 1e-12).unwrap();
        assert!(!v.holds);
        // B Γ Bᵀ - A Γ Aᵀ = ρ((ΣB)² - (ΣA)²) + (1 - ρ)(|B|² - |A|²) = 0.5 (2 - 4) = -1.
        assert!((v.worst_violation - 1.0).abs() < 1e-12);
        // Entrywise 0 ≤ A_i ≤ B_i is sufficient.
        let a = DMatrix::from_row_slice(1, 2, &[0.2, 0.5]) * &l;
        let b = DMatrix::from_row_slice(1, 2, &[0.7, 0.5]) * &l;
        assert!(psd_order(&a, &b, 1e-12).unwrap().holds);
    }

    proptest! {
        #[test]
        fn psd_is_reflexive_and_transitive(
            a in prop::collection::vec(-2.0f64..2.0, 6),
            extra1 in prop::collection::vec(-1.0f64..1.0, 6),
            extra2 in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            // [A 0] ⪯ [A E1] ⪯ [A E1 E2] as 2×9 blocks padded with zeros.
            let pad = |blocks: &[&Vec<f64>]| {
                DMatrix::from_fn(2, 9, |r, c| blocks.get(c / 3).map_or(0.0, |b| b[r * 3 + c % 3]))
            };
            let ma = pad(&[&a]);
            let mb = pad(&[&a, &extra1]);
            let mc = pad(&[&a, &extra1, &extra2]);
            prop_assert!(psd_order(&ma, &ma, 0.0).unwrap().holds);
            prop_assert!(psd_order(&ma, &mb, 1e-12).unwrap().holds);
            prop_assert!(psd_order(&mb, &mc, 1e-12).unwrap().holds);
            prop_assert!(psd_order(&ma, &mc, 1e-12).unwrap().holds);
        }
    }

    fn normals(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
    }

    #[test]
    fn one_dimensional_order_on_normals() {
        let u = normals(100_000, 1.0, 1);
        let v = normals(100_000, 2.0, 2);
        let ks = threshold_grid(&u, &v, 101);
        assert!(convex_order_1d(&u, &v, &ks, OrderMode::Cvx).unwrap().holds);
        let rev = convex_order_1d(&v, &u, &ks, OrderMode::Cvx).unwrap();
        assert!(!rev.holds);
        let same = convex_order_1d(&u, &u, &ks, OrderMode::Cvx).unwrap();
        assert!(same.holds);
        assert_eq!(same.worst_violation, 0.0);
        // E(σZ)_+ closed form.
        let (p, se) = potential(&v, 0.0, false);
        assert!((p - 2.0 * INV_SQRT_2PI).abs() < 4.0 * se);
        let (p, se) = potential(&v, 1.0, false);
        assert!((p - normal_call(2.0, 1.0)).abs() < 4.0 * se);
    }

    #[test]
    fn cvx_rejects_shifted_means_but_icx_accepts() {
        let u = normals(50_000, 1.0, 3);
        let v: Vec<f64> = normals(50_000, 1.0, 4).iter().map(|x| x + 0.5).collect();
        let ks = threshold_grid(&u, &v, 51);
        let cvx = convex_order_1d(&u, &v, &ks, OrderMode::Cvx).unwrap();
        assert!(!cvx.holds);
        assert_eq!(cvx.witness, Witness::Mean);
        assert!(convex_order_1d(&u, &v, &ks, OrderMode::Icx).unwrap().holds);
        assert!(!convex_order_1d(&u, &v, &ks, OrderMode::Dcx).unwrap().holds);
        assert!(convex_order_1d(&v, &u, &ks, OrderMode::Dcx).unwrap().holds);
    }

    #[test]
    fn gaussian_check_examples() {
        let fam = default_test_family(2, 8, &[-0.5, 0.0, 0.5, 1.0], 9);
        let b = m2([1.0, 0.3, -0.2, 0.8]);
        let zero = DMatrix::zeros(2, 2);
        assert!(gaussian_convex_order_check(&zero, &b, 20_000, &fam, 1).unwrap().holds);
        let wide = DMatrix::from_fn(2, 3, |r, c| if c < 2 { b[(r, c)] } else { 0.4 * (r as f64 + 1.0) });
        let narrow = DMatrix::from_fn(2, 3, |r, c| if c < 2 { b[(r, c)] } else { 0.0 });
        assert!(psd_order(&narrow, &wide, 1e-12).unwrap().holds);
        assert!(gaussian_convex_order_check(&narrow, &wide, 20_000, &fam, 2).unwrap().holds);
        assert!(!gaussian_convex_order_check(&wide, &narrow, 20_000, &fam, 2).unwrap().holds);
    }

    #[test]
    fn isotropic_norm_ratio() {
        // E|σZ| / E|ϑZ| = σ / ϑ exactly on common samples.
        let fam = [TestFunction::Norm];
        let (s, t) = (0.5, 1.5);
        let a = DMatrix::<f64>::identity(3, 3) * s;
        let b = DMatrix::<f64>::identity(3, 3) * t;
        let v = gaussian_convex_order_check(&a, &b, 10_000, &fam, 5).unwrap();
        assert!(v.holds);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut ea, mut eb) = (0.0, 0.0);
        for _ in 0..10_000 {
            let z: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let r = z.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            ea += s * r;
            eb += t * r;
        }
        assert!((ea / eb - s / t).abs() < 1e-12);
    }

    #[test]
    fn field_convexity_examples() {
        let grid = UniformGrid::new(-3.0, 3.0, 601).unwrap();
        let lin = ScalarField::linear(0.4);
        assert!(check_matrix_field_convexity(&lin, &grid, &[0.0], 1e-12).unwrap().holds);
        let kinked = ScalarField::new(|_, x: f64| (2.0 - (x * x).min(1.0)).sqrt());
        let v = check_matrix_field_convexity(&kinked, &grid, &[0.0], 1e-12).unwrap();
        assert!(!v.holds);
        match v.witness {
            Witness::GridPoint { x, .. } => assert!((x.abs() - 1.0).abs() < 0.02, "{x}"),
            w => panic!("unexpected witness {w:?}"),
        }
        let model = ModelSpec::new(vec![0.4, 1.0, 4.0], vec![0.7, 0.4, 0.3], 0.3, InitialCurve::Flat(20.0)).unwrap();
        let times = uniform_times(15.0 / 365.0, 15);
        let field = vol_field_multifactor(&model, 15.0 / 365.0, &times);
        let pos = UniformGrid::new(0.0, 60.0, 121).unwrap();
        assert!(check_matrix_field_convexity(&field, &pos, &times, 1e-12).unwrap().holds);
        let opaque = OpaqueField::new(1, 1, |_, x| DMatrix::from_element(1, 1, x[0].sin()));
        let v = check_matrix_field_convexity(&opaque, &grid, &[0.0], 1e-12).unwrap();
        assert_eq!(v.status, VerdictStatus::Indeterminate);
    }

    #[test]
    fn semiconvexity_examples() {
        let grid = UniformGrid::new(-3.0, 3.0, 6001).unwrap();
        assert_eq!(estimate_semiconvexity(|x| x, &grid).unwrap().a_sigma, 0.0);
        assert_eq!(estimate_semiconvexity(|_| 0.7, &grid).unwrap().a_sigma, 0.0);
        let r = estimate_semiconvexity(|x: f64| (2.0 - (x * x).min(1.0)).sqrt(), &grid).unwrap();
        assert!((r.a_sigma - 1.0).abs() < 1e-2, "{}", r.a_sigma);
        let small = UniformGrid::new(-3.0, 3.0, 100).unwrap();
        assert!(estimate_semiconvexity(|x| x, &small).is_err());
        assert!(estimate_semiconvexity(|x: f64| 1.0 / x, &UniformGrid::new(-1.0, 1.0, 1001).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn semiconvexity_scales_quadratically(c in 0.1f64..5.0, w in 1.0f64..3.0) {
            // Rounding of σ itself perturbs Δ²(σ²) by ~ε σ², so the curvature must
            // dominate ε σ² / Δx² for a 1e-10 relative match.
            let grid = UniformGrid::new(-3.0, 3.0, 1001).unwrap();
            let f = move |x: f64| (1.0 + 0.5 * (w * x).sin()).abs();
            let base = estimate_semiconvexity(f, &grid).unwrap().a_sigma;
            let scaled = estimate_semiconvexity(move |x| c * f(x), &grid).unwrap().a_sigma;
            prop_assert!((scaled - c * c * base).abs() <= 1e-10 * (c * c * base).max(1e-300));
        }
    }

    #[test]
    fn drift_coefficient_examples() {
        let grid = UniformGrid::new(-3.0, 3.0, 1201).unwrap();
        assert_eq!(drift_monotonicity_coefficient(|x| 0.8 * (x - 1.0), &grid).unwrap(), 0.0);
        assert!((drift_monotonicity_coefficient(|x| -0.5 * x, &grid).unwrap() - 0.5).abs() < 1e-12);
        let c = drift_monotonicity_coefficient(|x: f64| if x < 0.0 { -2.0 * x } else { x }, &grid).unwrap();
        assert!((c - 2.0).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_bound_examples() {
        let b = lipschitz_chain_bound(0, 10, 0.1, 0.5, 1.0, &[0.0; 3], 0.0).unwrap();
        assert_eq!(b.bound, 0.0);
        assert!((b.c_h - 1.1).abs() < 1e-15);
        let (_, c10, e1) = b.envelope[1];
        assert!((c10 - 1.1f64.powi(10)).abs() < 1e-12);
        assert!((c10 - 2.5937424601).abs() < 1e-9);
        assert!((e1 - 1f64.exp()).abs() < 1e-12);
        assert!(b.envelope_holds());
        let lips = [1.0, 2.0, 0.5, 3.0];
        let bounds: Vec<f64> = (0..=4)
            .map(|k| lipschitz_chain_bound(k, 2, 0.05, 0.3, 0.7, &lips, 1.5).unwrap().bound)
            .collect();
        assert!(bounds.windows(2).all(|w| w[1] <= w[0]));
    }
}

//! Gaussian quadrature rules and standard normal helpers.

use nalgebra::{DMatrix, SymmetricEigen};
use libm::erfc;

/// Nodes and weights of a one-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

// Golub–Welsch: eigen-decomposition of the symmetric Jacobi matrix.
fn golub_welsch(off_diag: &[f64], mass: f64) -> Rule {
    let n = off_diag.len() + 1;
    let mut jac = DMatrix::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Enforce exact symmetry of the rule around zero.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let z = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-z, w);
        pairs[j] = (z, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Hermite rule for the standard normal law: `E f(Z) ≈ Σ w_j f(z_j)`,
/// exact for polynomials of degree `< 2n`. Weights sum to one.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "need at least one node");
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut rule = golub_welsch(&off, 1.0);
    let total: f64 = rule.weights.iter().sum();
    rule.weights.iter_mut().for_each(|w| *w /= total);
    rule
}

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Rule {
    assert!(n >= 1, "need at least one node");
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let base = golub_welsch(&off, 2.0);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    Rule {
        nodes: base.nodes.iter().map(|z| mid + half * z).collect(),
        weights: base.weights.iter().map(|w| half * w).collect(),
    }
}

/// Composite Gauss–Legendre rule: `panels` equal sub-intervals of `[a, b]`,
/// `n` nodes each.
pub fn composite_gauss_legendre(n: usize, panels: usize, a: f64, b: f64) -> Rule {
    let width = (b - a) / panels as f64;
    let unit = gauss_legendre(n, 0.0, 1.0);
    let mut nodes = Vec::with_capacity(n * panels);
    let mut weights = Vec::with_capacity(n * panels);
    for p in 0..panels {
        let lo = a + width * p as f64;
        for (z, w) in unit.nodes.iter().zip(&unit.weights) {
            nodes.push(lo + width * z);
            weights.push(width * w);
        }
    }
    Rule { nodes, weights }
}

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `E(σZ - k)_+` for `Z ~ N(0, 1)` and `σ ≥ 0`.
pub fn normal_call(sigma: f64, k: f64) -> f64 {
    if sigma == 0.0 {
        return (-k).max(0.0);
    }
    sigma * norm_pdf(k / sigma) - k * (1.0 - norm_cdf(k / sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_moment(p: u32) -> f64 {
        if p % 2 == 1 {
            0.0
        } else {
            (1..p).step_by(2).map(|k| k as f64).product()
        }
    }

    #[test]
    fn hermite_reproduces_gaussian_moments() {
        for n in [8, 16, 32] {
            let rule = gauss_hermite(n);
            for p in 0..(2 * n as u32).min(24) {
                let got = rule.integrate(|z| z.powi(p as i32));
                let want = normal_moment(p);
                let scale = normal_moment(p + p % 2);
                assert!((got - want).abs() <= 1e-11 * scale, "n={n} p={p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn hermite_is_symmetric() {
        let rule = gauss_hermite(32);
        for i in 0..16 {
            assert_eq!(rule.nodes[i], -rule.nodes[31 - i]);
            assert_eq!(rule.weights[i], rule.weights[31 - i]);
        }
    }

    #[test]
    fn legendre_exact_on_polynomials() {
        let rule = gauss_legendre(10, -1.5, 2.0);
        for p in 0..20 {
            let got = rule.integrate(|x| x.powi(p));
            let want = (2f64.powi(p + 1) - (-1.5f64).powi(p + 1)) / (p + 1) as f64;
            assert!((got - want).abs() < 1e-11 * want.abs().max(1.0), "p={p}");
        }
    }

    #[test]
    fn composite_legendre_integrates_density() {
        let rule = composite_gauss_legendre(16, 40, -3.0, 3.0);
        let mass = rule.integrate(norm_pdf);
        assert!((mass - (norm_cdf(3.0) - norm_cdf(-3.0))).abs() < 1e-14);
    }

    #[test]
    fn normal_helpers() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!((normal_call(1.0, 0.0) - INV_SQRT_2PI).abs() < 1e-15);
        assert!((normal_call(2.0, 0.0) - 2.0 * INV_SQRT_2PI).abs() < 1e-15);
        // Put–call parity: E(σZ - k)_+ - E(k - σZ)_+ = -k.
        let (s, k) = (1.7, 0.4);
        let put = normal_call(s, k) + k;
        assert!((put - normal_call(s, -k)).abs() < 1e-14);
    }
}

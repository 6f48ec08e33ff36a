//! Gauss quadrature rules for probability measures.
//!
//! Every rule here integrates against a probability measure, so the weights
//! sum to one: Gauss-Legendre rules live on `[0, 1]` (Lebesgue measure) and
//! Gauss-Hermite rules integrate against the standard normal law.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial `P_n(t)` and its derivative on `[-1, 1]`.
fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// `n`-point Gauss-Legendre rule on `[0, 1]` with weights summing to one.
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    assert!(n > 0, "quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi-style initial guess, then Newton.
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, t);
            let step = p / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, t);
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        // map [-1, 1] -> [0, 1]; weights halve
        nodes[i] = 0.5 * (1.0 - t);
        nodes[n - 1 - i] = 0.5 * (1.0 + t);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    QuadratureRule { nodes, weights }
}

/// Composite Gauss-Legendre rule over the panels delimited by `breaks`
/// (sorted, starting at 0 and ending at 1), `per_panel` nodes each.
pub fn gauss_legendre_composite(breaks: &[f64], per_panel: usize) -> QuadratureRule {
    let base = gauss_legendre(per_panel);
    let mut nodes = Vec::with_capacity(per_panel * breaks.len());
    let mut weights = Vec::with_capacity(per_panel * breaks.len());
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        for (&x, &w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(a + h * x);
            weights.push(h * w);
        }
    }
    QuadratureRule { nodes, weights }
}

/// Equally spaced panel breaks `0, 1/m, ..., 1`.
pub fn uniform_breaks(m: usize) -> Vec<f64> {
    (0..=m).map(|i| i as f64 / m as f64).collect()
}

/// The 2048-node Gauss-Legendre rule used for L² risk integrals, built once.
pub fn risk_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(2048))
}

/// Orthonormal probabilists' Hermite polynomials `p_0..p_{n}` at `x`.
pub(crate) fn hermite_orthonormal(n: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if n == 0 {
        return;
    }
    out[1] = x;
    for k in 1..n {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// `n`-point Gauss-Hermite rule for the standard normal law.
///
/// Nodes come from the Golub-Welsch eigenproblem and are polished by Newton
/// steps on the orthonormal recurrence; weights use the Christoffel formula
/// `1 / sum_k p_k(x)^2`, which is stable for the tiny outer weights.
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    assert!(n > 0, "quadrature rule needs at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut p = vec![0.0; n + 1];
    let nf = n as f64;
    for x in nodes.iter_mut() {
        for _ in 0..4 {
            hermite_orthonormal(n, *x, &mut p);
            // p_n'(x) = sqrt(n) p_{n-1}(x)
            let dp = nf.sqrt() * p[n - 1];
            if dp == 0.0 {
                break;
            }
            let step = p[n] / dp;
            *x -= step;
            if step.abs() < 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // enforce exact symmetry
    for i in 0..n / 2 {
        let s = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -s;
        nodes[n - 1 - i] = s;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            hermite_orthonormal(n - 1, x, &mut p);
            1.0 / p[..n].iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    QuadratureRule { nodes, weights }
}

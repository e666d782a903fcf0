//! Gauss–Legendre quadrature for matrix-valued integrands on an interval.

use nalgebra::DMatrix;

/// Nodes and weights of an `order`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Chebyshev-like initial guess for the i-th root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]` with this rule.
    pub fn integrate<F>(&self, a: f64, b: f64, f: &F) -> DMatrix<f64>
    where
        F: Fn(f64) -> DMatrix<f64>,
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc: Option<DMatrix<f64>> = None;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x) * (w * half);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
        acc.expect("rule has at least one node")
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Adaptive composite Gauss–Legendre integration.
///
/// A panel is accepted when the single-panel estimate agrees with the
/// two-half-panel estimate to `rel_tol` (relative to the larger norm) or
/// `abs_tol`.
pub fn adaptive_integrate<F>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    f: &F,
    rel_tol: f64,
    abs_tol: f64,
    max_depth: usize,
) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let whole = rule.integrate(a, b, f);
    refine(rule, a, b, f, whole, rel_tol, abs_tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn refine<F>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    f: &F,
    whole: DMatrix<f64>,
    rel_tol: f64,
    abs_tol: f64,
    depth: usize,
) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, f);
    let right = rule.integrate(mid, b, f);
    let split = &left + &right;
    let diff = (&split - &whole).norm();
    if depth == 0 || diff <= abs_tol || diff <= rel_tol * split.norm().max(whole.norm()) {
        return split;
    }
    let l = refine(rule, a, mid, f, left, rel_tol, abs_tol / 2.0, depth - 1);
    let r = refine(rule, mid, b, f, right, rel_tol, abs_tol / 2.0, depth - 1);
    l + r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_interval_length() {
        for order in [1, 2, 5, 20, 31] {
            let rule = GaussLegendre::new(order);
            let s: f64 = rule.weights.iter().sum();
            assert_relative_eq!(s, 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn exact_for_degree_two_n_minus_one() {
        let rule = GaussLegendre::new(20);
        let f = |s: f64| DMatrix::from_element(1, 1, s.powi(39));
        let v = rule.integrate(0.0, 1.0, &f);
        assert_relative_eq!(v[(0, 0)], 1.0 / 40.0, epsilon = 1e-15);
    }

    #[test]
    fn adaptive_handles_smooth_transcendental() {
        let rule = GaussLegendre::new(20);
        let f = |s: f64| DMatrix::from_row_slice(1, 2, &[s.exp(), (10.0 * s).sin()]);
        let v = adaptive_integrate(&rule, 0.0, 1.0, &f, 1e-15, 0.0, 8);
        assert_relative_eq!(v[(0, 0)], std::f64::consts::E - 1.0, epsilon = 1e-14);
        assert_relative_eq!(v[(0, 1)], (1.0 - 10f64.cos()) / 10.0, epsilon = 1e-14);
    }
}

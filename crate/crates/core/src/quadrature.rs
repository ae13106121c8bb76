//! Gauss-Legendre rules and an adaptive composite integrator.
//!
//! Every integral in the crate (normalizers, expectations, interpolant
//! masses, integrated squared errors) goes through this module.

use std::f64::consts::PI;

/// An `n`-point Gauss-Legendre rule on the reference interval `[-1, 1]`.
///
/// Exact for polynomials of degree `2n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on the Legendre polynomial `P_n`,
    /// seeded with the Chebyshev-like initial guesses `cos(pi (i - 1/4) / (n + 1/2))`.
    ///
    /// # Panics
    ///
    /// Panics if `n == 0`.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "a Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Applies the rule to `f` on `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Returns `(P_n(x), P_n'(x))` from the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const ADAPTIVE_MAX_DEPTH: u32 = 40;

/// Adaptive composite Gauss-Legendre integration of `f` over `[a, b]`.
///
/// Each panel is integrated with a 10-point rule and compared against the
/// sum over its two halves; panels are bisected until the difference falls
/// under the share of `abs_tol` proportional to the panel width.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = GaussLegendre::new(10);
    let whole = rule.integrate(&f, a, b);
    adaptive_step(&f, &rule, a, b, whole, abs_tol, b - a, 0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    abs_tol: f64,
    total_width: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(f, a, mid);
    let right = rule.integrate(f, mid, b);
    let refined = left + right;
    let budget = abs_tol * (b - a) / total_width;
    if (refined - whole).abs() <= budget || depth >= ADAPTIVE_MAX_DEPTH {
        return refined;
    }
    adaptive_step(f, rule, a, mid, left, abs_tol, total_width, depth + 1)
        + adaptive_step(f, rule, mid, b, right, abs_tol, total_width, depth + 1)
}

/// Adaptive integration over consecutive panels `[breaks[i], breaks[i+1]]`.
///
/// Used when the integrand is known to be smooth only between the breaks.
pub fn integrate_adaptive_on<F: Fn(f64) -> f64>(f: F, breaks: &[f64], abs_tol: f64) -> f64 {
    if breaks.len() < 2 {
        return 0.0;
    }
    let total = breaks[breaks.len() - 1] - breaks[0];
    if total <= 0.0 {
        return 0.0;
    }
    let rule = GaussLegendre::new(10);
    breaks
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                return 0.0;
            }
            let whole = rule.integrate(&f, a, b);
            let tol = abs_tol * (b - a) / total;
            adaptive_step(&f, &rule, a, b, whole, tol, b - a, 0)
        })
        .sum()
}

/// Composite trapezoid rule on `points` equally spaced nodes over `[a, b]`.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> f64 {
    assert!(points >= 2);
    let h = (b - a) / (points - 1) as f64;
    let inner: f64 = (1..points - 1).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// Trapezoid rule on tabulated, possibly non-uniform, data.
pub fn trapezoid_table(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

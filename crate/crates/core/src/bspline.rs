//! B-splines on clamped knot sequences.
//!
//! A [`KnotSequence`] `t_0 <= ... <= t_N` of order `k` carries `k`-fold knots
//! at both ends of its support `[a, b]` and simple knots in between. It spans
//! `N - k + 1` B-splines `B_{j,k}`, `j = 0..=N-k`, which form a partition of
//! unity on `[a, b]`.
//!
//! Evaluation uses the Cox-de Boor recurrence with two conventions:
//!
//! * a recurrence term whose denominator `t_{j+k-1} - t_j` (or
//!   `t_{j+k} - t_{j+1}`) vanishes contributes zero;
//! * supports are half open, `[t_j, t_{j+k})`, except that the right end `b`
//!   is attached to the last nonempty knot interval, so values at `b` are left
//!   limits and `sum_j B_j(b) = 1`.
//!
//! Derivatives at interior knots are therefore right limits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BsplineError {
    #[error("divided differences need distinct abscissae, {0} appears twice")]
    DegenerateKnots(f64),

    #[error("index {index} out of range, expected at most {max}")]
    IndexError { index: usize, max: usize },

    #[error("x = {x} lies outside the support [{a}, {b}]")]
    OutOfSupport { x: f64, a: f64, b: f64 },

    #[error("least-squares system is rank deficient")]
    SingularSystem,

    #[error("invalid knot sequence: {0}")]
    InvalidKnots(String),

    #[error("length mismatch: {0} abscissae but {1} values")]
    LengthMismatch(usize, usize),

    #[error("grid of {grid} points is too small for {basis} basis functions")]
    GridTooSmall { grid: usize, basis: usize },
}

/// Nondecreasing knots `t_0..=t_N` with `k`-fold end knots and simple interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKnots", into = "RawKnots")]
pub struct KnotSequence {
    knots: Vec<f64>,
    order: usize,
}

#[derive(Serialize, Deserialize)]
struct RawKnots {
    order: usize,
    knots: Vec<f64>,
}

impl TryFrom<RawKnots> for KnotSequence {
    type Error = BsplineError;

    fn try_from(raw: RawKnots) -> Result<Self, Self::Error> {
        KnotSequence::new(raw.knots, raw.order)
    }
}

impl From<KnotSequence> for RawKnots {
    fn from(k: KnotSequence) -> Self {
        RawKnots {
            order: k.order,
            knots: k.knots,
        }
    }
}

impl KnotSequence {
    /// Validates and wraps a clamped knot vector.
    pub fn new(knots: Vec<f64>, order: usize) -> Result<Self, BsplineError> {
        if order == 0 {
            return Err(BsplineError::InvalidKnots("order must be at least 1".into()));
        }
        if knots.len() < 2 * order {
            return Err(BsplineError::InvalidKnots(format!(
                "order {order} needs at least {} knots, got {}",
                2 * order,
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(BsplineError::InvalidKnots("knots must be finite".into()));
        }
        let n = knots.len() - 1;
        let (a, b) = (knots[0], knots[n]);
        if a >= b {
            return Err(BsplineError::InvalidKnots(format!("empty support [{a}, {b}]")));
        }
        if knots[..order].iter().any(|&t| t != a) || knots[n + 1 - order..].iter().any(|&t| t != b) {
            return Err(BsplineError::InvalidKnots(format!(
                "end knots must have multiplicity {order}"
            )));
        }
        let interior = &knots[order - 1..=n + 1 - order];
        if interior.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BsplineError::InvalidKnots(
                "interior knots must be strictly increasing".into(),
            ));
        }
        Ok(Self { knots, order })
    }

    /// Uniform knots on `[a, b]` with `pieces` equal intervals of width `h = (b - a) / pieces`.
    pub fn uniform(a: f64, b: f64, pieces: usize, order: usize) -> Result<Self, BsplineError> {
        if pieces == 0 {
            return Err(BsplineError::InvalidKnots("need at least one interval".into()));
        }
        if !(a < b) {
            return Err(BsplineError::InvalidKnots(format!("empty support [{a}, {b}]")));
        }
        let mut knots = Vec::with_capacity(pieces + 2 * order - 1);
        knots.extend(std::iter::repeat_n(a, order));
        for i in 1..pieces {
            knots.push(a + (b - a) * i as f64 / pieces as f64);
        }
        knots.extend(std::iter::repeat_n(b, order));
        Self::new(knots, order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index `N` of the last knot.
    pub fn last_index(&self) -> usize {
        self.knots.len() - 1
    }

    /// Number of B-splines, `L + 1 = N - k + 1`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.last_index()])
    }

    /// `[t_{k-1}, t_{N-k+1}]`, which coincides with the support for clamped knots.
    pub fn basic_interval(&self) -> (f64, f64) {
        (self.knots[self.order - 1], self.knots[self.last_index() + 1 - self.order])
    }

    /// Distinct knots from `a` to `b`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.knots[self.order - 1..=self.last_index() + 1 - self.order]
    }

    /// Number of nonempty knot intervals.
    pub fn intervals(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Largest gap between consecutive interior knots.
    pub fn max_gap(&self) -> f64 {
        self.breakpoints()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Smallest gap between consecutive interior knots.
    pub fn min_gap(&self) -> f64 {
        self.breakpoints()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Global mesh ratio `max_gap / min_gap`; 1 for uniform knots.
    pub fn mesh_ratio(&self) -> f64 {
        self.max_gap() / self.min_gap()
    }

    /// Index `mu` of the knot interval `[t_mu, t_{mu+1})` holding `x`, with `b`
    /// assigned to the last nonempty interval. `None` outside `[a, b]`.
    pub fn span(&self, x: f64) -> Option<usize> {
        let (a, b) = self.support();
        if !(a..=b).contains(&x) {
            return None;
        }
        let k = self.order;
        let last = self.last_index() - k;
        if x >= b {
            return Some(last);
        }
        // first index in [k-1, last] whose right end exceeds x
        let bp = self.breakpoints();
        let pos = bp.partition_point(|&t| t <= x);
        Some((k - 1 + pos - 1).min(last))
    }

    /// Values of the `k` B-splines that may be nonzero at `x`.
    ///
    /// Writes `B_{mu-k+1}(x), ..., B_mu(x)` into `out` and returns `mu`.
    /// Returns `None` (and leaves `out` untouched) outside `[a, b]`.
    pub fn basis_values(&self, x: f64, out: &mut [f64]) -> Option<usize> {
        let k = self.order;
        debug_assert!(out.len() >= k);
        let mu = self.span(x)?;
        let t = &self.knots;
        let mut left = [0.0f64; MAX_LOCAL_ORDER];
        let mut right = [0.0f64; MAX_LOCAL_ORDER];
        assert!(k <= MAX_LOCAL_ORDER, "order {k} exceeds supported maximum");
        out[0] = 1.0;
        for j in 1..k {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Some(mu)
    }

    fn check_index(&self, j: usize) -> Result<(), BsplineError> {
        let max = self.num_basis() - 1;
        if j > max {
            return Err(BsplineError::IndexError { index: j, max });
        }
        Ok(())
    }
}

/// Upper bound on the spline order handled by the stack-allocated local evaluator.
pub const MAX_LOCAL_ORDER: usize = 16;

/// Divided difference `[t_0, ..., t_m] g` for distinct abscissae.
///
/// This is the leading coefficient of the polynomial of degree `m` that
/// interpolates `(abscissae[i], values[i])`.
pub fn divided_difference(abscissae: &[f64], values: &[f64]) -> Result<f64, BsplineError> {
    if abscissae.len() != values.len() || abscissae.is_empty() {
        return Err(BsplineError::LengthMismatch(abscissae.len(), values.len()));
    }
    for (i, &x) in abscissae.iter().enumerate() {
        if abscissae[..i].contains(&x) {
            return Err(BsplineError::DegenerateKnots(x));
        }
    }
    let mut table = values.to_vec();
    let m = abscissae.len();
    for level in 1..m {
        for i in 0..m - level {
            table[i] = (table[i + 1] - table[i]) / (abscissae[i + level] - abscissae[i]);
        }
    }
    Ok(table[0])
}

fn indicator(t: &[f64], j: usize, x: f64) -> f64 {
    let b = t[t.len() - 1];
    let (lo, hi) = (t[j], t[j + 1]);
    if (lo <= x && x < hi) || (x == b && hi == b && lo < hi) {
        1.0
    } else {
        0.0
    }
}

fn recurrence(t: &[f64], j: usize, k: usize, x: f64) -> f64 {
    if k == 1 {
        return indicator(t, j, x);
    }
    let mut value = 0.0;
    let d_left = t[j + k - 1] - t[j];
    if d_left > 0.0 {
        value += (x - t[j]) / d_left * recurrence(t, j, k - 1, x);
    }
    let d_right = t[j + k] - t[j + 1];
    if d_right > 0.0 {
        value += (t[j + k] - x) / d_right * recurrence(t, j + 1, k - 1, x);
    }
    value
}

fn derivative(t: &[f64], j: usize, k: usize, alpha: usize, x: f64) -> f64 {
    if alpha == 0 {
        return recurrence(t, j, k, x);
    }
    if k == 1 {
        return 0.0;
    }
    let scale = (k - 1) as f64;
    let mut value = 0.0;
    let d_left = t[j + k - 1] - t[j];
    if d_left > 0.0 {
        value += derivative(t, j, k - 1, alpha - 1, x) / d_left;
    }
    let d_right = t[j + k] - t[j + 1];
    if d_right > 0.0 {
        value -= derivative(t, j + 1, k - 1, alpha - 1, x) / d_right;
    }
    scale * value
}

/// `B_{j,k}(x)` by the Cox-de Boor recurrence.
pub fn bspline_eval(knots: &KnotSequence, j: usize, x: f64) -> Result<f64, BsplineError> {
    knots.check_index(j)?;
    Ok(recurrence(&knots.knots, j, knots.order, x))
}

/// `alpha`-th derivative of `B_{j,k}` at `x`, by repeated application of
/// `B'_{j,k} = (k-1) (B_{j,k-1} / (t_{j+k-1} - t_j) - B_{j+1,k-1} / (t_{j+k} - t_{j+1}))`.
///
/// Orders `alpha >= k` give zero. Only `alpha < k - 1` is continuous across
/// simple interior knots; at a knot the right limit is returned.
pub fn bspline_derivative(
    knots: &KnotSequence,
    j: usize,
    x: f64,
    alpha: usize,
) -> Result<f64, BsplineError> {
    knots.check_index(j)?;
    if alpha >= knots.order {
        return Ok(0.0);
    }
    Ok(derivative(&knots.knots, j, knots.order, alpha, x))
}

/// `alpha`-th derivative of `B_{j,k}` over an arbitrary nondecreasing knot
/// vector `t`, which need not be clamped. `alpha = 0` gives the value.
pub fn bspline_on_knots(t: &[f64], j: usize, k: usize, x: f64, alpha: usize) -> Result<f64, BsplineError> {
    if k == 0 {
        return Err(BsplineError::InvalidKnots("order must be at least 1".into()));
    }
    if t.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(BsplineError::InvalidKnots("knots must be nondecreasing".into()));
    }
    if j + k >= t.len() {
        return Err(BsplineError::IndexError {
            index: j,
            max: t.len().saturating_sub(k + 1),
        });
    }
    if alpha >= k {
        return Ok(0.0);
    }
    Ok(derivative(t, j, k, alpha, x))
}

/// Upper bound `2^alpha / h^alpha * (k-1)! / (k-alpha-1)!` on `|B_{j,k}^(alpha)|`
/// with `h` the smallest interior knot gap.
pub fn derivative_bound(knots: &KnotSequence, alpha: usize) -> f64 {
    let k = knots.order;
    if alpha >= k {
        return 0.0;
    }
    let falling: f64 = ((k - alpha)..k).map(|i| i as f64).product();
    (2.0 / knots.min_gap()).powi(alpha as i32) * falling
}

/// A spline `sum_j y_j B_j` over a clamped knot sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFunction {
    knots: KnotSequence,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(knots: KnotSequence, coefficients: Vec<f64>) -> Result<Self, BsplineError> {
        if coefficients.len() != knots.num_basis() {
            return Err(BsplineError::LengthMismatch(knots.num_basis(), coefficients.len()));
        }
        Ok(Self { knots, coefficients })
    }

    pub fn knots(&self) -> &KnotSequence {
        &self.knots
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `sum_j y_j B_j^(alpha)(x)`, touching only the `k` locally supported terms.
    ///
    /// Outside `[a, b]` the value is 0; derivatives there are an error.
    pub fn eval(&self, x: f64, alpha: usize) -> Result<f64, BsplineError> {
        let (a, b) = self.knots.support();
        let k = self.knots.order;
        let mut local = [0.0; MAX_LOCAL_ORDER];
        let Some(mu) = self.knots.span(x) else {
            if alpha == 0 {
                return Ok(0.0);
            }
            return Err(BsplineError::OutOfSupport { x, a, b });
        };
        let first = mu + 1 - k;
        if alpha == 0 {
            self.knots.basis_values(x, &mut local);
            return Ok((0..k).map(|r| self.coefficients[first + r] * local[r]).sum());
        }
        if alpha >= k {
            return Ok(0.0);
        }
        let t = &self.knots.knots;
        Ok((first..=mu)
            .map(|j| self.coefficients[j] * derivative(t, j, k, alpha, x))
            .sum())
    }

    /// Value at `x`; zero outside the support.
    pub fn value(&self, x: f64) -> f64 {
        self.eval(x, 0).unwrap_or(0.0)
    }
}

/// Sup-norm residual, on a uniform grid of `grid_size` points, of the discrete
/// least-squares approximation to `g` from the spline space over `knots`.
///
/// This is a cheap upper surrogate for the Chebyshev distance from `g` to the
/// spline space.
pub fn spline_distance<G: Fn(f64) -> f64>(
    g: G,
    knots: &KnotSequence,
    grid_size: usize,
) -> Result<f64, BsplineError> {
    let basis = knots.num_basis();
    if grid_size < 10 * basis {
        return Err(BsplineError::GridTooSmall { grid: grid_size, basis });
    }
    let (a, b) = knots.support();
    let k = knots.order();
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| a + (b - a) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let mut design = DMatrix::<f64>::zeros(grid_size, basis);
    let mut local = [0.0; MAX_LOCAL_ORDER];
    for (row, &x) in grid.iter().enumerate() {
        let mu = knots.basis_values(x, &mut local).expect("grid lies in the support");
        for r in 0..k {
            design[(row, mu + 1 - k + r)] = local[r];
        }
    }
    let rhs = DVector::from_iterator(grid_size, grid.iter().map(|&x| g(x)));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(BsplineError::SingularSystem);
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|_| BsplineError::SingularSystem)?;
    let fitted = &design * coef;
    Ok((fitted - rhs).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple(knots: &[f64], k: usize) -> KnotSequence {
        // Bypasses clamping checks for the textbook examples on {0,1,2,3,4}.
        KnotSequence {
            knots: knots.to_vec(),
            order: k,
        }
    }

    #[test]
    fn divided_difference_examples() {
        assert_eq!(divided_difference(&[3.0], &[9.0]).unwrap(), 9.0);
        assert_eq!(divided_difference(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(divided_difference(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).unwrap(), 1.0);
        assert_eq!(
            divided_difference(&[0.0, 1.0, 0.0], &[0.0, 1.0, 4.0]),
            Err(BsplineError::DegenerateKnots(0.0))
        );
        assert!(matches!(
            divided_difference(&[0.0, 1.0], &[0.0]),
            Err(BsplineError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn order_one_is_an_indicator() {
        let t = simple(&[0.0, 1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(bspline_eval(&t, 1, 1.5).unwrap(), 1.0);
        assert_eq!(bspline_eval(&t, 1, 2.0).unwrap(), 0.0);
        assert_eq!(bspline_eval(&t, 1, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cubic_on_integer_knots_peaks_at_two_thirds() {
        let t = simple(&[0.0, 1.0, 2.0, 3.0, 4.0], 4);
        assert_relative_eq!(bspline_eval(&t, 0, 2.0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(bspline_eval(&t, 0, 4.5).unwrap(), 0.0);
        assert_eq!(bspline_eval(&t, 0, -0.1).unwrap(), 0.0);
    }

    #[test]
    fn index_out_of_range() {
        let t = KnotSequence::uniform(0.0, 1.0, 4, 4).unwrap();
        assert_eq!(t.num_basis(), 7);
        assert!(matches!(
            bspline_eval(&t, 7, 0.5),
            Err(BsplineError::IndexError { index: 7, max: 6 })
        ));
    }

    #[test]
    fn hat_function_slope() {
        let t = simple(&[0.0, 1.0, 2.0], 2);
        assert_relative_eq!(bspline_derivative(&t, 0, 0.5, 1).unwrap(), 1.0);
        assert_relative_eq!(bspline_derivative(&t, 0, 1.5, 1).unwrap(), -1.0);
        let t1 = simple(&[0.0, 1.0, 2.0, 3.0], 1);
        assert_eq!(bspline_derivative(&t1, 1, 1.5, 1).unwrap(), 0.0);
        let t4 = KnotSequence::uniform(0.0, 1.0, 5, 4).unwrap();
        assert_eq!(bspline_derivative(&t4, 2, 0.3, 4).unwrap(), 0.0);
    }

    #[test]
    fn right_end_is_left_continuous() {
        let t = KnotSequence::uniform(-1.0, 2.0, 6, 4).unwrap();
        let total: f64 = (0..t.num_basis()).map(|j| bspline_eval(&t, j, 2.0).unwrap()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
        assert_eq!(bspline_eval(&t, t.num_basis() - 1, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn local_basis_matches_recurrence() {
        let t = KnotSequence::new(vec![0.0, 0.0, 0.0, 0.3, 0.45, 1.0, 1.7, 1.7, 1.7], 3).unwrap();
        let mut local = [0.0; MAX_LOCAL_ORDER];
        for i in 0..=170 {
            let x = i as f64 / 100.0;
            let mu = t.basis_values(x, &mut local).unwrap();
            for j in 0..t.num_basis() {
                let expect = bspline_eval(&t, j, x).unwrap();
                let got = if j + 3 > mu && j <= mu { local[j + 2 - mu] } else { 0.0 };
                assert!((expect - got).abs() < 1e-14, "x={x} j={j}");
            }
        }
    }

    #[test]
    fn knot_validation() {
        assert!(KnotSequence::new(vec![0.0, 0.0, 1.0, 1.0], 2).is_ok());
        assert!(KnotSequence::new(vec![0.0, 0.1, 1.0, 1.0], 2).is_err());
        assert!(KnotSequence::new(vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0], 2).is_err());
        assert!(KnotSequence::new(vec![1.0, 1.0, 1.0, 1.0], 2).is_err());
        assert!(KnotSequence::uniform(1.0, 0.0, 3, 4).is_err());
        let t = KnotSequence::uniform(0.0, 2.0, 8, 4).unwrap();
        assert_relative_eq!(t.max_gap(), 0.25);
        assert_relative_eq!(t.min_gap(), 0.25);
        assert_relative_eq!(t.mesh_ratio(), 1.0, epsilon = 1e-12);
        assert_eq!(t.basic_interval(), (0.0, 2.0));
        let json = serde_json::to_string(&t).unwrap();
        let back: KnotSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<KnotSequence>(r#"{"order":2,"knots":[0,1,1,1]}"#).is_err());
    }

    #[test]
    fn spline_eval_edge_cases() {
        let t = KnotSequence::uniform(0.0, 3.0, 5, 4).unwrap();
        let s = SplineFunction::new(t.clone(), vec![2.5; t.num_basis()]).unwrap();
        for i in 0..=30 {
            assert_relative_eq!(s.eval(i as f64 / 10.0, 0).unwrap(), 2.5, epsilon = 1e-14);
        }
        assert_eq!(s.eval(3.5, 0).unwrap(), 0.0);
        assert!(matches!(s.eval(-0.5, 1), Err(BsplineError::OutOfSupport { .. })));
        let zero = SplineFunction::new(t.clone(), vec![0.0; t.num_basis()]).unwrap();
        assert_eq!(zero.eval(1.3, 0).unwrap(), 0.0);
        assert!(SplineFunction::new(t, vec![1.0; 3]).is_err());
    }

    #[test]
    fn spline_derivative_matches_finite_difference() {
        let t = KnotSequence::uniform(0.0, 1.0, 6, 4).unwrap();
        let y = vec![0.3, -1.2, 0.8, 2.0, -0.4, 0.1, 1.5, -0.7, 0.9];
        let s = SplineFunction::new(t, y).unwrap();
        let eps = 1e-6;
        for &x in &[0.05, 0.21, 0.4, 0.58, 0.77, 0.93] {
            let fd = (s.eval(x + eps, 0).unwrap() - s.eval(x - eps, 0).unwrap()) / (2.0 * eps);
            let exact = s.eval(x, 1).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "x={x}: {fd} vs {exact}");
        }
    }

    #[test]
    fn distance_to_own_space_and_constants() {
        let t = KnotSequence::uniform(0.0, 2.0, 7, 4).unwrap();
        let y: Vec<f64> = (0..t.num_basis()).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = SplineFunction::new(t.clone(), y).unwrap();
        let d = spline_distance(|x| s.value(x), &t, 200).unwrap();
        assert!(d <= 1e-10, "{d}");
        let c = spline_distance(|_| 4.2, &t, 200).unwrap();
        assert!(c <= 1e-12, "{c}");
        assert!(matches!(
            spline_distance(|_| 1.0, &t, 50),
            Err(BsplineError::GridTooSmall { .. })
        ));
    }
}

//! Combining subset fits into a full-data density estimate.
//!
//! The product `p_hat*(x) = prod_m f_m(x)` of the subset logspline densities is
//! sampled on a uniform grid and replaced by a composite Lagrange interpolant
//! `p_tilde*` of degree `l`. Because `p_tilde*` is piecewise polynomial, its
//! integral `lambda_tilde` is computed exactly, and `p_tilde = p_tilde* / lambda_tilde`
//! is the normalized estimate.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logspline::{check_beta, FitError, LogsplineFit};
use crate::quadrature::{integrate_adaptive_on, GaussLegendre};

#[derive(Error, Debug)]
pub enum ConsensusError {
    #[error("at least one subset fit is required")]
    NoFits,

    #[error("fit {index} has support [{got_a}, {got_b}], expected [{a}, {b}]")]
    SupportMismatch {
        index: usize,
        a: f64,
        b: f64,
        got_a: f64,
        got_b: f64,
    },

    #[error("fit {index} has spline order {got}, expected {expected}")]
    OrderMismatch { index: usize, expected: usize, got: usize },

    #[error("fit {0} did not converge")]
    NotConverged(usize),

    #[error("interpolation degree l = {l} needs splines of order at least l + 3, got k = {k}")]
    DegreeTooHigh { l: usize, k: usize },

    #[error("interpolation grid is coarser than the support: {raw_pieces} pieces")]
    GridTooCoarse { raw_pieces: f64 },

    #[error("Lagrange index out of range: piece {piece} of {pieces}, tau {tau} of degree {degree}")]
    IndexError {
        piece: usize,
        pieces: usize,
        tau: usize,
        degree: usize,
    },

    #[error("interpolated product integrates to {lambda_tilde}; the product has numerically vanished")]
    DegenerateProduct { lambda_tilde: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl From<FitError> for ConsensusError {
    fn from(e: FitError) -> Self {
        ConsensusError::InvalidParameter(e.to_string())
    }
}

/// The unnormalized product `prod_m f_m` of converged subset fits on a common support.
#[derive(Debug, Clone)]
pub struct ProductEstimator {
    fits: Vec<LogsplineFit>,
    support: (f64, f64),
}

impl ProductEstimator {
    pub fn new(fits: Vec<LogsplineFit>) -> Result<Self, ConsensusError> {
        let first = fits.first().ok_or(ConsensusError::NoFits)?;
        let (a, b) = first.support();
        let k = first.knots().order();
        for (index, fit) in fits.iter().enumerate() {
            let (got_a, got_b) = fit.support();
            if got_a != a || got_b != b {
                return Err(ConsensusError::SupportMismatch {
                    index,
                    a,
                    b,
                    got_a,
                    got_b,
                });
            }
            if fit.knots().order() != k {
                return Err(ConsensusError::OrderMismatch {
                    index,
                    expected: k,
                    got: fit.knots().order(),
                });
            }
            if !fit.converged() {
                return Err(ConsensusError::NotConverged(index));
            }
        }
        Ok(Self { fits, support: (a, b) })
    }

    pub fn fits(&self) -> &[LogsplineFit] {
        &self.fits
    }

    pub fn subsets(&self) -> usize {
        self.fits.len()
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Spline order shared by every fit.
    pub fn order(&self) -> usize {
        self.fits[0].knots().order()
    }

    /// `sum_m log f_m(x)`.
    pub fn log_eval(&self, x: f64) -> f64 {
        self.fits.iter().map(|f| f.log_density(x)).sum()
    }

    /// `p_hat*(x)`; zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        self.log_eval(x).exp()
    }

    /// Union of all fits' breakpoints, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut breaks: Vec<f64> = self
            .fits
            .iter()
            .flat_map(|f| f.knots().breakpoints().iter().copied())
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        breaks
    }

    /// `lambda_hat = integral p_hat*`, by adaptive quadrature between breakpoints.
    pub fn integral(&self, abs_tol: f64) -> f64 {
        integrate_adaptive_on(|x| self.eval(x), &self.breakpoints(), abs_tol)
    }
}

/// Uniform nodes `x_i = a + i (b - a) / (N l)`, `i = 0..=N l`, grouped into `N`
/// pieces of `l + 1` nodes sharing their endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationGrid {
    a: f64,
    b: f64,
    degree: usize,
    pieces: usize,
}

impl InterpolationGrid {
    pub fn new(a: f64, b: f64, degree: usize, pieces: usize) -> Result<Self, ConsensusError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ConsensusError::InvalidParameter(format!("invalid support [{a}, {b}]")));
        }
        if degree == 0 {
            return Err(ConsensusError::InvalidParameter("interpolation degree must be at least 1".into()));
        }
        if pieces == 0 {
            return Err(ConsensusError::GridTooCoarse { raw_pieces: 0.0 });
        }
        Ok(Self { a, b, degree, pieces })
    }

    /// The grid whose spacing is the largest value not above `dx` that divides `[a, b]`
    /// into whole pieces.
    pub fn from_dx(a: f64, b: f64, degree: usize, dx: f64) -> Result<Self, ConsensusError> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(ConsensusError::InvalidParameter(format!("node spacing must be positive, got {dx}")));
        }
        if degree == 0 {
            return Err(ConsensusError::InvalidParameter("interpolation degree must be at least 1".into()));
        }
        let raw_pieces = (b - a) / (dx * degree as f64);
        if !(raw_pieces >= 1.0) {
            return Err(ConsensusError::GridTooCoarse { raw_pieces });
        }
        Self::new(a, b, degree, (raw_pieces - 1e-9).ceil() as usize)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn num_nodes(&self) -> usize {
        self.pieces * self.degree + 1
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / (self.pieces * self.degree) as f64
    }

    /// `x_i`; the last node is exactly `b`.
    pub fn node(&self, i: usize) -> f64 {
        let total = self.pieces * self.degree;
        if i == total {
            return self.b;
        }
        self.a + (self.b - self.a) * (i as f64 / total as f64)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.num_nodes()).map(|i| self.node(i)).collect()
    }

    /// Piece owning `x`: shared nodes go to the left piece and `a` to piece 0.
    pub fn piece_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.a && x <= self.b) {
            return None;
        }
        let l = self.degree;
        // first piece whose right end is >= x
        let mut lo = 0;
        let mut hi = self.pieces - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.node((mid + 1) * l) >= x {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Some(lo)
    }
}

/// `l_{tau,i}(x) = prod_{j != tau} (x - x_{il+j}) / (x_{il+tau} - x_{il+j})`.
pub fn lagrange_basis(grid: &InterpolationGrid, piece: usize, tau: usize, x: f64) -> Result<f64, ConsensusError> {
    let l = grid.degree;
    if piece >= grid.pieces || tau > l {
        return Err(ConsensusError::IndexError {
            piece,
            pieces: grid.pieces,
            tau,
            degree: l,
        });
    }
    let base = piece * l;
    let xt = grid.node(base + tau);
    Ok((0..=l)
        .filter(|&j| j != tau)
        .map(|j| {
            let xj = grid.node(base + j);
            (x - xj) / (xt - xj)
        })
        .product())
}

/// Composite Lagrange interpolant `p_tilde*` of stored node values.
#[derive(Debug, Clone)]
pub struct CompositeInterpolant {
    grid: InterpolationGrid,
    nodes: Vec<f64>,
    node_values: Vec<f64>,
    lambda_tilde: f64,
}

impl CompositeInterpolant {
    /// Interpolates an arbitrary function on `grid`.
    pub fn from_fn<F: Fn(f64) -> f64 + Sync>(grid: InterpolationGrid, f: F) -> Result<Self, ConsensusError> {
        let nodes = grid.nodes();
        let node_values: Vec<f64> = nodes.par_iter().map(|&x| f(x)).collect();
        Self::from_values(grid, node_values)
    }

    /// Uses `node_values[i]` as the value at `x_i`.
    pub fn from_values(grid: InterpolationGrid, node_values: Vec<f64>) -> Result<Self, ConsensusError> {
        if node_values.len() != grid.num_nodes() {
            return Err(ConsensusError::InvalidParameter(format!(
                "expected {} node values, got {}",
                grid.num_nodes(),
                node_values.len()
            )));
        }
        let mut ci = Self {
            grid,
            nodes: grid.nodes(),
            node_values,
            lambda_tilde: f64::NAN,
        };
        let lambda_tilde = ci.integral();
        if !(lambda_tilde > 0.0 && lambda_tilde.is_finite()) {
            return Err(ConsensusError::DegenerateProduct { lambda_tilde });
        }
        ci.lambda_tilde = lambda_tilde;
        Ok(ci)
    }

    pub fn grid(&self) -> &InterpolationGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    pub fn lambda_tilde(&self) -> f64 {
        self.lambda_tilde
    }

    /// `p_tilde*(x)`; zero outside `[a, b]`.
    pub fn eval(&self, x: f64) -> f64 {
        match self.grid.piece_of(x) {
            Some(piece) => self.eval_piece(piece, x),
            None => 0.0,
        }
    }

    fn eval_piece(&self, piece: usize, x: f64) -> f64 {
        let l = self.grid.degree;
        let base = piece * l;
        let xs = &self.nodes[base..=base + l];
        let vs = &self.node_values[base..=base + l];
        (0..=l)
            .map(|tau| {
                let weight: f64 = (0..=l)
                    .filter(|&j| j != tau)
                    .map(|j| (x - xs[j]) / (xs[tau] - xs[j]))
                    .product();
                weight * vs[tau]
            })
            .sum()
    }

    /// `p_tilde(x) = p_tilde*(x) / lambda_tilde`.
    pub fn normalized_eval(&self, x: f64) -> f64 {
        self.eval(x) / self.lambda_tilde
    }

    /// Exact integral of the piecewise polynomial.
    fn integral(&self) -> f64 {
        let rule = GaussLegendre::new((self.grid.degree + 1).div_ceil(2));
        self.piece_integrals(&rule, |v| v)
    }

    fn piece_integrals<G: Fn(f64) -> f64>(&self, rule: &GaussLegendre, g: G) -> f64 {
        let l = self.grid.degree;
        (0..self.grid.pieces)
            .map(|i| {
                let (lo, hi) = (self.nodes[i * l], self.nodes[(i + 1) * l]);
                rule.mapped(lo, hi).map(|(x, w)| w * g(self.eval_piece(i, x))).sum::<f64>()
            })
            .sum()
    }

    /// `integral max(-p_tilde*, 0)`, the mass of interpolation undershoot below zero.
    pub fn negative_mass(&self) -> f64 {
        let rule = GaussLegendre::new(self.grid.degree + 8);
        self.piece_integrals(&rule, |v| (-v).max(0.0))
    }
}

/// Interpolates the product estimator.
///
/// Requires `l <= k - 3` for spline order `k`.
pub fn build_interpolant(pe: &ProductEstimator, grid: InterpolationGrid) -> Result<CompositeInterpolant, ConsensusError> {
    let k = pe.order();
    if grid.degree + 3 > k {
        return Err(ConsensusError::DegreeTooHigh { l: grid.degree, k });
    }
    let (a, b) = pe.support();
    let (ga, gb) = grid.support();
    if a != ga || b != gb {
        return Err(ConsensusError::SupportMismatch {
            index: 0,
            a: ga,
            b: gb,
            got_a: a,
            got_b: b,
        });
    }
    CompositeInterpolant::from_fn(grid, |x| pe.eval(x))
}

/// `c * norm^(-beta (1/(l+1) + 1/(j+1)))`.
pub fn choose_dx(norm: f64, beta: f64, l: usize, j: usize, c: f64) -> Result<f64, ConsensusError> {
    check_beta(beta)?;
    if !(norm > 0.0 && c > 0.0) || l == 0 {
        return Err(ConsensusError::InvalidParameter(format!(
            "need positive sample norm, constant and degree (got {norm}, {c}, {l})"
        )));
    }
    let exponent = -beta * (1.0 / (l as f64 + 1.0) + 1.0 / (j as f64 + 1.0));
    Ok(c * norm.powf(exponent))
}

/// Euclidean norm of the subset sample-size vector.
pub fn sample_norm(sizes: &[usize]) -> f64 {
    sizes.iter().map(|&n| (n as f64) * (n as f64)).sum::<f64>().sqrt()
}

/// Grid metadata written next to the combined table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineMeta {
    pub a: f64,
    pub b: f64,
    pub l: usize,
    pub dx: f64,
    pub pieces: usize,
    pub lambda_tilde: f64,
    pub lambda_hat: f64,
    pub negative_mass: f64,
    pub subsets: usize,
    pub k: usize,
    pub rows: usize,
    pub seed: Option<u64>,
}

impl CombineMeta {
    pub fn new(pe: &ProductEstimator, ci: &CompositeInterpolant, rows: usize) -> Self {
        let grid = ci.grid();
        let (a, b) = grid.support();
        Self {
            a,
            b,
            l: grid.degree(),
            dx: grid.dx(),
            pieces: grid.pieces(),
            lambda_tilde: ci.lambda_tilde(),
            lambda_hat: pe.integral(1e-12),
            negative_mass: ci.negative_mass(),
            subsets: pe.subsets(),
            k: pe.order(),
            rows,
            seed: None,
        }
    }
}

/// Abscissae for the exported table: the interpolation nodes, each interval
/// split evenly so that the table has at least `min_rows` rows.
pub fn export_abscissae(grid: &InterpolationGrid, min_rows: usize) -> Vec<f64> {
    let intervals = grid.num_nodes() - 1;
    let split = min_rows.saturating_sub(1).div_ceil(intervals).max(1);
    let mut xs = Vec::with_capacity(intervals * split + 1);
    for i in 0..intervals {
        let (lo, hi) = (grid.node(i), grid.node(i + 1));
        xs.push(lo);
        for s in 1..split {
            xs.push(lo + (hi - lo) * (s as f64 / split as f64));
        }
    }
    xs.push(grid.node(intervals));
    xs
}

/// Writes `x,p_hat_star,p_tilde,p_tilde_normalized` rows at `xs`.
pub fn write_combined_csv(
    path: impl AsRef<Path>,
    pe: &ProductEstimator,
    ci: &CompositeInterpolant,
    xs: &[f64],
) -> Result<(), ConsensusError> {
    let path = path.as_ref();
    let wrap = |source: csv::Error| ConsensusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(wrap)?;
    writer
        .write_record(["x", "p_hat_star", "p_tilde", "p_tilde_normalized"])
        .map_err(wrap)?;
    for &x in xs {
        let pt = ci.eval(x);
        writer
            .write_record([
                format!("{x:e}"),
                format!("{:e}", pe.eval(x)),
                format!("{pt:e}"),
                format!("{:e}", pt / ci.lambda_tilde()),
            ])
            .map_err(wrap)?;
    }
    writer.flush().map_err(|source| ConsensusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_meta_json(path: impl AsRef<Path>, meta: &CombineMeta) -> Result<(), ConsensusError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meta).map_err(|source| ConsensusError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| ConsensusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::KnotSequence;
    use approx::assert_relative_eq;

    fn uniform_fit(a: f64, b: f64) -> LogsplineFit {
        LogsplineFit::from_coefficients(KnotSequence::uniform(a, b, 3, 4).unwrap(), vec![0.0; 6], 10).unwrap()
    }

    #[test]
    fn uniform_product() {
        let pe = ProductEstimator::new(vec![uniform_fit(0.0, 1.0); 3]).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_relative_eq!(pe.eval(x), 1.0, epsilon = 1e-13);
        }
        assert_eq!(pe.eval(1.5), 0.0);
        let grid = InterpolationGrid::new(0.0, 1.0, 1, 7).unwrap();
        let ci = build_interpolant(&pe, grid).unwrap();
        assert_relative_eq!(ci.lambda_tilde(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(ci.normalized_eval(0.77), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_supports_are_rejected() {
        let err = ProductEstimator::new(vec![uniform_fit(0.0, 1.0), uniform_fit(0.0, 2.0)]).unwrap_err();
        assert!(matches!(err, ConsensusError::SupportMismatch { index: 1, .. }));
        assert!(matches!(ProductEstimator::new(vec![]), Err(ConsensusError::NoFits)));
    }

    #[test]
    fn degree_limit() {
        let pe = ProductEstimator::new(vec![uniform_fit(0.0, 1.0)]).unwrap();
        let grid = InterpolationGrid::new(0.0, 1.0, 2, 4).unwrap();
        assert!(matches!(build_interpolant(&pe, grid), Err(ConsensusError::DegreeTooHigh { l: 2, k: 4 })));
    }

    #[test]
    fn cardinal_property() {
        let grid = InterpolationGrid::new(-1.0, 2.0, 3, 4).unwrap();
        for piece in 0..4 {
            for tau in 0..=3 {
                for j in 0..=3 {
                    let v = lagrange_basis(&grid, piece, tau, grid.node(piece * 3 + j)).unwrap();
                    assert_eq!(v, if j == tau { 1.0 } else { 0.0 });
                }
            }
            let x = grid.node(piece * 3) + 0.37 * grid.dx();
            let total: f64 = (0..=3).map(|t| lagrange_basis(&grid, piece, t, x).unwrap()).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-13);
        }
        assert!(lagrange_basis(&grid, 4, 0, 0.0).is_err());
        assert!(lagrange_basis(&grid, 0, 4, 0.0).is_err());
    }

    #[test]
    fn piece_ownership() {
        let grid = InterpolationGrid::new(0.0, 1.0, 2, 4).unwrap();
        assert_eq!(grid.piece_of(0.0), Some(0));
        assert_eq!(grid.piece_of(0.25), Some(0));
        assert_eq!(grid.piece_of(0.2500001), Some(1));
        assert_eq!(grid.piece_of(1.0), Some(3));
        assert_eq!(grid.piece_of(1.01), None);
        assert_eq!(grid.node(8), 1.0);
    }

    #[test]
    fn nodes_are_reproduced_exactly() {
        let f = |x: f64| (3.0 * x).sin() + 2.0;
        let grid = InterpolationGrid::new(0.0, 2.0, 3, 5).unwrap();
        let ci = CompositeInterpolant::from_fn(grid, f).unwrap();
        for (&x, &v) in ci.nodes().iter().zip(ci.node_values()) {
            assert_eq!(ci.eval(x), v);
            assert_eq!(v, f(x));
        }
        assert_eq!(ci.eval(-0.1), 0.0);
    }

    #[test]
    fn polynomials_of_degree_l_are_exact() {
        let p = |x: f64| 1.0 + x - 0.5 * x * x + 0.1 * x * x * x;
        let grid = InterpolationGrid::new(0.0, 2.0, 3, 3).unwrap();
        let ci = CompositeInterpolant::from_fn(grid, p).unwrap();
        for i in 0..=400 {
            let x = 2.0 * i as f64 / 400.0;
            assert!((ci.eval(x) - p(x)).abs() < 1e-12);
        }
        assert_relative_eq!(ci.lambda_tilde(), 2.0 + 2.0 - 4.0 / 3.0 + 0.4, epsilon = 1e-12);
    }

    #[test]
    fn vanished_product_is_degenerate() {
        let grid = InterpolationGrid::new(0.0, 1.0, 1, 4).unwrap();
        assert!(matches!(
            CompositeInterpolant::from_fn(grid, |_| 0.0),
            Err(ConsensusError::DegenerateProduct { .. })
        ));
    }

    #[test]
    fn negative_lobes_are_kept() {
        let grid = InterpolationGrid::new(0.0, 1.0, 2, 1).unwrap();
        let ci = CompositeInterpolant::from_values(grid, vec![1.0, -0.2, 1.0]).unwrap();
        assert!(ci.eval(0.5) < 0.0);
        assert!(ci.negative_mass() > 0.0);
    }

    #[test]
    fn dx_rule() {
        assert_relative_eq!(choose_dx(1e4, 0.5, 1, 1, 1.0).unwrap(), 0.01, epsilon = 1e-15);
        let d1 = choose_dx(1e4, 0.25, 3, 0, 1.0).unwrap();
        let d4 = choose_dx(4e4, 0.25, 3, 0, 1.0).unwrap();
        assert!((d1 / d4 - 2f64.powf(0.625)).abs() < 1e-12);
        let grid = InterpolationGrid::from_dx(0.0, 1.0, 1, 0.3).unwrap();
        assert_eq!(grid.pieces(), 4);
        assert!(grid.dx() <= 0.3);
        assert_eq!(InterpolationGrid::from_dx(0.0, 1.0, 1, 0.25).unwrap().pieces(), 4);
        assert!(matches!(
            InterpolationGrid::from_dx(0.0, 1.0, 2, 0.6),
            Err(ConsensusError::GridTooCoarse { .. })
        ));
        assert_relative_eq!(sample_norm(&[3, 4]), 5.0);
    }

    #[test]
    fn export_grid_contains_nodes() {
        let grid = InterpolationGrid::new(0.0, 1.0, 1, 7).unwrap();
        let xs = export_abscissae(&grid, 1000);
        assert!(xs.len() >= 1000);
        assert_eq!(*xs.last().unwrap(), 1.0);
        for i in 0..grid.num_nodes() {
            assert!(xs.contains(&grid.node(i)));
        }
        assert_eq!(export_abscissae(&grid, 2).len(), 8);
    }
}

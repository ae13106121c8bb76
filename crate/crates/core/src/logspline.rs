//! Logspline density estimation.
//!
//! For a clamped knot sequence of order `k` with B-splines `B_0..B_L`, the
//! logspline family is
//!
//! ```text
//! f(theta; y) = exp(B(theta; y) - c(y)),   B(theta; y) = sum_j y_j B_j(theta),
//! c(y) = log integral_a^b exp(B(theta; y)) dtheta,
//! ```
//!
//! restricted to `Y0 = { y : sum_j y_j = 0 }` so that it is identifiable.
//! Given samples `theta_1..theta_n`, the estimate maximizes the concave
//! log-likelihood
//!
//! ```text
//! l_n(y) = sum_i B(theta_i; y) - n c(y)
//! ```
//!
//! whose gradient is `s - n E_y[B]` (with `s_j = sum_i B_j(theta_i)`) and whose
//! Hessian is `-n Cov_y(B)`. All expectations are computed with a fixed
//! Gauss-Legendre rule of `2k` nodes on every knot interval.
//!
//! The maximizer does not always exist (for instance when all samples
//! coincide); the fitter reports that as [`FitError::NoMaximizer`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{BsplineError, KnotSequence, SplineFunction, MAX_LOCAL_ORDER};
use crate::quadrature::GaussLegendre;
use crate::samples::SampleSet;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FitError {
    #[error("no maximizer of the log-likelihood ({reason}); the sample lies in Omega_n^c, the set of samples for which no maximizer exists")]
    NoMaximizer { reason: String, iterations: usize },

    #[error("Newton iteration did not converge in {iterations} steps (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("invalid support [{a}, {b}]")]
    InvalidSupport { a: f64, b: f64 },

    #[error("samples declare support [{got_a}, {got_b}] but the model covers [{a}, {b}]")]
    SupportMismatch { a: f64, b: f64, got_a: f64, got_b: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Bspline(#[from] BsplineError),
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop when `max_j |gradient_j| <= tol * n`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates with `max_j |y_j|` above this are treated as divergent.
    pub coefficient_cap: f64,
    /// Sufficient-increase constant for the backtracking line search.
    pub armijo: f64,
    /// Smallest step length tried before the line search gives up.
    pub min_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            coefficient_cap: 1e3,
            armijo: 1e-4,
            min_step: 1e-12,
        }
    }
}

/// A coefficient vector in `Y0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    /// Projects onto `Y0` by subtracting the mean.
    ///
    /// Shifting every coefficient by a constant leaves the density unchanged,
    /// so this is the canonical representative of `y`.
    pub fn centered(mut y: Vec<f64>) -> Self {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter_mut().for_each(|v| *v -= mean);
        Self(y)
    }

    fn from_reduced(z: &DVector<f64>) -> Self {
        let mut y: Vec<f64> = z.iter().copied().collect();
        y.push(-z.sum());
        Self(y)
    }

    fn reduced(&self) -> DVector<f64> {
        DVector::from_iterator(self.0.len() - 1, self.0[..self.0.len() - 1].iter().copied())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gauss-Legendre nodes per knot interval, per unit of spline order. Two per
/// order loses about 1e-7 of `c(y)` once `B` changes by ~10 across one interval.
const NODES_PER_ORDER: usize = 4;

/// Quadrature nodes with the local B-spline values precomputed.
#[derive(Debug, Clone)]
struct QuadratureCache {
    log_weights: Vec<f64>,
    first: Vec<usize>,
    basis: Vec<f64>,
    order: usize,
}

impl QuadratureCache {
    fn new(knots: &KnotSequence, nodes_per_interval: usize) -> Self {
        let rule = GaussLegendre::new(nodes_per_interval);
        let k = knots.order();
        let mut log_weights = Vec::new();
        let mut first = Vec::new();
        let mut basis = Vec::new();
        let mut local = [0.0; MAX_LOCAL_ORDER];
        for w in knots.breakpoints().windows(2) {
            for (x, weight) in rule.mapped(w[0], w[1]) {
                let mu = knots.basis_values(x, &mut local).expect("node inside support");
                log_weights.push(weight.ln());
                first.push(mu + 1 - k);
                basis.extend_from_slice(&local[..k]);
            }
        }
        Self {
            log_weights,
            first,
            basis,
            order: k,
        }
    }

    fn len(&self) -> usize {
        self.first.len()
    }

    fn local(&self, q: usize) -> (usize, &[f64]) {
        let k = self.order;
        (self.first[q], &self.basis[q * k..(q + 1) * k])
    }

    fn spline_value(&self, q: usize, y: &[f64]) -> f64 {
        let (first, b) = self.local(q);
        b.iter().zip(&y[first..]).map(|(bv, yv)| bv * yv).sum()
    }

    /// `log sum_q w_q exp(B(x_q; y))`, shifted by the maximum exponent.
    fn log_normalizer(&self, y: &[f64]) -> f64 {
        let exps: Vec<f64> = (0..self.len())
            .map(|q| self.log_weights[q] + self.spline_value(q, y))
            .collect();
        log_sum_exp(&exps)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `c(y)`, `E_y[B]` and `Cov_y(B)` under `f(.; y)`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub log_normalizer: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// The logspline family over a fixed clamped knot sequence.
#[derive(Debug, Clone)]
pub struct LogsplineModel {
    knots: KnotSequence,
    cache: QuadratureCache,
}

impl LogsplineModel {
    pub fn new(knots: KnotSequence) -> Result<Self, FitError> {
        if knots.num_basis() < 2 {
            return Err(FitError::InvalidParameter(
                "the logspline family needs at least two B-splines".into(),
            ));
        }
        let cache = QuadratureCache::new(&knots, NODES_PER_ORDER * knots.order());
        Ok(Self { knots, cache })
    }

    pub fn knots(&self) -> &KnotSequence {
        &self.knots
    }

    /// `L + 1`, the number of coefficients.
    pub fn dimension(&self) -> usize {
        self.knots.num_basis()
    }

    pub fn support(&self) -> (f64, f64) {
        self.knots.support()
    }

    fn check_len(&self, y: &[f64]) {
        assert_eq!(y.len(), self.dimension(), "coefficient vector has the wrong length");
    }

    /// `c(y) = log integral exp(B(theta; y)) dtheta`.
    pub fn log_normalizer(&self, y: &[f64]) -> f64 {
        self.check_len(y);
        self.cache.log_normalizer(y)
    }

    /// Normalizer, mean and covariance of the B-spline vector under `f(.; y)`.
    pub fn moments(&self, y: &[f64]) -> Moments {
        self.check_len(y);
        let dim = self.dimension();
        let k = self.knots.order();
        let exps: Vec<f64> = (0..self.cache.len())
            .map(|q| self.cache.log_weights[q] + self.cache.spline_value(q, y))
            .collect();
        let c = log_sum_exp(&exps);
        let mut mean = DVector::zeros(dim);
        let mut second = DMatrix::zeros(dim, dim);
        for (q, e) in exps.iter().enumerate() {
            let p = (e - c).exp();
            if p == 0.0 {
                continue;
            }
            let (first, b) = self.cache.local(q);
            for r in 0..k {
                let pr = p * b[r];
                mean[first + r] += pr;
                for s in 0..k {
                    second[(first + r, first + s)] += pr * b[s];
                }
            }
        }
        let covariance = second - &mean * mean.transpose();
        Moments {
            log_normalizer: c,
            mean,
            covariance,
        }
    }

    /// `s_j = sum_i B_j(theta_i)`.
    pub fn sufficient_statistics(&self, samples: &SampleSet) -> Result<DVector<f64>, FitError> {
        self.check_samples(samples)?;
        let k = self.knots.order();
        let mut s = DVector::zeros(self.dimension());
        let mut local = [0.0; MAX_LOCAL_ORDER];
        for &x in samples.values() {
            let mu = self
                .knots
                .basis_values(x, &mut local)
                .expect("samples are inside the support");
            for r in 0..k {
                s[mu + 1 - k + r] += local[r];
            }
        }
        Ok(s)
    }

    fn check_samples(&self, samples: &SampleSet) -> Result<(), FitError> {
        let (a, b) = self.support();
        let (got_a, got_b) = samples.support();
        if got_a < a || got_b > b {
            return Err(FitError::SupportMismatch { a, b, got_a, got_b });
        }
        Ok(())
    }

    /// `l_n(y) = sum_i B(theta_i; y) - n c(y)`.
    pub fn log_likelihood(&self, y: &[f64], samples: &SampleSet) -> Result<f64, FitError> {
        let s = self.sufficient_statistics(samples)?;
        Ok(self.objective(y, s.as_slice(), samples.len() as f64))
    }

    /// Gradient of `l_n` with respect to the full coefficient vector.
    pub fn gradient(&self, y: &[f64], samples: &SampleSet) -> Result<DVector<f64>, FitError> {
        let s = self.sufficient_statistics(samples)?;
        let m = self.moments(y);
        Ok(s - m.mean * samples.len() as f64)
    }

    /// Hessian `-n Cov_y(B)` of `l_n`.
    pub fn hessian(&self, y: &[f64], samples: &SampleSet) -> DMatrix<f64> {
        -self.moments(y).covariance * samples.len() as f64
    }

    fn objective(&self, y: &[f64], stats: &[f64], weight: f64) -> f64 {
        let linear: f64 = stats.iter().zip(y).map(|(s, v)| s * v).sum();
        linear - weight * self.cache.log_normalizer(y)
    }

    /// Maximum-likelihood fit over `Y0`.
    pub fn fit(&self, samples: &SampleSet, opts: &FitOptions) -> Result<LogsplineFit, FitError> {
        let stats = self.sufficient_statistics(samples)?;
        let n = samples.len() as f64;
        let outcome = self.maximize(stats.as_slice(), n, opts)?;
        let spline = SplineFunction::new(self.knots.clone(), outcome.y.into_inner())?;
        Ok(LogsplineFit {
            spline,
            log_normalizer: outcome.log_normalizer,
            sample_count: samples.len(),
            converged: true,
            iterations: outcome.iterations,
        })
    }

    /// Maximizer `y_bar` over `Y0` of `-c(y) + integral B(theta; y) p(theta) dtheta`.
    ///
    /// `f(.; y_bar)` is the member of the family closest to `p` in Kullback-Leibler
    /// divergence. `density` need not be normalized.
    pub fn fit_expected<P: Fn(f64) -> f64>(
        &self,
        density: P,
        opts: &FitOptions,
    ) -> Result<CoefficientVector, FitError> {
        let k = self.knots.order();
        let rule = GaussLegendre::new(20);
        let mut moments = vec![0.0; self.dimension()];
        let mut mass = 0.0;
        let mut local = [0.0; MAX_LOCAL_ORDER];
        for w in self.knots.breakpoints().windows(2) {
            for (x, weight) in rule.mapped(w[0], w[1]) {
                let px = density(x);
                mass += weight * px;
                let mu = self.knots.basis_values(x, &mut local).expect("node inside support");
                for r in 0..k {
                    moments[mu + 1 - k + r] += weight * px * local[r];
                }
            }
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(FitError::InvalidParameter(
                "target density must have positive finite mass".into(),
            ));
        }
        moments.iter_mut().for_each(|m| *m /= mass);
        Ok(self.maximize(&moments, 1.0, opts)?.y)
    }

    /// Damped Newton ascent on `stats . y - weight c(y)` in the reduced
    /// coordinates `z = (y_0..y_{L-1})`, with `y_L = -sum z`.
    fn maximize(&self, stats: &[f64], weight: f64, opts: &FitOptions) -> Result<Outcome, FitError> {
        let dim = self.dimension();
        let mut y = CoefficientVector(vec![0.0; dim]);
        let mut value = self.objective(y.as_slice(), stats, weight);
        let threshold = opts.tol * weight;
        let mut gradient_norm = f64::INFINITY;
        for iteration in 0..opts.max_iter {
            let m = self.moments(y.as_slice());
            let grad_full: Vec<f64> = (0..dim).map(|j| stats[j] - weight * m.mean[j]).collect();
            gradient_norm = grad_full.iter().fold(0.0, |a: f64, g| a.max(g.abs()));
            if gradient_norm <= threshold {
                return Ok(Outcome {
                    y,
                    log_normalizer: m.log_normalizer,
                    iterations: iteration,
                });
            }
            let last = dim - 1;
            let grad = DVector::from_iterator(last, (0..last).map(|i| grad_full[i] - grad_full[last]));
            let cov = &m.covariance;
            let neg_hessian = DMatrix::from_fn(last, last, |i, j| {
                weight * (cov[(i, j)] - cov[(i, last)] - cov[(last, j)] + cov[(last, last)])
            });
            let direction = newton_direction(neg_hessian, &grad);
            let slope = grad.dot(&direction);
            let z = y.reduced();
            let mut step = 1.0;
            let accepted = loop {
                let trial = CoefficientVector::from_reduced(&(&z + &direction * step));
                let trial_value = self.objective(trial.as_slice(), stats, weight);
                if trial_value.is_finite() && trial_value >= value + opts.armijo * step * slope {
                    break Some((trial, trial_value));
                }
                step *= 0.5;
                if step < opts.min_step {
                    break None;
                }
            };
            match accepted {
                Some((trial, trial_value)) => {
                    y = trial;
                    value = trial_value;
                }
                None => {
                    if gradient_norm <= 1e4 * threshold {
                        return Err(FitError::NonConvergence {
                            iterations: iteration,
                            gradient_norm,
                        });
                    }
                    return Err(FitError::NoMaximizer {
                        reason: format!("line search stalled with gradient norm {gradient_norm:e}"),
                        iterations: iteration,
                    });
                }
            }
            if y.max_abs() > opts.coefficient_cap {
                return Err(FitError::NoMaximizer {
                    reason: format!(
                        "coefficients exceeded the cap {} after {} steps",
                        opts.coefficient_cap,
                        iteration + 1
                    ),
                    iterations: iteration + 1,
                });
            }
        }
        Err(FitError::NonConvergence {
            iterations: opts.max_iter,
            gradient_norm,
        })
    }
}

struct Outcome {
    y: CoefficientVector,
    log_normalizer: f64,
    iterations: usize,
}

/// Solves `neg_hessian d = grad`, regularizing if the matrix is numerically singular.
fn newton_direction(neg_hessian: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = neg_hessian.clone().cholesky() {
        return chol.solve(grad);
    }
    let scale = neg_hessian.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-12 * scale;
    loop {
        let mut damped = neg_hessian.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += ridge;
        }
        if let Some(chol) = damped.cholesky() {
            return chol.solve(grad);
        }
        ridge *= 100.0;
        if ridge > 1e12 * scale {
            return grad.clone();
        }
    }
}

/// A fitted logspline density `f(.; y_hat)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogsplineFit {
    #[serde(flatten)]
    spline: SplineFunction,
    log_normalizer: f64,
    sample_count: usize,
    converged: bool,
    #[serde(default)]
    iterations: usize,
}

impl LogsplineFit {
    /// Builds a fit from known coefficients, computing `c(y)`.
    ///
    /// The coefficients are centered into `Y0` first.
    pub fn from_coefficients(
        knots: KnotSequence,
        coefficients: Vec<f64>,
        sample_count: usize,
    ) -> Result<Self, FitError> {
        let model = LogsplineModel::new(knots)?;
        let y = CoefficientVector::centered(coefficients);
        let log_normalizer = model.log_normalizer(y.as_slice());
        Ok(Self {
            spline: SplineFunction::new(model.knots, y.into_inner())?,
            log_normalizer,
            sample_count,
            converged: true,
            iterations: 0,
        })
    }

    pub fn knots(&self) -> &KnotSequence {
        self.spline.knots()
    }

    pub fn coefficients(&self) -> &[f64] {
        self.spline.coefficients()
    }

    pub fn spline(&self) -> &SplineFunction {
        &self.spline
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn support(&self) -> (f64, f64) {
        self.knots().support()
    }

    /// `log f(x; y_hat)`; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match self.spline.knots().span(x) {
            Some(_) => self.spline.value(x) - self.log_normalizer,
            None => f64::NEG_INFINITY,
        }
    }

    /// `f(x; y_hat)`; zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

/// Uniform knots for `n_m` samples on `[a, b]` such that `h^(j+1)` scales like `n_m^(-beta)`.
///
/// The interval count is `ceil((b - a) n_m^(beta / (j + 1)))`, at least 1,
/// and the end knots get multiplicity `k`.
pub fn choose_knots(
    n_m: usize,
    support: (f64, f64),
    beta: f64,
    j: usize,
    k: usize,
) -> Result<KnotSequence, FitError> {
    let (a, b) = support;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(FitError::InvalidSupport { a, b });
    }
    check_beta(beta)?;
    if k < 4 {
        return Err(FitError::InvalidParameter(format!(
            "spline order must be at least 4, got {k}"
        )));
    }
    if j >= k {
        return Err(FitError::InvalidParameter(format!(
            "smoothness index j = {j} must be below the order k = {k}"
        )));
    }
    if n_m == 0 {
        return Err(FitError::InvalidParameter("sample count must be positive".into()));
    }
    let target = (b - a) * (n_m as f64).powf(beta / (j as f64 + 1.0));
    let pieces = ((target - 1e-9).ceil() as usize).clamp(1, n_m.max(1));
    Ok(KnotSequence::uniform(a, b, pieces, k)?)
}

/// `beta` must lie in `(0, 1/2]`; the boundary value is accepted with a warning.
pub fn check_beta(beta: f64) -> Result<(), FitError> {
    if !(beta > 0.0 && beta <= 0.5) {
        return Err(FitError::InvalidParameter(format!(
            "beta must lie in (0, 1/2], got {beta}"
        )));
    }
    if beta == 0.5 {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| log::warn!("beta = 1/2 sits on the boundary of the admissible range (0, 1/2)"));
    }
    Ok(())
}

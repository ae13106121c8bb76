//! Oracles and samplers shared by the integration tests.
#![allow(dead_code)]

use logsplit::bspline::divided_difference;
use logsplit::logspline::LogsplineFit;
use logsplit::tables::linspace;
use rand::Rng;

/// `(t_{j+k} - t_j) [t_j, ..., t_{j+k}] (. - x)_+^{k-1}`, the defining formula
/// of `B_{j,k}(x)`. Needs distinct knots.
pub fn divided_difference_bspline(t: &[f64], j: usize, k: usize, x: f64) -> f64 {
    let abscissae = &t[j..=j + k];
    let values: Vec<f64> = abscissae
        .iter()
        .map(|&ti| if ti > x { (ti - x).powi(k as i32 - 1) } else { 0.0 })
        .collect();
    (t[j + k] - t[j]) * divided_difference(abscissae, &values).expect("distinct knots")
}

/// `count` strictly increasing knots starting at `start`, gaps drawn from `[0.05, 1]`.
pub fn random_distinct_knots<R: Rng>(rng: &mut R, count: usize, start: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(count);
    let mut x = start;
    for _ in 0..count {
        t.push(x);
        x += rng.random_range(0.05..1.0);
    }
    t
}

/// Sorted interior breakpoints on `(a, b)`, gaps at least `(b - a) / (4 * (pieces + 1))`.
pub fn random_interior<R: Rng>(rng: &mut R, a: f64, b: f64, pieces: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.25..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = a;
    let mut out = Vec::new();
    for w in &weights[..pieces - 1] {
        acc += (b - a) * w / total;
        out.push(acc);
    }
    out
}

/// Clamped knot vector with the given interior breakpoints.
pub fn clamped(a: f64, b: f64, interior: &[f64], k: usize) -> Vec<f64> {
    let mut t = vec![a; k];
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat(b).take(k));
    t
}

/// `n` draws from a fitted density by rejection from the uniform on its support.
pub fn sample_fit<R: Rng>(fit: &LogsplineFit, n: usize, rng: &mut R) -> Vec<f64> {
    let (a, b) = fit.support();
    let peak = linspace(a, b, 4001)
        .into_iter()
        .map(|x| fit.density(x))
        .fold(0.0, f64::max);
    let envelope = 1.05 * peak;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.random_range(a..=b);
        if rng.random::<f64>() * envelope <= fit.density(x) {
            out.push(x);
        }
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    logsplit::mise_lab::fit_line(&lx, &ly).0
}

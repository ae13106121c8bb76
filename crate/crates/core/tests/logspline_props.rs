mod common;

use logsplit::bspline::KnotSequence;
use logsplit::logspline::{choose_knots, FitError, FitOptions, LogsplineFit, LogsplineModel};
use logsplit::mise_lab::{ise, SyntheticTarget};
use logsplit::quadrature::{integrate_adaptive_on, trapezoid};
use logsplit::samples::SampleSet;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn uniform_model(pieces: usize, k: usize) -> LogsplineModel {
    LogsplineModel::new(KnotSequence::uniform(0.0, 1.0, pieces, k).unwrap()).unwrap()
}

fn coefficients(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, dim)
}

fn truncated_normal_samples(n: usize, seed: u64) -> SampleSet {
    let target = SyntheticTarget::Normal { mean: 0.45, sd: 0.2 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampleSet::new(target.sample_truncated(&mut rng, n, 0.0, 1.0), 0.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_matches_central_differences(y in coefficients(8), seed in 0u64..1000) {
        let model = uniform_model(5, 4);
        let samples = truncated_normal_samples(200, seed);
        let g = model.gradient(&y, &samples).unwrap();
        for i in 0..y.len() {
            let h = 1e-5;
            let mut up = y.clone();
            up[i] += h;
            let mut down = y.clone();
            down[i] -= h;
            let fd = (model.log_likelihood(&up, &samples).unwrap() - model.log_likelihood(&down, &samples).unwrap())
                / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "i={i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn hessian_is_negative_definite_on_the_constraint_space(y in coefficients(8)) {
        let model = uniform_model(5, 4);
        let samples = truncated_normal_samples(50, 1);
        let h = model.hessian(&y, &samples);
        let dim = y.len();
        // columns map reduced coordinates z to y = (z, -sum z)
        let p = DMatrix::from_fn(dim, dim - 1, |r, c| if r == c { 1.0 } else if r == dim - 1 { -1.0 } else { 0.0 });
        let reduced = -(p.transpose() * h * p);
        prop_assert!(reduced.cholesky().is_some());
    }

    #[test]
    fn log_normalizer_matches_dense_trapezoid(y in coefficients(8)) {
        let model = uniform_model(5, 4);
        let s = logsplit::bspline::SplineFunction::new(model.knots().clone(), y.clone()).unwrap();
        let oracle = trapezoid(|x| s.value(x).exp(), 0.0, 1.0, 1_000_000).ln();
        prop_assert!((model.log_normalizer(&y) - oracle).abs() <= 1e-7);
    }

    #[test]
    fn density_is_shift_invariant(y in coefficients(8), shift in -50.0f64..50.0) {
        let knots = KnotSequence::uniform(0.0, 1.0, 5, 4).unwrap();
        let base = LogsplineFit::from_coefficients(knots.clone(), y.clone(), 1).unwrap();
        let moved = LogsplineFit::from_coefficients(knots, y.iter().map(|v| v + shift).collect(), 1).unwrap();
        prop_assert!(base.coefficients().iter().sum::<f64>().abs() <= 1e-12);
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            prop_assert!((base.density(x) - moved.density(x)).abs() <= 1e-12);
        }
    }
}

#[test]
fn fits_are_centered_and_normalized() {
    for seed in 0..5 {
        let samples = truncated_normal_samples(5000, seed);
        let knots = choose_knots(samples.len(), (0.0, 1.0), 0.5, 1, 4).unwrap();
        let fit = LogsplineModel::new(knots).unwrap().fit(&samples, &FitOptions::default()).unwrap();
        assert!(fit.converged());
        assert!(fit.coefficients().iter().sum::<f64>().abs() <= 1e-12);
        let mass = integrate_adaptive_on(|x| fit.density(x), fit.knots().breakpoints(), 1e-12);
        assert!((mass - 1.0).abs() <= 1e-8, "{mass}");
    }
}

#[test]
fn uniform_samples_give_flat_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let target = SyntheticTarget::Uniform { lower: 0.0, upper: 1.0 };
    let samples = SampleSet::new(target.sample(&mut rng, 100_000), 0.0, 1.0).unwrap();
    let fit = uniform_model(4, 4).fit(&samples, &FitOptions::default()).unwrap();
    let worst = fit.coefficients().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 0.05, "{:?}", fit.coefficients());
}

#[test]
fn point_mass_has_no_maximizer() {
    let samples = SampleSet::new(vec![0.3; 500], 0.0, 1.0).unwrap();
    let err = uniform_model(4, 4).fit(&samples, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, FitError::NoMaximizer { .. }), "{err}");
}

#[test]
fn expected_fit_recovers_family_members() {
    let model = uniform_model(5, 4);
    let y_star = [0.4, 0.9, -0.3, 0.2, 0.6, -0.5, 0.1, -1.4];
    let member = LogsplineFit::from_coefficients(model.knots().clone(), y_star.to_vec(), 1).unwrap();
    let y_bar = model.fit_expected(|x| member.density(x), &FitOptions::default()).unwrap();
    for (a, b) in y_bar.as_slice().iter().zip(member.coefficients()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn expected_fit_approaches_a_smooth_target_as_knots_double() {
    let target = SyntheticTarget::Normal { mean: 0.45, sd: 0.2 };
    let truth = target.full_data_density(1, 0.0, 1.0).unwrap();
    let grid = logsplit::tables::linspace(0.0, 1.0, 2001);
    // a normal log density is quadratic, so it already lies in every family of
    // order >= 3; piecewise-linear log densities have to approximate it
    let mut errors = Vec::new();
    for pieces in [2, 4, 8, 16] {
        let model = uniform_model(pieces, 2);
        let y = model.fit_expected(|x| truth.pdf(x), &FitOptions::default()).unwrap();
        let fit = LogsplineFit::from_coefficients(model.knots().clone(), y.into_inner(), 1).unwrap();
        let sup = grid
            .iter()
            .map(|&x| (truth.pdf(x).ln() - fit.log_density(x)).abs())
            .fold(0.0, f64::max);
        errors.push(sup);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn ise_falls_with_sample_size() {
    let target = SyntheticTarget::Normal { mean: 0.45, sd: 0.2 };
    let truth = target.full_data_density(1, 0.0, 1.0).unwrap();
    let mean_ise = |n: usize| {
        (0..5)
            .map(|seed| {
                let samples = truncated_normal_samples(n, 100 + seed);
                let knots = choose_knots(n, (0.0, 1.0), 0.5, 1, 4).unwrap();
                let fit = LogsplineModel::new(knots).unwrap().fit(&samples, &FitOptions::default()).unwrap();
                ise(|x| truth.pdf(x), |x| fit.density(x), (0.0, 1.0))
            })
            .sum::<f64>()
            / 5.0
    };
    let e = [mean_ise(1_000), mean_ise(10_000), mean_ise(100_000)];
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
}

#[test]
fn samples_outside_the_model_support_are_rejected() {
    let samples = SampleSet::new(vec![0.5, 1.5], 0.0, 2.0).unwrap();
    let err = uniform_model(4, 4).fit(&samples, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, FitError::SupportMismatch { .. }));
}

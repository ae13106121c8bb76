use logsplit::mise_lab::{
    replication_seed, run_experiment, Experiment, ExperimentConfig, ExperimentError, Target,
};

fn normal_config(n_grid: Vec<usize>, replications: usize, seed: u64, half_width: f64) -> ExperimentConfig {
    ExperimentConfig {
        subsets: 3,
        n_grid,
        replications,
        beta: 0.5,
        j: 1,
        k: 4,
        l: 1,
        target: Target::Normal { mean: 2.0, sd: 1.0 },
        support: Some([2.0 - half_width, 2.0 + half_width]),
        seed,
        dx_constant: 1.0,
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let cfg = normal_config(vec![400, 1600], 6, 31, 2.5);
    let first = run_experiment(&cfg).unwrap();
    let second = Experiment::new(cfg).unwrap().run(Some(3)).unwrap();
    assert_eq!(first, second);
    for (a, b) in first.rows.iter().zip(&second.rows) {
        assert_eq!(a.mean_ise.to_bits(), b.mean_ise.to_bits());
    }
}

#[test]
fn mean_ise_falls_across_the_grid() {
    let report = run_experiment(&normal_config(vec![500, 2000, 8000], 10, 2017, 2.5)).unwrap();
    assert!(report.rows[2].mean_ise < report.rows[0].mean_ise, "{:?}", report.rows);
    assert!(report.slope < 0.0);
    assert_eq!(report.theoretical_slope, -1.0);
    // the bound line passes through the first point with slope -2 beta
    let r0 = &report.rows[0];
    assert!((r0.bound_value - r0.mean_ise).abs() <= 1e-12 * r0.mean_ise);
    let ratio = report.rows[1].bound_value / r0.bound_value;
    assert!((ratio - 0.25).abs() < 1e-12);
}

#[test]
fn standard_error_halves_when_replications_quadruple() {
    let se = |reps: usize| {
        let report = run_experiment(&normal_config(vec![1000], reps, 2017, 2.5)).unwrap();
        report.rows[0].std_ise / (reps as f64).sqrt()
    };
    let factor = se(100) / se(400);
    assert!((1.6..=2.5).contains(&factor), "{factor}");
}

#[test]
fn single_uniform_subset_is_recovered() {
    let cfg = ExperimentConfig {
        subsets: 1,
        n_grid: vec![10_000],
        replications: 2,
        target: Target::Uniform { lower: 0.0, upper: 1.0 },
        support: None,
        ..normal_config(vec![1], 2, 7, 1.0)
    };
    let exp = Experiment::new(cfg).unwrap();
    for rep in 0..3 {
        let out = exp.run_replication(10_000, replication_seed(7, 10_000, rep)).unwrap();
        assert!(out.ise <= 1e-2, "{}", out.ise);
    }
}

#[test]
fn retries_replay_the_same_stream() {
    // a support this wide leaves thin tails, so some draws have no maximizer
    let exp = Experiment::new(normal_config(vec![1000], 2, 5, 2.6)).unwrap();
    let retried: Vec<_> = (0..20)
        .map(|rep| replication_seed(5, 1000, rep))
        .filter_map(|seed| {
            let out = exp.run_replication(1000, seed).ok()?;
            (out.retries > 0).then_some((seed, out))
        })
        .collect();
    assert!(!retried.is_empty());
    for (seed, out) in retried {
        assert_eq!(exp.run_replication(1000, seed).unwrap(), out);
    }
}

#[test]
fn hopeless_supports_abort_the_experiment() {
    let err = run_experiment(&normal_config(vec![1000], 4, 1, 6.0)).unwrap_err();
    match err {
        ExperimentError::ExperimentAborted { n, failed, replications, .. } => {
            assert_eq!((n, replications), (1000, 4));
            assert!(2 * failed > replications);
        }
        other => panic!("unexpected {other}"),
    }
}

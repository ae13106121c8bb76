use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use logsplit::consensus::{
    build_interpolant, choose_dx, export_abscissae, sample_norm, write_combined_csv, write_meta_json, CombineMeta,
    ConsensusError, InterpolationGrid, ProductEstimator,
};
use logsplit::logspline::{choose_knots, FitError, FitOptions, LogsplineFit, LogsplineModel};
use logsplit::mise_lab::{
    generate_synthetic_subsets, replication_seed, write_report_json, write_results_csv, Experiment, ExperimentConfig,
    ExperimentError, MiseReport, SyntheticSpec, Target, SNAPSHOT_ROWS,
};
use logsplit::samples::{read_samples_csv, SampleSet};
use logsplit::tables::{linspace, write_density_csv};

/// Rows of the density table written by `fit`.
const FIT_ROWS: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "logsplit", version, about = "Combine subset posteriors through logspline density estimates")]
struct Cli {
    /// More log output; repeat for debug detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a logspline density to one subset's samples.
    Fit(FitArgs),
    /// Multiply fitted subset densities and renormalize the product.
    Combine(CombineArgs),
    /// Run a MISE experiment described by a JSON config.
    Experiment(ExperimentArgs),
    /// Run a MISE experiment that bootstraps from subset sample files.
    IngestExperiment(IngestArgs),
    /// Write synthetic subset sample files shaped like a real split posterior.
    SynthSubsets(SynthArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct RateArgs {
    /// Knot-count exponent, in (0, 1/2].
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Smoothness index of the target density.
    #[arg(long, default_value_t = 1)]
    j: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with one sample per line and an optional `theta` header.
    samples: PathBuf,
    /// Fixed support; samples outside it are moved onto the nearest end.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    support: Option<Vec<f64>>,
    #[command(flatten)]
    rate: RateArgs,
    /// Spline order.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CombineArgs {
    /// `fit.json` files written by `fit`.
    #[arg(required = true)]
    fits: Vec<PathBuf>,
    /// Degree of the Lagrange pieces.
    #[arg(long, default_value_t = 1)]
    l: usize,
    #[arg(long, default_value_t = 1.0)]
    dx_constant: f64,
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cap on concurrent replications.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// One sample file per subset.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Samples from the full-data posterior, used as the reference density.
    /// Without it the reference is the combination of the complete files.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Per-subset bootstrap sizes; defaults to quarters of the shortest file.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed support; defaults to the overlap of the files' ranges.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    support: Option<Vec<f64>>,
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    l: usize,
    #[arg(long, default_value_t = 1.0)]
    dx_constant: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    subsets: usize,
    #[arg(long, default_value_t = 2420)]
    rows: usize,
    #[arg(long, default_value_t = 20180101)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Contents of `fit.json`.
#[derive(Debug, Serialize, Deserialize)]
struct FitFile {
    #[serde(flatten)]
    fit: LogsplineFit,
    support: [f64; 2],
    beta: f64,
    j: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_statistical(&e) { 2 } else { 1 })
        }
    }
}

/// Failures caused by the data rather than by the invocation.
fn is_statistical(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        if let Some(f) = cause.downcast_ref::<FitError>() {
            return matches!(f, FitError::NoMaximizer { .. } | FitError::NonConvergence { .. });
        }
        if let Some(x) = cause.downcast_ref::<ExperimentError>() {
            return x.is_statistical();
        }
        matches!(cause.downcast_ref::<ConsensusError>(), Some(ConsensusError::DegenerateProduct { .. }))
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(args) => fit(args),
        Command::Combine(args) => combine(args),
        Command::Experiment(args) => experiment(args),
        Command::IngestExperiment(args) => ingest_experiment(args),
        Command::SynthSubsets(args) => synth(args),
    }
}

fn support_pair(support: &Option<Vec<f64>>) -> Option<(f64, f64)> {
    support.as_ref().map(|s| (s[0], s[1]))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn fit(args: FitArgs) -> Result<()> {
    let samples = SampleSet::from_csv(&args.samples, support_pair(&args.support))?;
    let support = samples.support();
    let knots = choose_knots(samples.len(), support, args.rate.beta, args.rate.j, args.k)?;
    let fit = LogsplineModel::new(knots)?
        .fit(&samples, &FitOptions::default())
        .with_context(|| format!("fitting {}", args.samples.display()))?;
    create_dir(&args.out)?;
    let xs = linspace(support.0, support.1, FIT_ROWS);
    let table = args.out.join("density.csv");
    write_density_csv(&table, &xs, |x| fit.density(x)).with_context(|| format!("cannot write {}", table.display()))?;
    let doc = FitFile {
        fit,
        support: [support.0, support.1],
        beta: args.rate.beta,
        j: args.rate.j,
    };
    write_json(&args.out.join("fit.json"), &doc)?;
    println!(
        "fitted {} samples on [{}, {}] with {} coefficients in {} Newton steps",
        samples.len(),
        support.0,
        support.1,
        doc.fit.coefficients().len(),
        doc.fit.iterations()
    );
    Ok(())
}

fn read_fit(path: &Path) -> Result<LogsplineFit> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc: FitFile = parse_json(&text).with_context(|| format!("{}", path.display()))?;
    if !doc.fit.converged() {
        bail!("{}: fit did not converge", path.display());
    }
    // recompute c(y) rather than trusting the file
    let fit = LogsplineFit::from_coefficients(
        doc.fit.knots().clone(),
        doc.fit.coefficients().to_vec(),
        doc.fit.sample_count(),
    )?;
    Ok(fit)
}

fn combine(args: CombineArgs) -> Result<()> {
    let fits = args.fits.iter().map(|p| read_fit(p)).collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = fits.iter().map(LogsplineFit::sample_count).collect();
    let pe = ProductEstimator::new(fits)?;
    let dx = choose_dx(sample_norm(&sizes), args.rate.beta, args.l, args.rate.j, args.dx_constant)?;
    let (a, b) = pe.support();
    let grid = InterpolationGrid::from_dx(a, b, args.l, dx)?;
    let ci = build_interpolant(&pe, grid)?;
    create_dir(&args.out)?;
    let xs = export_abscissae(ci.grid(), SNAPSHOT_ROWS);
    write_combined_csv(args.out.join("combined.csv"), &pe, &ci, &xs)?;
    let meta = CombineMeta::new(&pe, &ci, xs.len());
    write_meta_json(args.out.join("meta.json"), &meta)?;
    println!(
        "combined {} fits: {} pieces of degree {}, lambda_tilde = {:e}",
        pe.subsets(),
        ci.grid().pieces(),
        args.l,
        ci.lambda_tilde()
    );
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("at `{path}`: {}", e.into_inner())
    })
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("LOGSPLIT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("LOGSPLIT_SEED must be an unsigned integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let mut cfg: ExperimentConfig = parse_json(&text).with_context(|| format!("{}", args.config.display()))?;
    if let Some(base) = args.config.parent() {
        cfg.resolve_paths(base);
    }
    run_and_write(cfg, &args.out, args.jobs)
}

fn ingest_experiment(args: IngestArgs) -> Result<()> {
    let n_grid = match args.n_grid {
        Some(grid) => grid,
        None => {
            let shortest = args
                .files
                .iter()
                .map(|p| read_samples_csv(p).map(|v| v.len()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .min()
                .unwrap_or(0);
            let mut grid: Vec<usize> = (1..=4).map(|q| shortest * q / 4).filter(|&n| n > 0).collect();
            grid.dedup();
            grid
        }
    };
    let cfg = ExperimentConfig {
        subsets: args.files.len(),
        n_grid,
        replications: args.replications,
        beta: args.rate.beta,
        j: args.rate.j,
        k: args.k,
        l: args.l,
        target: Target::Csv {
            paths: args.files,
            reference: args.reference,
        },
        support: args.support.map(|s| [s[0], s[1]]),
        seed: args.seed,
        dx_constant: args.dx_constant,
    };
    run_and_write(cfg, &args.out, args.jobs)
}

fn run_and_write(mut cfg: ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<()> {
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    let exp = Experiment::new(cfg.clone())?;
    let report = exp.run(jobs)?;
    create_dir(out)?;
    write_results_csv(out.join("results.csv"), &report)?;
    write_report_json(out.join("report.json"), &cfg, &report)?;
    // one replication at the largest n, for the density figures
    let n = *cfg.n_grid.last().expect("validated grid");
    let (snapshot, _) = exp.snapshot(n, replication_seed(cfg.seed, n, 0))?;
    snapshot.write(out, SNAPSHOT_ROWS, cfg.seed)?;
    print_summary(&cfg, &report);
    Ok(())
}

fn print_summary(cfg: &ExperimentConfig, report: &MiseReport) {
    let first = report.rows.first().map_or(0, |r| r.n);
    let last = report.rows.last().map_or(0, |r| r.n);
    let failures: usize = report.rows.iter().map(|r| r.failures).sum();
    let retries: usize = report.rows.iter().map(|r| r.retries).sum();
    println!(
        "slope {:.3} vs theoretical {:.3} (M = {}, n = {first}..{last}, {} replications, seed {}, {failures} failed, {retries} redraws)",
        report.slope, report.theoretical_slope, cfg.subsets, cfg.replications, cfg.seed
    );
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        subsets: args.subsets,
        rows: args.rows,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let files = generate_synthetic_subsets(&args.out, &spec)?;
    println!(
        "wrote {} subset files of {} rows and {}",
        files.subsets.len(),
        args.rows,
        files.full_data.display()
    );
    Ok(())
}

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ingest::{bootstrap, Reference, SupportPolicy};
use super::target::SyntheticTarget;
use super::{ExperimentConfig, ExperimentError, Target, MAX_RETRIES};
use crate::consensus::{
    build_interpolant, choose_dx, export_abscissae, sample_norm, write_combined_csv, write_meta_json, CombineMeta,
    CompositeInterpolant, InterpolationGrid, ProductEstimator,
};
use crate::logspline::{choose_knots, FitOptions, LogsplineFit, LogsplineModel};
use crate::quadrature::{integrate_adaptive, integrate_adaptive_on};
use crate::samples::{SampleSet, DEFAULT_PADDING};
use crate::tables::{linspace, write_density_csv};

const ISE_TOLERANCE: f64 = 1e-10;

/// `integral_a^b (f - g)^2`.
pub fn ise<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(f: F, g: G, support: (f64, f64)) -> f64 {
    integrate_adaptive(|x| (f(x) - g(x)).powi(2), support.0, support.1, ISE_TOLERANCE)
}

/// [`ise`] split at `breaks`, where either function may be non-smooth.
pub fn ise_on<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(f: F, g: G, breaks: &[f64]) -> f64 {
    integrate_adaptive_on(|x| (f(x) - g(x)).powi(2), breaks, ISE_TOLERANCE)
}

/// Knot, grid and interpolation parameters shared by all subsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub beta: f64,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub dx_constant: f64,
}

impl RateParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            beta: cfg.beta,
            j: cfg.j,
            k: cfg.k,
            l: cfg.l,
            dx_constant: cfg.dx_constant,
        }
    }
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            beta: 0.5,
            j: 1,
            k: 4,
            l: 1,
            dx_constant: 1.0,
        }
    }
}

/// Subset fits, their product and its normalized interpolant.
#[derive(Debug, Clone)]
pub struct Combined {
    pub product: ProductEstimator,
    pub interpolant: CompositeInterpolant,
}

impl Combined {
    pub fn fits(&self) -> &[LogsplineFit] {
        self.product.fits()
    }

    /// Ends of the interpolation pieces.
    pub fn piece_breaks(&self) -> Vec<f64> {
        let grid = self.interpolant.grid();
        (0..=grid.pieces()).map(|i| grid.node(i * grid.degree())).collect()
    }
}

/// Fits every subset on its own knot sequence and combines the fits.
pub fn fit_and_combine(subsets: &[SampleSet], params: &RateParams) -> Result<Combined, ExperimentError> {
    let mut fits = Vec::with_capacity(subsets.len());
    for s in subsets {
        let knots = choose_knots(s.len(), s.support(), params.beta, params.j, params.k)?;
        let model = LogsplineModel::new(knots)?;
        fits.push(model.fit(s, &FitOptions::default())?);
    }
    let product = ProductEstimator::new(fits)?;
    let sizes: Vec<usize> = subsets.iter().map(|s| s.len()).collect();
    let dx = choose_dx(sample_norm(&sizes), params.beta, params.l, params.j, params.dx_constant)?;
    let (a, b) = product.support();
    let grid = InterpolationGrid::from_dx(a, b, params.l, dx)?;
    let interpolant = build_interpolant(&product, grid)?;
    Ok(Combined { product, interpolant })
}

/// Mixes the experiment seed with the grid point and replication index.
pub fn replication_seed(seed: u64, n: usize, rep: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ n as u64) ^ rep as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub ise: f64,
    /// Redraws needed before every subset fit existed.
    pub retries: usize,
}

/// One replication's samples, estimate and truth.
pub struct Snapshot {
    pub subsets: Vec<SampleSet>,
    pub combined: Combined,
    truth: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Snapshot {
    pub fn truth(&self, x: f64) -> f64 {
        (self.truth)(x)
    }

    pub fn ise(&self) -> f64 {
        let ci = &self.combined.interpolant;
        ise_on(|x| self.truth(x), |x| ci.normalized_eval(x), &self.combined.piece_breaks())
    }

    /// Writes per-subset fit densities, the full-data density and the combined table.
    pub fn write(&self, dir: &Path, rows: usize, seed: u64) -> Result<(), ExperimentError> {
        let (a, b) = self.combined.product.support();
        let xs = linspace(a, b, rows);
        for (m, fit) in self.combined.fits().iter().enumerate() {
            let path = dir.join(format!("subset_density_{}.csv", m + 1));
            write_density_csv(&path, &xs, |x| fit.density(x)).map_err(ExperimentError::io(&path))?;
        }
        let path = dir.join("full_density.csv");
        write_density_csv(&path, &xs, |x| self.truth(x)).map_err(ExperimentError::io(&path))?;
        let ci = &self.combined.interpolant;
        let table = export_abscissae(ci.grid(), rows);
        write_combined_csv(dir.join("combined.csv"), &self.combined.product, ci, &table)?;
        let mut meta = CombineMeta::new(&self.combined.product, ci, table.len());
        meta.seed = Some(seed);
        write_meta_json(dir.join("meta.json"), &meta)?;
        Ok(())
    }
}

enum Source {
    Synthetic(SyntheticTarget),
    Bootstrap {
        pools: Vec<SampleSet>,
        reference: Reference,
    },
}

/// A validated experiment with its sample source prepared.
pub struct Experiment {
    cfg: ExperimentConfig,
    params: RateParams,
    source: Source,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, ExperimentError> {
        cfg.validate()?;
        let params = RateParams::from_config(&cfg);
        let source = match &cfg.target {
            Target::Csv { paths, reference } => {
                let policy = match self_support(&cfg) {
                    Some((a, b)) => SupportPolicy::Fixed(a, b),
                    None => SupportPolicy::Overlap,
                };
                let pools = super::ingest::ingest_subsets_with(paths, policy)?;
                let reference = Reference::build(&pools, reference.as_deref(), &params)?;
                Source::Bootstrap { pools, reference }
            }
            other => Source::Synthetic(SyntheticTarget::from_config(other).expect("synthetic target")),
        };
        Ok(Self { cfg, params, source })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Draws subset samples and builds the estimate for one attempt.
    fn attempt(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Snapshot, ExperimentError> {
        let m = self.cfg.subsets;
        match &self.source {
            Source::Synthetic(target) => {
                let (draws, (a, b)) = match self.cfg.support {
                    Some([a, b]) => ((0..m).map(|_| target.sample_truncated(rng, n, a, b)).collect(), (a, b)),
                    None => {
                        let draws: Vec<Vec<f64>> = (0..m).map(|_| target.sample(rng, n)).collect();
                        let support = target.support_for(&draws, DEFAULT_PADDING);
                        (draws, support)
                    }
                };
                let subsets = draws
                    .into_iter()
                    .map(|d| SampleSet::clamped(d, a, b))
                    .collect::<Result<Vec<_>, _>>()?;
                let truth = target.full_data_density(m, a, b)?;
                let combined = fit_and_combine(&subsets, &self.params)?;
                Ok(Snapshot {
                    subsets,
                    combined,
                    truth: Box::new(move |x| truth.pdf(x)),
                })
            }
            Source::Bootstrap { pools, reference } => {
                let subsets = pools
                    .iter()
                    .map(|p| bootstrap(p, n, rng))
                    .collect::<Result<Vec<_>, _>>()?;
                let combined = fit_and_combine(&subsets, &self.params)?;
                let reference = reference.clone();
                Ok(Snapshot {
                    subsets,
                    combined,
                    truth: Box::new(move |x| reference.pdf(x)),
                })
            }
        }
    }

    /// Runs one replication, redrawing after failed fits.
    pub fn snapshot(&self, n: usize, rep_seed: u64) -> Result<(Snapshot, usize), ExperimentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let mut last = None;
        for attempt in 0..=MAX_RETRIES {
            match self.attempt(n, &mut rng) {
                Ok(s) => return Ok((s, attempt)),
                Err(e) if e.is_retryable() => {
                    log::debug!("n = {n}, attempt {attempt}: {e}");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(ExperimentError::ReplicationFailed {
            attempts: MAX_RETRIES + 1,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    pub fn run_replication(&self, n: usize, rep_seed: u64) -> Result<ReplicationOutcome, ExperimentError> {
        let (snapshot, retries) = self.snapshot(n, rep_seed)?;
        Ok(ReplicationOutcome {
            ise: snapshot.ise(),
            retries,
        })
    }

    /// Runs every replication at every grid point, on at most `jobs` threads.
    pub fn run(&self, jobs: Option<usize>) -> Result<MiseReport, ExperimentError> {
        let reps = self.cfg.replications;
        let tasks: Vec<(usize, usize)> = self
            .cfg
            .n_grid
            .iter()
            .flat_map(|&n| (0..reps).map(move |r| (n, r)))
            .collect();
        let work = || -> Vec<Result<ReplicationOutcome, ExperimentError>> {
            tasks
                .par_iter()
                .map(|&(n, r)| self.run_replication(n, replication_seed(self.cfg.seed, n, r)))
                .collect()
        };
        let outcomes = match jobs {
            Some(j) => rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?
                .install(work),
            None => work(),
        };
        let mut rows = Vec::with_capacity(self.cfg.n_grid.len());
        let mut outcomes = outcomes.into_iter();
        for &n in &self.cfg.n_grid {
            let mut values = Vec::with_capacity(reps);
            let mut retries = 0;
            let mut failed = 0;
            let mut last = String::new();
            for outcome in outcomes.by_ref().take(reps) {
                match outcome {
                    Ok(o) => {
                        values.push(o.ise);
                        retries += o.retries;
                    }
                    Err(e) if e.is_statistical() => {
                        failed += 1;
                        last = e.to_string();
                    }
                    Err(e) => return Err(e),
                }
            }
            if 2 * failed > reps || values.len() < 2 {
                return Err(ExperimentError::ExperimentAborted {
                    n,
                    failed,
                    replications: reps,
                    last,
                });
            }
            let (mean, std) = mean_std(&values);
            rows.push(MiseRow {
                n,
                mean_ise: mean,
                std_ise: std,
                bound_value: f64::NAN,
                failures: failed,
                retries,
            });
        }
        Ok(MiseReport::new(rows, self.cfg.subsets, self.cfg.beta))
    }
}

/// Validates `cfg`, prepares its source and runs it on the global thread pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MiseReport, ExperimentError> {
    Experiment::new(cfg.clone())?.run(None)
}

fn self_support(cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    cfg.support.map(|[a, b]| (a, b))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Least-squares `(slope, intercept)` of `ys` against `xs`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseRow {
    pub n: usize,
    pub mean_ise: f64,
    pub std_ise: f64,
    /// `C ||N||^(-2 beta)` with `C` matched at the first grid point.
    pub bound_value: f64,
    pub failures: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseReport {
    pub rows: Vec<MiseRow>,
    /// Of `ln mean_ise` against `ln n`.
    pub slope: f64,
    pub intercept: f64,
    /// `-2 beta`.
    pub theoretical_slope: f64,
    pub bound_constant: f64,
}

impl MiseReport {
    pub fn new(mut rows: Vec<MiseRow>, subsets: usize, beta: f64) -> Self {
        rows.sort_by_key(|r| r.n);
        let norm = |n: usize| sample_norm(&vec![n; subsets]);
        let bound_constant = rows
            .first()
            .map(|r| r.mean_ise * norm(r.n).powf(2.0 * beta))
            .unwrap_or(f64::NAN);
        for r in &mut rows {
            r.bound_value = bound_constant * norm(r.n).powf(-2.0 * beta);
        }
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.mean_ise.ln()).collect();
        let (slope, intercept) = if rows.len() >= 2 {
            fit_line(&xs, &ys)
        } else {
            (f64::NAN, f64::NAN)
        };
        Self {
            rows,
            slope,
            intercept,
            theoretical_slope: -2.0 * beta,
            bound_constant,
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub slope: f64,
    pub intercept: f64,
    pub theoretical_slope: f64,
    pub bound_constant: f64,
    pub rows: Vec<MiseRow>,
}

/// Writes `n,mean_ise,std_ise,bound_value` rows.
pub fn write_results_csv(path: impl AsRef<Path>, report: &MiseReport) -> Result<(), ExperimentError> {
    let path = path.as_ref();
    let mut text = String::from("n,mean_ise,std_ise,bound_value\n");
    for r in &report.rows {
        text.push_str(&format!("{},{:e},{:e},{:e}\n", r.n, r.mean_ise, r.std_ise, r.bound_value));
    }
    std::fs::write(path, text).map_err(ExperimentError::io(path))
}

pub fn write_report_json(
    path: impl AsRef<Path>,
    cfg: &ExperimentConfig,
    report: &MiseReport,
) -> Result<(), ExperimentError> {
    let path = path.as_ref();
    let doc = ReportDocument {
        config: cfg.clone(),
        seed: cfg.seed,
        slope: report.slope,
        intercept: report.intercept,
        theoretical_slope: report.theoretical_slope,
        bound_constant: report.bound_constant,
        rows: report.rows.clone(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(ExperimentError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ise_examples() {
        assert!(ise(|x| x.sin(), |x| x.sin(), (0.0, 3.0)).abs() < 1e-12);
        assert!((ise(|_| 1.0, |_| 0.0, (0.0, 1.0)) - 1.0).abs() < 1e-12);
        assert!((ise(|_| 1.0, |x| 2.0 * x, (0.0, 1.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn regression_recovers_exact_lines() {
        let xs: Vec<f64> = (1..=10).map(|i| (1000.0 * i as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -x + 2.5).collect();
        let (s, c) = fit_line(&xs, &ys);
        assert!((s + 1.0).abs() < 1e-12 && (c - 2.5).abs() < 1e-10);
    }

    #[test]
    fn bound_line_is_anchored_at_the_first_point() {
        let rows = [1000, 4000]
            .iter()
            .map(|&n| MiseRow {
                n,
                mean_ise: 1.0 / n as f64,
                std_ise: 0.0,
                bound_value: 0.0,
                failures: 0,
                retries: 0,
            })
            .collect();
        let r = MiseReport::new(rows, 3, 0.5);
        assert!((r.rows[0].bound_value - 1e-3).abs() < 1e-15);
        assert!((r.rows[1].bound_value - 2.5e-4).abs() < 1e-15);
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert_eq!(r.theoretical_slope, -1.0);
    }

    #[test]
    fn seeds_differ_across_cells() {
        let s = replication_seed(7, 100, 0);
        assert_ne!(s, replication_seed(7, 100, 1));
        assert_ne!(s, replication_seed(7, 200, 0));
        assert_ne!(s, replication_seed(8, 100, 0));
        assert_eq!(s, replication_seed(7, 100, 0));
    }
}

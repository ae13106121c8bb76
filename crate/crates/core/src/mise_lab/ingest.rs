use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::experiment::{fit_and_combine, RateParams};
use super::ExperimentError;
use crate::consensus::CompositeInterpolant;
use crate::logspline::{choose_knots, FitOptions, LogsplineFit, LogsplineModel};
use crate::samples::{padded_range, read_samples_csv, write_samples_csv, SampleError, SampleSet, DEFAULT_PADDING};

/// How the common support of ingested subset files is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportPolicy {
    /// Union of the per-file ranges, padded by 1% of its width on each side.
    PaddedUnion,
    /// Intersection of the per-file ranges. Every file then has samples next
    /// to both ends, so no boundary knot interval is left empty.
    Overlap,
    Fixed(f64, f64),
}

/// Reads one subset per file on the padded union of the files' ranges.
pub fn ingest_subsets<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<SampleSet>, ExperimentError> {
    ingest_subsets_with(paths, SupportPolicy::PaddedUnion)
}

/// Reads one subset per file and clamps every file into the support `policy` picks.
pub fn ingest_subsets_with<P: AsRef<Path>>(
    paths: &[P],
    policy: SupportPolicy,
) -> Result<Vec<SampleSet>, ExperimentError> {
    if paths.is_empty() {
        return Err(ExperimentError::InvalidConfig("no subset files given".into()));
    }
    let values = paths
        .iter()
        .map(read_samples_csv)
        .collect::<Result<Vec<_>, _>>()?;
    let (a, b) = match policy {
        SupportPolicy::Fixed(a, b) => (a, b),
        SupportPolicy::PaddedUnion => {
            padded_range(values.iter().flatten().copied(), DEFAULT_PADDING).expect("files are non-empty")
        }
        SupportPolicy::Overlap => {
            let ranges: Vec<(f64, f64)> = values
                .iter()
                .map(|v| padded_range(v.iter().copied(), 0.0).expect("files are non-empty"))
                .collect();
            let a = ranges.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
            let b = ranges.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            if !(a < b) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "subset files do not overlap (largest minimum {a}, smallest maximum {b})"
                )));
            }
            (a, b)
        }
    };
    Ok(values
        .into_iter()
        .map(|v| SampleSet::clamped(v, a, b))
        .collect::<Result<Vec<_>, _>>()?)
}

/// `n` draws with replacement from `pool`, on the pool's support.
pub fn bootstrap<R: Rng + ?Sized>(pool: &SampleSet, n: usize, rng: &mut R) -> Result<SampleSet, SampleError> {
    let values = pool.values();
    let draws = (0..n).map(|_| values[rng.random_range(0..values.len())]).collect();
    let (a, b) = pool.support();
    SampleSet::new(draws, a, b)
}

/// Stand-in for the unknown full-data posterior when samples come from files.
#[derive(Debug, Clone)]
pub(crate) enum Reference {
    /// Logspline fit of full-data samples.
    Fit(LogsplineFit),
    /// Normalized combination of the complete subset files.
    Combined(CompositeInterpolant),
}

impl Reference {
    pub(crate) fn build(
        pools: &[SampleSet],
        full_data: Option<&Path>,
        params: &RateParams,
    ) -> Result<Self, ExperimentError> {
        let support = pools[0].support();
        match full_data {
            Some(path) => {
                // Full data concentrate well inside the subsets' support; fitting on
                // that support would leave the outer knot intervals empty.
                let values: Vec<f64> = read_samples_csv(path)?
                    .into_iter()
                    .map(|v| v.clamp(support.0, support.1))
                    .collect();
                let (lo, hi) = padded_range(values.iter().copied(), DEFAULT_PADDING).expect("file is non-empty");
                let own = (lo.max(support.0), hi.min(support.1));
                let samples = SampleSet::new(values, own.0, own.1)?;
                let knots = choose_knots(samples.len(), own, params.beta, params.j, params.k)?;
                let fit = LogsplineModel::new(knots)?.fit(&samples, &FitOptions::default())?;
                Ok(Reference::Fit(fit))
            }
            None => Ok(Reference::Combined(fit_and_combine(pools, params)?.interpolant)),
        }
    }

    pub(crate) fn pdf(&self, x: f64) -> f64 {
        match self {
            Reference::Fit(fit) => fit.density(x),
            Reference::Combined(ci) => ci.normalized_eval(x),
        }
    }
}

/// Shape of the bundled synthetic subset data.
///
/// Subset `m` holds draws from `Gamma(shape_m, rate_m)` with mean near `mean`
/// and standard deviation `sd`; the full-data file holds draws from the
/// normalized product, `Gamma(sum(shape_m - 1) + 1, sum rate_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub subsets: usize,
    pub rows: usize,
    pub mean: f64,
    pub sd: f64,
    /// Spread of the subset means around `mean`.
    pub mean_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            subsets: 5,
            rows: 2420,
            mean: 1.6,
            sd: 0.09,
            mean_jitter: 0.04,
            seed: 20180101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFiles {
    pub subsets: Vec<PathBuf>,
    pub full_data: PathBuf,
    pub shapes: Vec<f64>,
    pub rates: Vec<f64>,
}

/// Writes `subset_1.csv ..` and `full_data.csv` into `dir`.
pub fn generate_synthetic_subsets(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticFiles, ExperimentError> {
    if spec.subsets == 0 || spec.rows == 0 || !(spec.mean > 0.0 && spec.sd > 0.0) {
        return Err(ExperimentError::InvalidConfig(
            "synthetic data needs positive subsets, rows, mean and sd".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.mean_jitter.max(0.0)).expect("finite jitter");
    let mut shapes = Vec::new();
    let mut rates = Vec::new();
    let mut subsets = Vec::new();
    for m in 0..spec.subsets {
        let mean = (spec.mean + jitter.sample(&mut rng)).max(spec.sd);
        let shape = (mean / spec.sd).powi(2);
        let rate = shape / mean;
        let d = Gamma::new(shape, 1.0 / rate).expect("positive parameters");
        let draws: Vec<f64> = d.sample_iter(&mut rng).take(spec.rows).collect();
        let path = dir.join(format!("subset_{}.csv", m + 1));
        write_samples_csv(&path, &draws)?;
        shapes.push(shape);
        rates.push(rate);
        subsets.push(path);
    }
    let shape: f64 = shapes.iter().map(|s| s - 1.0).sum::<f64>() + 1.0;
    let rate: f64 = rates.iter().sum();
    let d = Gamma::new(shape, 1.0 / rate).expect("positive parameters");
    let draws: Vec<f64> = d.sample_iter(&mut rng).take(spec.rows).collect();
    let full_data = dir.join("full_data.csv");
    write_samples_csv(&full_data, &draws)?;
    Ok(SyntheticFiles {
        subsets,
        full_data,
        shapes,
        rates,
    })
}

//! Monte Carlo estimation of the mean integrated squared error of the
//! combined estimator, and its empirical convergence rate.

mod config;
mod experiment;
mod ingest;
mod target;

use std::path::PathBuf;

use thiserror::Error;

use crate::consensus::ConsensusError;
use crate::logspline::FitError;
use crate::samples::SampleError;

pub use config::{ExperimentConfig, Target};
pub use experiment::{
    fit_and_combine, fit_line, ise, ise_on, replication_seed, run_experiment, write_report_json, write_results_csv,
    Combined, Experiment, MiseReport, MiseRow, RateParams, ReplicationOutcome, ReportDocument, Snapshot,
};
pub use ingest::{generate_synthetic_subsets, ingest_subsets, ingest_subsets_with, SupportPolicy, SyntheticFiles, SyntheticSpec};
pub use target::{SyntheticTarget, TruthDensity};

/// Rows of the density tables a snapshot writes. Fine enough that the
/// trapezoid rule on them is accurate to well below 1e-6.
pub const SNAPSHOT_ROWS: usize = 10_001;

/// Retries allowed per replication after a failed fit.
pub const MAX_RETRIES: usize = 5;

#[derive(Error, Debug)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Sample(#[from] SampleError),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error(transparent)]
    Consensus(#[from] ConsensusError),

    #[error("replication failed after {attempts} attempts: {last}")]
    ReplicationFailed { attempts: usize, last: String },

    #[error("experiment aborted at n = {n}: {failed} of {replications} replications failed (last error: {last})")]
    ExperimentAborted {
        n: usize,
        failed: usize,
        replications: usize,
        last: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl ExperimentError {
    /// Failures that conditioning on existence of every subset maximizer excludes;
    /// the replication redraws its samples after one of these.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ExperimentError::Fit(FitError::NoMaximizer { .. } | FitError::NonConvergence { .. })
                | ExperimentError::Consensus(ConsensusError::DegenerateProduct { .. })
        )
    }

    /// Statistical failures, as opposed to bad input.
    pub fn is_statistical(&self) -> bool {
        self.is_retryable()
            || matches!(
                self,
                ExperimentError::ExperimentAborted { .. } | ExperimentError::ReplicationFailed { .. }
            )
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| ExperimentError::Io { path, source }
    }
}

//! Posterior samples for one data subset, and their CSV ingestion.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum SampleError {
    #[error("subset {0} holds no samples")]
    EmptySubset(String),

    #[error("{path}: line {line}: cannot parse {text:?} as a number")]
    ParseError {
        path: PathBuf,
        line: u64,
        text: String,
    },

    #[error("sample {value} is not finite")]
    NonFinite { value: f64 },

    #[error("sample {value} lies outside the support [{a}, {b}]")]
    OutOfSupport { value: f64, a: f64, b: f64 },

    #[error("invalid support [{a}, {b}]")]
    InvalidSupport { a: f64, b: f64 },

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
}

/// Draws `theta_1..theta_n` from one subset posterior, with a declared support `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    support: (f64, f64),
}

/// Fraction of the sample range added on each side when a support is inferred.
pub const DEFAULT_PADDING: f64 = 0.01;

impl SampleSet {
    /// Rejects empty input, non-finite values, and values outside `[a, b]`.
    pub fn new(values: Vec<f64>, a: f64, b: f64) -> Result<Self, SampleError> {
        check_support(a, b)?;
        if values.is_empty() {
            return Err(SampleError::EmptySubset("<memory>".into()));
        }
        for &value in &values {
            if !value.is_finite() {
                return Err(SampleError::NonFinite { value });
            }
            if value < a || value > b {
                return Err(SampleError::OutOfSupport { value, a, b });
            }
        }
        Ok(Self {
            values,
            support: (a, b),
        })
    }

    /// Like [`SampleSet::new`] but moves out-of-support values onto the nearest endpoint.
    pub fn clamped(values: Vec<f64>, a: f64, b: f64) -> Result<Self, SampleError> {
        check_support(a, b)?;
        let values = values.into_iter().map(|v| if v.is_nan() { v } else { v.clamp(a, b) }).collect();
        Self::new(values, a, b)
    }

    /// Uses the sample range widened by `padding` of its length on each side.
    pub fn with_padded_range(values: Vec<f64>, padding: f64) -> Result<Self, SampleError> {
        let (a, b) = padded_range(values.iter().copied(), padding)
            .ok_or_else(|| SampleError::EmptySubset("<memory>".into()))?;
        Self::new(values, a, b)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Reads a subset file; see [`read_samples_csv`].
    pub fn from_csv(path: impl AsRef<Path>, support: Option<(f64, f64)>) -> Result<Self, SampleError> {
        let values = read_samples_csv(path)?;
        match support {
            Some((a, b)) => Self::clamped(values, a, b),
            None => Self::with_padded_range(values, DEFAULT_PADDING),
        }
    }
}

fn check_support(a: f64, b: f64) -> Result<(), SampleError> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(SampleError::InvalidSupport { a, b });
    }
    Ok(())
}

/// `[min - p r, max + p r]` with `r = max - min`; a degenerate range is widened by `p max(|min|, 1)`.
pub fn padded_range(values: impl IntoIterator<Item = f64>, padding: f64) -> Option<(f64, f64)> {
    let mut iter = values.into_iter().filter(|v| v.is_finite());
    let first = iter.next()?;
    let (lo, hi) = iter.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let pad = if range > 0.0 {
        padding * range
    } else {
        padding.max(f64::EPSILON) * lo.abs().max(1.0)
    };
    Some((lo - pad, hi + pad))
}

/// Reads one real per line. A first line reading `theta` is treated as a header;
/// blank lines are skipped. Parse failures report the 1-based line number.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, SampleError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SampleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut values = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|source| SampleError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(index as u64 + 1);
        let field = record.get(0).unwrap_or("");
        if field.is_empty() && record.len() <= 1 {
            continue;
        }
        if index == 0 && field.eq_ignore_ascii_case("theta") {
            continue;
        }
        let value: f64 = field.parse().map_err(|_| SampleError::ParseError {
            path: path.to_path_buf(),
            line,
            text: field.to_string(),
        })?;
        values.push(value);
    }
    if values.is_empty() {
        return Err(SampleError::EmptySubset(path.display().to_string()));
    }
    Ok(values)
}

/// Writes samples in the format read by [`read_samples_csv`], with a `theta` header.
pub fn write_samples_csv(path: impl AsRef<Path>, values: &[f64]) -> Result<(), SampleError> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|source| SampleError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let wrap = |source: csv::Error| SampleError::Csv {
        path: path.to_path_buf(),
        source,
    };
    writer.write_record(["theta"]).map_err(wrap)?;
    for v in values {
        writer.write_record([format!("{v:e}")]).map_err(wrap)?;
    }
    writer.flush().map_err(|source| SampleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

use rand::Rng;
use rand_distr::Distribution;
use statrs::distribution::{Continuous, ContinuousCDF};

use super::{ExperimentError, Target};
use crate::samples::padded_range;

/// A synthetic subset posterior that can be sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticTarget {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl SyntheticTarget {
    pub fn from_config(target: &Target) -> Option<Self> {
        match *target {
            Target::Normal { mean, sd } => Some(Self::Normal { mean, sd }),
            Target::Gamma { shape, rate } => Some(Self::Gamma { shape, rate }),
            Target::Uniform { lower, upper } => Some(Self::Uniform { lower, upper }),
            Target::Csv { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match *self {
            Self::Normal { mean, sd } => {
                let d = rand_distr::Normal::new(mean, sd).expect("validated");
                d.sample_iter(rng).take(n).collect()
            }
            Self::Gamma { shape, rate } => {
                let d = rand_distr::Gamma::new(shape, 1.0 / rate).expect("validated");
                d.sample_iter(rng).take(n).collect()
            }
            Self::Uniform { lower, upper } => {
                let d = rand_distr::Uniform::new_inclusive(lower, upper).expect("validated");
                d.sample_iter(rng).take(n).collect()
            }
        }
    }

    /// `n` draws conditioned on `[a, b]`, by rejection.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let want = n - out.len();
            out.extend(self.sample(rng, want).into_iter().filter(|&x| x >= a && x <= b));
        }
        out
    }

    /// Interval outside which the target has no mass.
    pub fn natural_support(&self) -> (f64, f64) {
        match *self {
            Self::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Gamma { .. } => (0.0, f64::INFINITY),
            Self::Uniform { lower, upper } => (lower, upper),
        }
    }

    /// Padded range of the pooled samples, cut to the natural support.
    pub fn support_for<'a>(&self, subsets: impl IntoIterator<Item = &'a Vec<f64>>, padding: f64) -> (f64, f64) {
        let (lo, hi) = padded_range(subsets.into_iter().flatten().copied(), padding).expect("samples drawn");
        let (na, nb) = self.natural_support();
        (lo.max(na), hi.min(nb))
    }

    /// Normalized product of `m` copies of the target density on `[a, b]`.
    pub fn full_data_density(&self, m: usize, a: f64, b: f64) -> Result<TruthDensity, ExperimentError> {
        let mf = m as f64;
        let kind = match *self {
            Self::Normal { mean, sd } => TruthKind::Normal(
                statrs::distribution::Normal::new(mean, sd / mf.sqrt())
                    .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?,
            ),
            Self::Gamma { shape, rate } => TruthKind::Gamma(
                statrs::distribution::Gamma::new(mf * (shape - 1.0) + 1.0, mf * rate)
                    .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?,
            ),
            Self::Uniform { lower, upper } => TruthKind::Uniform(lower, upper),
        };
        TruthDensity::new(kind, a, b)
    }
}

#[derive(Debug, Clone)]
enum TruthKind {
    Normal(statrs::distribution::Normal),
    Gamma(statrs::distribution::Gamma),
    Uniform(f64, f64),
}

/// A closed-form density renormalized on `[a, b]`.
#[derive(Debug, Clone)]
pub struct TruthDensity {
    kind: TruthKind,
    a: f64,
    b: f64,
    mass: f64,
}

impl TruthDensity {
    fn new(kind: TruthKind, a: f64, b: f64) -> Result<Self, ExperimentError> {
        let mass = match &kind {
            TruthKind::Normal(d) => d.cdf(b) - d.cdf(a),
            TruthKind::Gamma(d) => d.cdf(b) - d.cdf(a.max(0.0)),
            TruthKind::Uniform(lo, hi) => (b.min(*hi) - a.max(*lo)).max(0.0) / (hi - lo),
        };
        if !(mass > 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "target has no mass on [{a}, {b}]"
            )));
        }
        Ok(Self { kind, a, b, mass })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(x >= self.a && x <= self.b) {
            return 0.0;
        }
        let raw = match &self.kind {
            TruthKind::Normal(d) => d.pdf(x),
            TruthKind::Gamma(d) => {
                if x < 0.0 {
                    0.0
                } else {
                    d.pdf(x)
                }
            }
            TruthKind::Uniform(lo, hi) => {
                if x >= *lo && x <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        };
        raw / self.mass
    }
}

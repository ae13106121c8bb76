use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::logspline::check_beta;

/// Parameters of one MISE experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of subsets `M`. For a `csv` target it must equal the number of files.
    pub subsets: usize,
    /// Per-subset sample counts, strictly increasing.
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_l")]
    pub l: usize,
    pub target: Target,
    /// Fixed `[a, b]`. Synthetic targets are then sampled truncated to it and
    /// csv samples are clamped into it. Without it a synthetic support is the
    /// pooled sample range padded by 1% on each side, and a csv support is the
    /// overlap of the files' ranges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dx_constant")]
    pub dx_constant: f64,
}

fn default_replications() -> usize {
    100
}
fn default_beta() -> f64 {
    0.5
}
fn default_j() -> usize {
    1
}
fn default_k() -> usize {
    4
}
fn default_l() -> usize {
    1
}
fn default_dx_constant() -> f64 {
    1.0
}

/// Where subset samples come from.
///
/// Synthetic targets give every subset the same posterior, so the full-data
/// density is the renormalized `M`-th power of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Target {
    Normal {
        mean: f64,
        sd: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
    /// Bootstrap from subset files; the reference is fitted from `reference`
    /// when given and from the pooled subset files otherwise.
    Csv {
        paths: Vec<PathBuf>,
        #[serde(default)]
        reference: Option<PathBuf>,
    },
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        if self.subsets == 0 {
            return bad("subsets must be at least 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid must not be empty".into());
        }
        if self.n_grid[0] == 0 {
            return bad("n_grid entries must be positive".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.replications < 2 {
            return bad("replications must be at least 2".into());
        }
        check_beta(self.beta).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        if self.k < 4 {
            return bad(format!("k must be at least 4, got {}", self.k));
        }
        if self.j > self.k - 1 {
            return bad(format!("j = {} must not exceed k - 1 = {}", self.j, self.k - 1));
        }
        if self.l == 0 || self.l + 3 > self.k {
            return bad(format!("l = {} must lie in 1..=k-3 = {}", self.l, self.k - 3));
        }
        if !(self.dx_constant > 0.0 && self.dx_constant.is_finite()) {
            return bad("dx_constant must be positive".into());
        }
        if let Some([a, b]) = self.support {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return bad(format!("support [{a}, {b}] is not a finite interval"));
            }
            if matches!(self.target, Target::Gamma { .. }) && a < 0.0 {
                return bad("gamma support must lie in [0, inf)".into());
            }
            if let Target::Uniform { lower, upper } = self.target {
                if b <= lower || a >= upper {
                    return bad("support misses the uniform target".into());
                }
            }
        }
        match &self.target {
            Target::Normal { mean, sd } => {
                if !(mean.is_finite() && *sd > 0.0 && sd.is_finite()) {
                    return bad("normal target needs a finite mean and positive sd".into());
                }
            }
            Target::Gamma { shape, rate } => {
                if !(*shape >= 1.0 && shape.is_finite() && *rate > 0.0 && rate.is_finite()) {
                    return bad("gamma target needs shape >= 1 and positive rate".into());
                }
            }
            Target::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return bad("uniform target needs lower < upper".into());
                }
            }
            Target::Csv { paths, .. } => {
                if paths.is_empty() {
                    return bad("csv target needs at least one path".into());
                }
                if paths.len() != self.subsets {
                    return bad(format!(
                        "csv target lists {} files but subsets = {}",
                        paths.len(),
                        self.subsets
                    ));
                }
            }
        }
        Ok(())
    }

    /// Resolves relative csv paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Target::Csv { paths, reference } = &mut self.target {
            for p in paths.iter_mut().chain(reference.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = parse(r#"{"subsets": 3, "n_grid": [100, 200], "target": {"kind": "normal", "mean": 2, "sd": 1}}"#)
            .unwrap();
        assert_eq!(cfg.replications, 100);
        assert_eq!((cfg.k, cfg.l, cfg.j), (4, 1, 1));
        assert_eq!(cfg.beta, 0.5);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(parse(r#"{"subsets": 3, "n_grid": [1], "bogus": 1, "target": {"kind": "normal", "mean": 2, "sd": 1}}"#)
            .is_err());
        assert!(parse(r#"{"subsets": 3, "n_grid": [1], "target": {"kind": "normal", "mean": 2, "sd": 1, "x": 0}}"#)
            .is_err());
        assert!(parse(r#"{"subsets": 3, "n_grid": [1], "target": {"kind": "cauchy"}}"#).is_err());
    }

    #[test]
    fn invariants_are_checked() {
        let base = parse(r#"{"subsets": 3, "n_grid": [100, 200], "target": {"kind": "gamma", "shape": 1, "rate": 1}}"#)
            .unwrap();
        base.validate().unwrap();
        let mut c = base.clone();
        c.n_grid = vec![200, 200];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.replications = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.l = 2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.j = 4;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.target = Target::Gamma { shape: 0.5, rate: 1.0 };
        assert!(c.validate().is_err());
        let mut c = base;
        c.target = Target::Csv {
            paths: vec!["a.csv".into()],
            reference: None,
        };
        assert!(c.validate().is_err());
    }
}

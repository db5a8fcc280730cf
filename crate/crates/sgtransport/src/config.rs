//! Declarative experiment configuration (JSON) shared by the CLI and the
//! example programs. CLI flags override individual keys.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    AdvectConst,
    Lshape,
    Landau1d,
    Landau2d,
    /// constant-coefficient advection-reaction on periodic boxes with a
    /// sine-mode initial datum; beta and sigma from the config
    Custom,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentKind::AdvectConst => "advect-const",
            ExperimentKind::Lshape => "lshape",
            ExperimentKind::Landau1d => "landau1d",
            ExperimentKind::Landau2d => "landau2d",
            ExperimentKind::Custom => "custom",
        };
        write!(f, "{s}")
    }
}

fn default_dim() -> usize {
    1
}
fn default_order() -> usize {
    1
}
fn default_one() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-8
}
fn default_threads() -> usize {
    1
}
fn default_budget() -> usize {
    3500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_order")]
    pub order: usize,
    /// single level to run
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    /// inclusive level range (overrides `level`)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<[usize; 2]>,
    /// strip count override (default: experiment-specific rule)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_one")]
    pub delta_multiplier: f64,
    /// Richardson tolerance (functional L2)
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    /// fixed-point tolerance of the nonlinear driver
    #[serde(default = "default_tol")]
    pub fp_tolerance: f64,
    /// simulated horizon override (Landau: default 50)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// per-strip solver reports as CSV
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_csv: Option<PathBuf>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub seed: u64,
    /// peak-memory budget per level run; exceeding levels are skipped
    #[serde(default = "default_budget")]
    pub memory_budget_mb: usize,
    /// snapshot of the final trace
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_out: Option<PathBuf>,
    /// Landau decay-rate fit window
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    /// custom experiment: constant advection per phase-space axis
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            dim: 1,
            order: 1,
            level: None,
            levels: None,
            steps: None,
            delta_multiplier: 1.0,
            tolerance: 1e-8,
            fp_tolerance: 1e-8,
            horizon: None,
            out: None,
            residual_csv: None,
            threads: 1,
            seed: 0,
            memory_budget_mb: 3500,
            snapshot_out: None,
            fit_window: None,
            beta_x: None,
            beta_v: None,
            sigma: None,
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// Levels to run, smallest first.
    pub fn level_range(&self) -> Result<std::ops::RangeInclusive<usize>> {
        if let Some([a, b]) = self.levels {
            if a < 1 || b < a {
                return Err(Error::Config(format!("invalid level range {a}..{b}")));
            }
            return Ok(a..=b);
        }
        if let Some(l) = self.level {
            if l < 1 {
                return Err(Error::Config("level must be >= 1".into()));
            }
            return Ok(l..=l);
        }
        Err(Error::Config("missing level or levels".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::Config(format!("dim {} not in 1..=3", self.dim)));
        }
        if self.order == 0 || self.order > 3 {
            return Err(Error::Config(format!("order {} not in 1..=3", self.order)));
        }
        if !(self.tolerance > 0.0) || !(self.fp_tolerance > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.delta_multiplier < 0.0 {
            return Err(Error::Config("delta multiplier must be >= 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::Config("horizon must be positive".into()));
            }
        }
        if let Some(s) = self.steps {
            if s == 0 {
                return Err(Error::Config("steps must be >= 1".into()));
            }
        }
        self.level_range()?;
        match self.experiment {
            ExperimentKind::Lshape => {
                if self.dim != 2 && self.dim != default_dim() {
                    return Err(Error::Config("lshape runs in d = 2 only".into()));
                }
            }
            ExperimentKind::Landau1d => {
                if self.dim > 1 {
                    return Err(Error::Config("landau1d runs in d = 1".into()));
                }
            }
            ExperimentKind::Landau2d => {
                if self.dim != 2 && self.dim != default_dim() {
                    return Err(Error::Config("landau2d runs in d = 2".into()));
                }
            }
            ExperimentKind::Custom => {
                if let Some(bx) = &self.beta_x {
                    if bx.len() != self.dim {
                        return Err(Error::Config("beta_x length must equal dim".into()));
                    }
                }
                if let Some(bv) = &self.beta_v {
                    if bv.len() != self.dim {
                        return Err(Error::Config("beta_v length must equal dim".into()));
                    }
                }
            }
            ExperimentKind::AdvectConst => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::AdvectConst);
        cfg.dim = 2;
        cfg.order = 2;
        cfg.levels = Some([1, 4]);
        cfg.out = Some("table.csv".into());
        let text = cfg.to_json();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_errors() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::AdvectConst);
        assert!(cfg.validate().is_err()); // no level
        cfg.level = Some(2);
        assert!(cfg.validate().is_ok());
        cfg.dim = 5;
        assert!(cfg.validate().is_err());
        cfg.dim = 1;
        cfg.tolerance = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"experiment":"advect-const","level":2,"bogus":1}"#;
        let r: std::result::Result<ExperimentConfig, _> = serde_json::from_str(text);
        assert!(r.is_err());
    }
}

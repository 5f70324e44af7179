//! Experiment configuration: one JSON document describing agents, weight,
//! topologies, dwelling process, window parameters and run controls.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::FrameworkParams;
use crate::dynamics::{CommunicationWeight, SimOptions, StopCriteria};
use crate::error::{Error, Result};
use crate::graph::TopologyEnsemble;
use crate::matrix::check_stability;
use crate::montecarlo::{EnsembleSpec, InitSpec};
use crate::switching::DwellingProcess;

/// Window parameters `(n, c, M)` and the optional spatial-bound exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameworkSettings {
    pub n: u64,
    pub c: f64,
    #[serde(rename = "M")]
    pub m: u64,
    /// Defaults to the weight's tail exponent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_inf: Option<f64>,
    /// Minimum dwell `a` and bound `M` for the continuous-time condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousSettings>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSettings {
    pub a: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunControls {
    pub horizon: u64,
    pub stop: StopCriteria,
    pub seed: u64,
    pub runs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub snapshot_stride: u64,
    pub cross_check: bool,
}

impl Default for RunControls {
    fn default() -> Self {
        RunControls {
            horizon: 10_000,
            stop: StopCriteria::default(),
            seed: 0,
            runs: 100,
            jobs: None,
            out: None,
            snapshot_stride: 100,
            cross_check: false,
        }
    }
}

/// `n` and `r` values tabulated by the bounds report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsGrid {
    pub n: Vec<u64>,
    pub r: Vec<u64>,
}

impl Default for BoundsGrid {
    fn default() -> Self {
        BoundsGrid {
            n: vec![10, 20, 40, 80],
            r: vec![0, 1, 2, 5, 10, 20, 50, 100, 1000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub init: InitSpec,
    pub weight: CommunicationWeight,
    pub h: f64,
    pub topologies: TopologyEnsemble,
    pub dwelling: DwellingProcess,
    pub framework: FrameworkSettings,
    #[serde(default)]
    pub run: RunControls,
    #[serde(default)]
    pub grid: BoundsGrid,
}

impl ExperimentConfig {
    /// Parses and validates; serde errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural parse only; callers run [`ExperimentConfig::validate`] themselves.
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Preconditions every command relies on. Messages name the violated condition.
    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        check_stability(self.h, self.weight.kappa())?;
        self.dwelling.validate()?;
        self.init.validate()?;
        if self.init.n_agents() != self.topologies.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "init describes {} agents but the topologies have {} vertices",
                self.init.n_agents(),
                self.topologies.n_vertices()
            )));
        }
        let f = &self.framework;
        if f.n == 0 {
            return Err(Error::InvalidParameter("window parameter n must be at least 1".into()));
        }
        if !(f.c > 0.0 && f.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("log coefficient c must be positive, got {}", f.c)));
        }
        if let Some(e) = f.epsilon {
            if !(e >= 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon must be nonnegative, got {e}")));
            }
        }
        if let Some(d) = f.delta {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!("delta must be positive, got {d}")));
            }
        }
        if let Some(x) = f.x_inf {
            if !(x > 0.0) {
                return Err(Error::InvalidParameter(format!("x_inf must be positive, got {x}")));
            }
        }
        if self.run.horizon == 0 || self.run.runs == 0 {
            return Err(Error::InvalidParameter("horizon and runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.topologies.n_vertices()
    }

    pub fn framework_params(&self) -> FrameworkParams {
        let f = &self.framework;
        FrameworkParams {
            n_agents: self.n_agents(),
            h: self.h,
            weight: self.weight,
            probs: self.topologies.probs().to_vec(),
            m: f.m,
            n: f.n,
            c: f.c,
            epsilon: f.epsilon.unwrap_or_else(|| self.weight.tail_exponent()),
            delta: f.delta,
            x_inf: f.x_inf,
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            snapshot_stride: self.run.snapshot_stride,
            cross_check: self.run.cross_check,
        }
    }

    pub fn ensemble_spec(&self, runs: u64, root_seed: u64, horizon: u64, with_bounds: bool) -> EnsembleSpec {
        EnsembleSpec {
            ensemble: self.topologies.clone(),
            process: self.dwelling.clone(),
            weight: self.weight,
            h: self.h,
            init: self.init.clone(),
            n_runs: runs,
            root_seed,
            horizon,
            stop: self.run.stop,
            bounds: with_bounds.then(|| self.framework_params()),
        }
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

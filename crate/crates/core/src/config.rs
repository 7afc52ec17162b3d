//! Run configuration: one TOML (or JSON) document holding every stage's
//! parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::epidemic::SsirParams;
use crate::error::{Error, Result};
use crate::metrics::{MetricParams, TrainingSchedule};
use crate::population::PopulationSpec;
use crate::surveillance::AbsenteeismParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl ThresholdSpec {
    /// Threshold values; range endpoints are inclusive and values are
    /// rounded to 10 decimals to drop accumulated float noise.
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            ThresholdSpec::List(ref v) => Ok(v.clone()),
            ThresholdSpec::Range { start, stop, step } => {
                if !(step.is_finite() && step > 0.0) || stop < start {
                    return Err(Error::InvalidConfig(format!(
                        "threshold range needs step > 0 and stop >= start (got {start}..{stop} by {step})"
                    )));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub maxlag: usize,
    pub thresholds: ThresholdSpec,
    #[serde(default)]
    pub metric: MetricParams,
    #[serde(default)]
    pub training: TrainingSchedule,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            maxlag: 15,
            thresholds: ThresholdSpec::Range { start: 0.1, stop: 0.6, step: 0.05 },
            metric: MetricParams::default(),
            training: TrainingSchedule::PriorYears,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    /// School year drawn in the epidemic figure.
    pub epidemic_year: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { epidemic_year: 4 }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
    pub population: PopulationSpec,
    pub epidemic: SsirParams,
    pub surveillance: AbsenteeismParams,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub plot: PlotConfig,
}

impl Default for RunConfig {
    /// The 16-catchment, ten-season workflow with seed 656.
    fn default() -> Self {
        RunConfig {
            seed: 656,
            output_dir: default_output_dir(),
            threads: None,
            population: PopulationSpec::default(),
            epidemic: SsirParams::default(),
            surveillance: AbsenteeismParams::default(),
            evaluation: EvaluationConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            toml::from_str(&text)?
        };
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serialisable")
    }

    pub fn thresholds(&self) -> Result<Vec<f64>> {
        self.evaluation.thresholds.values()
    }

    /// Checks every section. The epidemic population size may be zero here
    /// (it is filled from the simulated population).
    pub fn validate(&self) -> Result<()> {
        self.population.households.validate()?;
        self.population.school_count.validate()?;
        self.population.enrollment.validate()?;
        if self.population.catchments == 0 {
            return Err(Error::param("population.catchments", "must be >= 1"));
        }
        if !(self.population.side.is_finite() && self.population.side > 0.0) {
            return Err(Error::param("population.side", "must be > 0"));
        }
        let mut epidemic = self.epidemic.clone();
        if epidemic.n == 0 {
            epidemic.n = u64::MAX;
        }
        epidemic.validate()?;
        self.surveillance.validate()?;
        self.evaluation.metric.validate()?;
        if self.evaluation.maxlag == 0 || self.evaluation.maxlag > self.surveillance.maxlag {
            return Err(Error::InvalidConfig(format!(
                "evaluation.maxlag must lie in 1..={} (surveillance.maxlag)",
                self.surveillance.maxlag
            )));
        }
        let thresholds = self.thresholds()?;
        if thresholds.is_empty()
            || thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0))
            || thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidConfig("thresholds must be strictly increasing inside (0, 1)".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be >= 1"));
        }
        Ok(())
    }
}

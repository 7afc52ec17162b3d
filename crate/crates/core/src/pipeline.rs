//! End-to-end workflow: population, epidemics, surveillance table, grid
//! search, and every output file. Each stage can also run on its own from
//! the files written by the previous one.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::epidemic::{simulate_ssir, summarize, EpidemicSeries};
use crate::error::{Error, ErrorKind, Result};
use crate::figures::{emit_alert_figure, emit_epidemic_figure, MetricAlerts};
use crate::io;
use crate::metrics::{evaluate_grid_with, LagLogisticRisk, Metric, MetricGrid};
use crate::population::{simulate_population, PopulationFrame};
use crate::stochastics::derive_stream;
use crate::surveillance::{compile_dataset, CompileWarning, SurveillanceDataset};

pub const HOUSEHOLDS_FILE: &str = "households.csv";
pub const INDIVIDUALS_FILE: &str = "individuals.csv";
pub const EPIDEMIC_FILE: &str = "epidemic.csv";
pub const EPIDEMIC_SUMMARY_FILE: &str = "epidemic_summary.json";
pub const SURVEILLANCE_FILE: &str = "surveillance.csv";
pub const ALERT_SUMMARY_FILE: &str = "alert_summary.json";
pub const ALERT_SUMMARY_TEXT_FILE: &str = "alert_summary.txt";
pub const ALERT_YEARS_FILE: &str = "alert_years.csv";
pub const SELECTED_ALERTS_FILE: &str = "selected_alerts.json";
pub const METRIC_MATRICES_FILE: &str = "metric_matrices.json";
pub const MODEL_FITS_FILE: &str = "model_fits.json";
pub const EPIDEMIC_FIGURE_FILE: &str = "epidemic.svg";
pub const ALERT_FIGURE_FILE: &str = "alerts.svg";
pub const ERROR_FILE: &str = "error.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Population,
    Epidemic,
    Surveillance,
    Evaluation,
    Plot,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Population => "population",
            Stage::Epidemic => "epidemic",
            Stage::Surveillance => "surveillance",
            Stage::Evaluation => "evaluation",
            Stage::Plot => "plot",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.error.kind())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self.error.kind() {
            ErrorKind::Config => "config",
            ErrorKind::Simulation => "simulation",
            ErrorKind::Evaluation => "evaluation",
            ErrorKind::Io => "io",
        };
        serde_json::json!({
            "stage": self.stage,
            "kind": kind,
            "exit_code": self.exit_code(),
            "message": self.error.to_string(),
        })
    }

    /// Writes `error.json` into `dir`, ignoring failures (the error itself
    /// may be an unwritable directory).
    pub fn write_json(&self, dir: &Path) {
        let _ = io::write_json(&dir.join(ERROR_FILE), &self.to_json());
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Simulation => 3,
        ErrorKind::Evaluation => 4,
        ErrorKind::Io => 5,
    }
}

trait InStage<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// How metric matrices are written.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MatrixFormat {
    /// One `metric_<NAME>.csv` per metric.
    #[default]
    Csv,
    /// All six matrices in `metric_matrices.json`.
    Json,
}

/// Alert days of a metric's selected model in every evaluated year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedAlerts {
    pub metric: String,
    pub lag: usize,
    pub threshold: f64,
    pub years: Vec<YearAlerts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearAlerts {
    pub year: u32,
    pub ref_date: u32,
    pub alert_days: Vec<u32>,
}

pub fn selected_alerts(grid: &MetricGrid) -> Vec<SelectedAlerts> {
    Metric::ALL
        .iter()
        .filter_map(|&m| {
            let best = grid.best_for(m)?;
            let cell = grid.cells.iter().find(|c| c.lag == best.lag && c.threshold == best.threshold)?;
            Some(SelectedAlerts {
                metric: m.name().to_string(),
                lag: best.lag,
                threshold: best.threshold,
                years: cell
                    .years
                    .iter()
                    .map(|e| YearAlerts { year: e.year, ref_date: e.reference, alert_days: e.alert_days.clone() })
                    .collect(),
            })
        })
        .collect()
}

/// Everything the full workflow computes.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub population: PopulationFrame,
    pub epidemics: Vec<EpidemicSeries>,
    pub dataset: SurveillanceDataset,
    pub warnings: Vec<CompileWarning>,
    pub grid: MetricGrid,
}

/// Runs `f` on a pool with `threads` workers (rayon's default when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn population_stage(config: &RunConfig) -> StageResult<PopulationFrame> {
    simulate_population(&config.population, &derive_stream(config.seed, "population")).stage(Stage::Population)
}

/// Simulates the epidemic replicates; `population_size` fills `n` when the
/// config leaves it at zero.
pub fn epidemic_stage(config: &RunConfig, population_size: usize) -> StageResult<Vec<EpidemicSeries>> {
    let mut params = config.epidemic.clone();
    if params.n == 0 {
        params.n = population_size as u64;
    }
    simulate_ssir(&params, &derive_stream(config.seed, "epidemic")).stage(Stage::Epidemic)
}

pub fn surveillance_stage(
    config: &RunConfig,
    epidemics: &[EpidemicSeries],
    population: &PopulationFrame,
) -> StageResult<(SurveillanceDataset, Vec<CompileWarning>)> {
    compile_dataset(epidemics, population, &config.surveillance, &derive_stream(config.seed, "surveillance"))
        .stage(Stage::Surveillance)
}

pub fn evaluation_stage(config: &RunConfig, dataset: &SurveillanceDataset) -> StageResult<MetricGrid> {
    let thresholds = config.thresholds().stage(Stage::Config)?;
    let lags: Vec<usize> = (1..=config.evaluation.maxlag).collect();
    let source = LagLogisticRisk { schedule: config.evaluation.training };
    evaluate_grid_with(dataset, &lags, &thresholds, &config.evaluation.metric, &source).stage(Stage::Evaluation)
}

/// Computes every stage in memory.
pub fn compute(config: &RunConfig) -> StageResult<RunOutputs> {
    config.validate().stage(Stage::Config)?;
    let population = population_stage(config)?;
    let epidemics = epidemic_stage(config, population.size())?;
    let (dataset, warnings) = surveillance_stage(config, &epidemics, &population)?;
    let grid = evaluation_stage(config, &dataset)?;
    Ok(RunOutputs { population, epidemics, dataset, warnings, grid })
}

pub fn write_population(dir: &Path, population: &PopulationFrame) -> Result<()> {
    io::write_households_csv(&dir.join(HOUSEHOLDS_FILE), &population.households)?;
    io::write_individuals_csv(&dir.join(INDIVIDUALS_FILE), &population.individuals)
}

pub fn write_epidemics(dir: &Path, epidemics: &[EpidemicSeries]) -> Result<()> {
    io::write_epidemic_csv(&dir.join(EPIDEMIC_FILE), epidemics)?;
    io::write_epidemic_summary(&dir.join(EPIDEMIC_SUMMARY_FILE), &summarize(epidemics))
}

pub fn write_evaluation(dir: &Path, grid: &MetricGrid, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => {
            for m in Metric::ALL {
                io::write_metric_matrix(&dir.join(format!("metric_{}.csv", m.name())), grid, m)?;
            }
        }
        MatrixFormat::Json => {
            let matrices: serde_json::Map<String, serde_json::Value> =
                Metric::ALL.iter().map(|&m| (m.name().to_string(), serde_json::json!(grid.matrix(m)))).collect();
            io::write_json(
                &dir.join(METRIC_MATRICES_FILE),
                &serde_json::json!({
                    "lags": grid.lags,
                    "thresholds": grid.thresholds,
                    "matrices": matrices,
                }),
            )?;
        }
    }
    let summary = io::AlertSummary::from_grid(grid);
    io::write_json(&dir.join(ALERT_SUMMARY_FILE), &summary)?;
    std::fs::write(dir.join(ALERT_SUMMARY_TEXT_FILE), summary.render())?;
    io::write_year_table(&dir.join(ALERT_YEARS_FILE), &summary)?;
    io::write_json(&dir.join(MODEL_FITS_FILE), &grid.fits)?;
    io::write_json(&dir.join(SELECTED_ALERTS_FILE), &selected_alerts(grid))
}

/// Draws both figures for school year `year`. The alert figure is skipped
/// (returning `false`) when that year has no reference date.
pub fn write_figures(
    dir: &Path,
    year: u32,
    epidemics: &[EpidemicSeries],
    dataset: &SurveillanceDataset,
    selected: &[SelectedAlerts],
) -> Result<bool> {
    let series = epidemics
        .iter()
        .find(|s| s.replicate == year)
        .ok_or_else(|| Error::InvalidConfig(format!("no epidemic replicate {year} to plot")))?;
    emit_epidemic_figure(series, &dir.join(EPIDEMIC_FIGURE_FILE))?;
    let Some(block) = dataset.years().into_iter().find(|b| b.school_year == year) else {
        return Err(Error::InvalidConfig(format!("school year {year} is not in the surveillance table")));
    };
    let Some(reference) = block.reference_date else {
        return Ok(false);
    };
    let alerts: Vec<MetricAlerts> = selected
        .iter()
        .map(|s| MetricAlerts {
            metric: s.metric.clone(),
            lag: s.lag,
            threshold: s.threshold,
            alert_days: s.years.iter().find(|y| y.year == year).map(|y| y.alert_days.clone()).unwrap_or_default(),
        })
        .collect();
    emit_alert_figure(dataset.year_rows(&block), &alerts, reference, &dir.join(ALERT_FIGURE_FILE))?;
    Ok(true)
}

/// Writes every artifact of a completed run into `dir`.
pub fn write_outputs(dir: &Path, config: &RunConfig, out: &RunOutputs, format: MatrixFormat) -> StageResult<()> {
    std::fs::create_dir_all(dir).map_err(Error::from).stage(Stage::Config)?;
    write_population(dir, &out.population).stage(Stage::Population)?;
    write_epidemics(dir, &out.epidemics).stage(Stage::Epidemic)?;
    io::write_surveillance_csv(&dir.join(SURVEILLANCE_FILE), &out.dataset).stage(Stage::Surveillance)?;
    write_evaluation(dir, &out.grid, format).stage(Stage::Evaluation)?;
    write_figures(dir, config.plot.epidemic_year, &out.epidemics, &out.dataset, &selected_alerts(&out.grid))
        .stage(Stage::Plot)?;
    Ok(())
}

/// The full workflow on a pool sized by `config.threads`. On failure an
/// `error.json` is left in the output directory.
pub fn run_pipeline(config: &RunConfig, format: MatrixFormat) -> StageResult<RunOutputs> {
    let dir = config.output_dir.clone();
    let result = with_threads(config.threads, || {
        let out = compute(config)?;
        write_outputs(&dir, config, &out, format)?;
        Ok(out)
    })
    .stage(Stage::Config)
    .and_then(|r| r);
    if let Err(e) = &result {
        let _ = std::fs::create_dir_all(&dir);
        e.write_json(&dir);
    }
    result
}

/// Rebuilds the population frame from `households.csv` and `individuals.csv`.
pub fn read_population(dir: &Path) -> Result<PopulationFrame> {
    Ok(PopulationFrame {
        catchments: Vec::new(),
        schools: Vec::new(),
        households: io::read_households_csv(&dir.join(HOUSEHOLDS_FILE))?,
        individuals: io::read_individuals_csv(&dir.join(INDIVIDUALS_FILE))?,
    })
}

pub fn read_selected_alerts(path: &Path) -> Result<Vec<SelectedAlerts>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

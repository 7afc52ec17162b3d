//! Alert quality metrics and the (lag x threshold) grid search.
//!
//! For a school year with reference date `ref`, an alert on day `t` sits
//! `tau = ref - t` days early. Alerts with `0 <= tau <= tau_opt` are true
//! alerts; earlier ones are false alerts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{fit_selection, predict_daily_risk, raise_alerts, LagLogisticSpec, ModelFit};
use crate::error::{Error, Result};
use crate::surveillance::{SurveillanceDataset, YearBlock};

/// Which alert defines the observed lead time in ADD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddReference {
    #[default]
    FirstTrueAlert,
    FirstAlert,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    pub tau_opt: u32,
    /// ADD penalty for a year without true alerts; defaults to `tau_opt`.
    #[serde(default)]
    pub tau_max: Option<u32>,
    pub k: f64,
    pub a: f64,
    #[serde(default)]
    pub add_reference: AddReference,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { tau_opt: 14, tau_max: None, k: 1.0, a: 1.0, add_reference: AddReference::FirstTrueAlert }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_opt == 0 {
            return Err(Error::param("tau_opt", "must be >= 1"));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::param("k", "must be > 0"));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::param("a", "must be > 0"));
        }
        Ok(())
    }

    pub fn tau_max(&self) -> u32 {
        self.tau_max.unwrap_or(self.tau_opt)
    }
}

/// False alarm rate of one year. `alert_taus` must already exclude alerts
/// after the reference date.
pub fn far(alert_taus: &[u32], tau_opt: u32) -> f64 {
    let false_alerts = alert_taus.iter().filter(|&&t| t > tau_opt).count();
    if alert_taus.iter().any(|&t| t <= tau_opt) {
        false_alerts as f64 / (false_alerts as f64 + 1.0)
    } else {
        1.0
    }
}

/// Accumulated days delayed. `alert_taus` are ordered by alert day, so the
/// lead time of the earliest alert comes first.
pub fn add(alert_taus: &[u32], tau_opt: u32, tau_max: u32) -> f64 {
    add_with(alert_taus, tau_opt, tau_max, AddReference::FirstTrueAlert)
}

pub fn add_with(alert_taus: &[u32], tau_opt: u32, tau_max: u32, reference: AddReference) -> f64 {
    if !alert_taus.iter().any(|&t| t <= tau_opt) {
        return tau_max as f64;
    }
    let observed = match reference {
        AddReference::FirstTrueAlert => alert_taus.iter().find(|&&t| t <= tau_opt),
        AddReference::FirstAlert => alert_taus.first(),
    };
    tau_opt as f64 - *observed.expect("a true alert exists") as f64
}

/// Alert time quality of a single alert raised `tau` days early.
pub fn atq(tau: f64, params: &MetricParams) -> Result<f64> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Contract(format!("alert lead time must be >= 0, got {tau}")));
    }
    let opt = params.tau_opt as f64;
    let distance = (opt - tau).abs() / (params.k * opt);
    let value = if tau <= opt {
        distance.powf(2.0 * params.a)
    } else if tau <= (params.k + 1.0) * opt {
        distance.powf(params.a)
    } else {
        1.0
    };
    Ok(value.clamp(0.0, 1.0))
}

pub fn aatq(values: &[f64]) -> f64 {
    if values.is_empty() {
        1.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn fatq(values: &[f64]) -> f64 {
    values.first().copied().unwrap_or(1.0)
}

/// Weights proportional to the number of training years behind each
/// evaluated year.
pub fn year_weights(training_counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = training_counts.iter().sum();
    if training_counts.is_empty() || total == 0 {
        return Err(Error::Evaluation("no evaluable years to weight".into()));
    }
    Ok(training_counts.iter().map(|&c| c as f64 / total as f64).collect())
}

pub fn weighted_aggregate(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::Contract(format!("{} values but {} weights", values.len(), weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("weights sum to {total}, expected 1")));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum())
}

/// Metrics of one evaluated school year under one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearEvaluation {
    pub year: u32,
    pub reference: u32,
    pub training_years: usize,
    pub alert_days: Vec<u32>,
    pub alert_taus: Vec<u32>,
    pub true_alert_taus: Vec<u32>,
    pub false_count: usize,
    pub far: f64,
    pub add: f64,
    pub aatq: f64,
    pub fatq: f64,
}

/// Scores the alert days of one year against its reference date. Alerts
/// after the reference date are ignored.
pub fn evaluate_year(
    year: u32,
    reference: u32,
    training_years: usize,
    alert_days: &[u32],
    params: &MetricParams,
) -> Result<YearEvaluation> {
    let mut days: Vec<u32> = alert_days.iter().copied().filter(|&d| d <= reference).collect();
    days.sort_unstable();
    days.dedup();
    let alert_taus: Vec<u32> = days.iter().map(|&d| reference - d).collect();
    let true_alert_taus: Vec<u32> = alert_taus.iter().copied().filter(|&t| t <= params.tau_opt).collect();
    let atqs = alert_taus.iter().map(|&t| atq(t as f64, params)).collect::<Result<Vec<_>>>()?;
    Ok(YearEvaluation {
        year,
        reference,
        training_years,
        false_count: alert_taus.len() - true_alert_taus.len(),
        far: far(&alert_taus, params.tau_opt),
        add: add_with(&alert_taus, params.tau_opt, params.tau_max(), params.add_reference),
        aatq: aatq(&atqs),
        fatq: fatq(&atqs),
        alert_days: days,
        alert_taus,
        true_alert_taus,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Far,
    Add,
    Aatq,
    Fatq,
    Waatq,
    Wfatq,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::Far, Metric::Add, Metric::Aatq, Metric::Fatq, Metric::Waatq, Metric::Wfatq];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Far => "FAR",
            Metric::Add => "ADD",
            Metric::Aatq => "AATQ",
            Metric::Fatq => "FATQ",
            Metric::Waatq => "WAATQ",
            Metric::Wfatq => "WFATQ",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Daily risk of one target year as produced by some model.
#[derive(Clone, Debug, PartialEq)]
pub struct YearRisk {
    pub dates: Vec<u32>,
    pub risk: Vec<Option<f64>>,
    pub converged: bool,
    /// The fitted model, when the source has one.
    pub model: Option<ModelFit>,
}

/// Supplies daily risk for a target year given the lag size and the school
/// years available for training.
pub trait RiskSource: Sync {
    fn daily_risk(
        &self,
        dataset: &SurveillanceDataset,
        lag: usize,
        target: &YearBlock,
        training: &[u32],
    ) -> Result<YearRisk>;
}

/// How training data is selected for a target year.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TrainingSchedule {
    /// Completed prior school years only.
    #[default]
    PriorYears,
    /// Prior years plus the target year up to and including `cut_day`.
    PriorYearsAndPrefix { cut_day: u32 },
}

/// The lag-logistic model, refitted per (lag, target year).
#[derive(Clone, Copy, Debug, Default)]
pub struct LagLogisticRisk {
    pub schedule: TrainingSchedule,
}

impl RiskSource for LagLogisticRisk {
    fn daily_risk(
        &self,
        dataset: &SurveillanceDataset,
        lag: usize,
        target: &YearBlock,
        training: &[u32],
    ) -> Result<YearRisk> {
        let mut selection: Vec<(u32, Option<u32>)> = training.iter().map(|&y| (y, None)).collect();
        if let TrainingSchedule::PriorYearsAndPrefix { cut_day } = self.schedule {
            selection.push((target.school_year, Some(cut_day)));
        }
        let model = fit_selection(dataset, &selection, lag)?;
        let rows = dataset.year_rows(target);
        Ok(YearRisk {
            dates: rows.iter().map(|r| r.date).collect(),
            risk: predict_daily_risk(&model, rows, lag)?,
            converged: model.converged,
            model: Some(model),
        })
    }
}

/// Metrics for one (lag, threshold) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lag: usize,
    pub threshold: f64,
    pub failed: bool,
    /// Indexed by [`Metric`] order.
    pub values: [f64; 6],
    pub years: Vec<YearEvaluation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    pub metric: Metric,
    pub lag: usize,
    pub threshold: f64,
    pub value: f64,
}

/// One row of the per-year table: reference date and, for each metric, the
/// first alert day under that metric's best model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearSummary {
    pub year: u32,
    pub ref_date: Option<u32>,
    /// Indexed by [`Metric`] order.
    pub first_alerts: [Option<u32>; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    pub lags: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// Row-major over (lag, threshold).
    pub cells: Vec<GridCell>,
    pub weights: Vec<f64>,
    pub best: Vec<Option<BestModel>>,
    pub years: Vec<YearSummary>,
    /// Fitted models by lag, then target year.
    pub fits: Vec<ModelFit>,
}

impl MetricGrid {
    pub fn cell(&self, lag_index: usize, threshold_index: usize) -> &GridCell {
        &self.cells[lag_index * self.thresholds.len() + threshold_index]
    }

    /// Matrix of one metric, rows = lags, columns = thresholds.
    pub fn matrix(&self, metric: Metric) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.thresholds.len())
            .map(|row| row.iter().map(|c| c.values[metric.index()]).collect())
            .collect()
    }

    pub fn failed_cells(&self) -> Vec<(usize, f64)> {
        self.cells.iter().filter(|c| c.failed).map(|c| (c.lag, c.threshold)).collect()
    }

    pub fn best_for(&self, metric: Metric) -> Option<&BestModel> {
        self.best[metric.index()].as_ref()
    }

    /// Mean and sample variance of a metric over non-failed cells.
    pub fn cell_moments(&self, metric: Metric) -> (f64, f64) {
        let vals: Vec<f64> = self.cells.iter().filter(|c| !c.failed).map(|c| c.values[metric.index()]).collect();
        let n = vals.len() as f64;
        if vals.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (mean, var)
    }
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("threshold list is empty".into()));
    }
    if thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidConfig("thresholds must lie strictly inside (0, 1)".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("thresholds must be strictly increasing".into()));
    }
    Ok(())
}

/// Grid search with the lag-logistic model over lags `1..=maxlag`.
pub fn evaluate_grid(
    dataset: &SurveillanceDataset,
    maxlag: usize,
    thresholds: &[f64],
    params: &MetricParams,
) -> Result<MetricGrid> {
    if maxlag == 0 {
        return Err(Error::InvalidConfig("maxlag must be >= 1".into()));
    }
    let lags: Vec<usize> = (1..=maxlag).collect();
    evaluate_grid_with(dataset, &lags, thresholds, params, &LagLogisticRisk::default())
}

/// Grid search with any risk source. Risk traces are computed once per
/// (lag, target year) and shared across thresholds.
pub fn evaluate_grid_with(
    dataset: &SurveillanceDataset,
    lags: &[usize],
    thresholds: &[f64],
    params: &MetricParams,
    source: &dyn RiskSource,
) -> Result<MetricGrid> {
    params.validate()?;
    validate_thresholds(thresholds)?;
    if let Some(&l) = lags.iter().find(|&&l| l > dataset.maxlag) {
        return Err(Error::InvalidConfig(format!("lag {l} exceeds the dataset's maxlag {}", dataset.maxlag)));
    }
    let years = dataset.years();
    if years.iter().filter(|b| b.reference_date.is_some()).count() < 2 {
        return Err(Error::InvalidConfig(
            "alert evaluation needs at least two school years with reference dates".into(),
        ));
    }
    // Target years: every year after the first that has a reference date.
    let targets: Vec<usize> = (1..years.len()).filter(|&i| years[i].reference_date.is_some()).collect();
    let training_counts: Vec<usize> = targets.clone();
    let weights = year_weights(&training_counts)?;

    let jobs: Vec<(usize, usize)> = lags.iter().flat_map(|&l| targets.iter().map(move |&t| (l, t))).collect();
    let risks: Vec<YearRisk> = jobs
        .par_iter()
        .map(|&(lag, t)| {
            let training: Vec<u32> = years[..t].iter().map(|b| b.school_year).collect();
            source.daily_risk(dataset, lag, &years[t], &training)
        })
        .collect::<Result<_>>()?;

    let grid_jobs: Vec<(usize, usize)> =
        (0..lags.len()).flat_map(|li| (0..thresholds.len()).map(move |ti| (li, ti))).collect();
    let cells: Vec<GridCell> = grid_jobs
        .par_iter()
        .map(|&(li, ti)| {
            let lag = lags[li];
            let spec = LagLogisticSpec { lag, threshold: thresholds[ti] };
            let mut failed = false;
            let mut evals = Vec::with_capacity(targets.len());
            for (k, &t) in targets.iter().enumerate() {
                let risk = &risks[li * targets.len() + k];
                failed |= !risk.converged;
                let block = &years[t];
                let reference = block.reference_date.expect("targets have references");
                let trace = raise_alerts(block.school_year, &risk.dates, &risk.risk, &spec, 1, reference)?;
                evals.push(evaluate_year(block.school_year, reference, training_counts[k], &trace.alert_days, params)?);
            }
            let mean = |f: fn(&YearEvaluation) -> f64| evals.iter().map(f).sum::<f64>() / evals.len() as f64;
            let aatqs: Vec<f64> = evals.iter().map(|e| e.aatq).collect();
            let fatqs: Vec<f64> = evals.iter().map(|e| e.fatq).collect();
            Ok(GridCell {
                lag,
                threshold: thresholds[ti],
                failed,
                values: [
                    mean(|e| e.far),
                    mean(|e| e.add),
                    mean(|e| e.aatq),
                    mean(|e| e.fatq),
                    weighted_aggregate(&aatqs, &weights)?,
                    weighted_aggregate(&fatqs, &weights)?,
                ],
                years: evals,
            })
        })
        .collect::<Result<_>>()?;

    let best: Vec<Option<BestModel>> = Metric::ALL
        .iter()
        .map(|&metric| {
            // Cells are ordered by lag then threshold; strict comparison keeps the first minimum.
            let mut best: Option<&GridCell> = None;
            for cell in cells.iter().filter(|c| !c.failed) {
                if best.is_none_or(|b| cell.values[metric.index()] < b.values[metric.index()]) {
                    best = Some(cell);
                }
            }
            best.map(|c| BestModel { metric, lag: c.lag, threshold: c.threshold, value: c.values[metric.index()] })
        })
        .collect();

    let summaries = years
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let mut first_alerts = [None; 6];
            if let Some(k) = targets.iter().position(|&t| t == i) {
                for metric in Metric::ALL {
                    if let Some(b) = &best[metric.index()] {
                        let li = lags.iter().position(|&l| l == b.lag).expect("best lag in grid");
                        let ti = thresholds.iter().position(|&t| t == b.threshold).expect("best threshold in grid");
                        let cell = &cells[li * thresholds.len() + ti];
                        first_alerts[metric.index()] = cell.years[k].alert_days.first().copied();
                    }
                }
            }
            YearSummary { year: block.school_year, ref_date: block.reference_date, first_alerts }
        })
        .collect();

    Ok(MetricGrid {
        lags: lags.to_vec(),
        thresholds: thresholds.to_vec(),
        cells,
        weights,
        best,
        years: summaries,
        fits: risks.into_iter().filter_map(|r| r.model).collect(),
    })
}

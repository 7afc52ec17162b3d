#![allow(dead_code)]

use sentinel_core::config::ThresholdSpec;
use sentinel_core::detection::Design;
use sentinel_core::error::Result;
use sentinel_core::metrics::{RiskSource, YearRisk};
use sentinel_core::stochastics::RngStream;
use sentinel_core::surveillance::{seasonal_terms, SurveillanceDataset, SurveillanceRow, YearBlock};
use sentinel_core::RunConfig;

/// A four-catchment, six-season run that finishes quickly in debug builds.
pub fn small_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.population.catchments = 4;
    config.epidemic.rep = 6;
    config.epidemic.report_prop = 0.1;
    config.surveillance.maxlag = 4;
    config.evaluation.maxlag = 4;
    config.evaluation.thresholds = ThresholdSpec::Range { start: 0.1, stop: 0.4, step: 0.1 };
    config
}

pub const DAYS: u32 = 40;
pub const MAXLAG: usize = 3;
pub const REFS: [u32; 3] = [18, 27, 33];

pub fn toy_dataset() -> SurveillanceDataset {
    let mut rows = Vec::new();
    for (y, &reference) in REFS.iter().enumerate() {
        for date in 1..=DAYS {
            rows.push(SurveillanceRow {
                date,
                school_year: y as u32 + 1,
                pct_absent: 0.05,
                absent: 0,
                absent_sick: 0,
                new_inf: 0,
                reported_cases: 0,
                case: date >= reference - 14 && date <= reference,
                sinterm: 0.0,
                costerm: 1.0,
                window: date + 14 >= reference && date <= reference,
                ref_date: date == reference,
                lags: (1..=MAXLAG).map(|k| (date as usize > k).then_some(0.05)).collect(),
            });
        }
    }
    SurveillanceDataset { maxlag: MAXLAG, rows }
}

/// A fixed, hand-checkable risk value per (lag, year, day); `None` on the
/// first `lag` days of every year.
pub fn injected(lag: usize, year: u32, date: u32) -> Option<f64> {
    if date as usize <= lag {
        return None;
    }
    let code = (date * 7 + lag as u32 * 3 + year * 5) % 10;
    Some(code as f64 / 10.0 + 0.05)
}

pub struct Injected {
    pub failing_lag: Option<usize>,
}

impl RiskSource for Injected {
    fn daily_risk(
        &self,
        dataset: &SurveillanceDataset,
        lag: usize,
        target: &YearBlock,
        _training: &[u32],
    ) -> Result<YearRisk> {
        let rows = dataset.year_rows(target);
        Ok(YearRisk {
            dates: rows.iter().map(|r| r.date).collect(),
            risk: rows.iter().map(|r| injected(lag, target.school_year, r.date)).collect(),
            converged: self.failing_lag != Some(lag),
            model: None,
        })
    }
}

pub struct Constant(pub f64);

impl RiskSource for Constant {
    fn daily_risk(
        &self,
        dataset: &SurveillanceDataset,
        lag: usize,
        target: &YearBlock,
        _training: &[u32],
    ) -> Result<YearRisk> {
        let rows = dataset.year_rows(target);
        Ok(YearRisk {
            dates: rows.iter().map(|r| r.date).collect(),
            risk: rows.iter().map(|r| (r.date as usize > lag).then_some(self.0)).collect(),
            converged: true,
            model: None,
        })
    }
}

pub const THRESHOLDS: [f64; 4] = [0.2, 0.45, 0.6, 0.85];

/// Per-year metrics by direct enumeration with tau_opt = 14, k = 1, a = 1.
pub struct Brute {
    pub far: f64,
    pub add: f64,
    pub aatq: f64,
    pub fatq: f64,
}

pub fn brute_atq(tau: u32) -> f64 {
    if tau <= 14 {
        let d = (14 - tau) as f64 / 14.0;
        d * d
    } else if tau <= 28 {
        (tau - 14) as f64 / 14.0
    } else {
        1.0
    }
}

pub fn brute_year(lag: usize, threshold: f64, year: u32) -> Brute {
    let reference = REFS[year as usize - 1];
    let mut taus = Vec::new();
    for day in 1..=reference {
        if let Some(r) = injected(lag, year, day) {
            if r > threshold {
                taus.push(reference - day);
            }
        }
    }
    let n_true = taus.iter().filter(|&&t| t <= 14).count();
    let n_false = taus.len() - n_true;
    let far = if n_true > 0 { n_false as f64 / (n_false as f64 + 1.0) } else { 1.0 };
    let add = match taus.iter().find(|&&t| t <= 14) {
        Some(&t) => 14.0 - t as f64,
        None => 14.0,
    };
    let atqs: Vec<f64> = taus.iter().map(|&t| brute_atq(t)).collect();
    let aatq = if atqs.is_empty() { 1.0 } else { atqs.iter().sum::<f64>() / atqs.len() as f64 };
    let fatq = atqs.first().copied().unwrap_or(1.0);
    Brute { far, add, aatq, fatq }
}

pub fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Rows `[1, lag0, sin, cos]` for `years` seasons of `days` days, with
/// responses drawn from `beta` plus a per-year intercept of variance `tau_sq`.
pub fn simulate_design(beta: &[f64], tau_sq: f64, years: usize, days: u32, stream: &mut RngStream) -> Design {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for _ in 0..years {
        let gamma = stream.normal(0.0, tau_sq.sqrt());
        let start = rows.len();
        for date in 1..=days {
            let (s, c) = seasonal_terms(date, 365.25);
            let x = vec![1.0, stream.uniform(0.02, 0.16), s, c];
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + gamma;
            y.push(if stream.bernoulli(sigmoid(eta)) { 1.0 } else { 0.0 });
            rows.push(x);
        }
        groups.push(start..rows.len());
    }
    Design::new(rows, y, groups).unwrap()
}

/// Plain Newton-Raphson for logistic regression with a dense Gauss-Jordan
/// solve; shares no code with the library.
pub fn newton_oracle(design: &Design) -> Vec<f64> {
    let p = design.cols();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..design.rows() {
            let x = design.row(i);
            let mu = sigmoid(x.iter().zip(&beta).map(|(u, v)| u * v).sum());
            for r in 0..p {
                a[r][p] += (design.y[i] - mu) * x[r];
                for c in 0..p {
                    a[r][c] += mu * (1.0 - mu) * x[r] * x[c];
                }
            }
        }
        for col in 0..p {
            let pivot = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, pivot);
            for r in 0..p {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    let pivot_row = a[col].clone();
                    for (x, y) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                        *x -= f * y;
                    }
                }
            }
        }
        let step: Vec<f64> = (0..p).map(|r| a[r][p] / a[r][r]).collect();
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        if step.iter().all(|s| s.abs() < 1e-13) {
            break;
        }
    }
    beta
}

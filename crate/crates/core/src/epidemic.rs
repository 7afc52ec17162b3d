//! Discrete-time stochastic SIR with under-reporting and reporting delays.
//!
//! Daily new infections follow `Binomial(S(t-1), P(t))` with
//! `P(t) = 1 - exp(-alpha * I(t-1) / N - spark)`. The draws are realised
//! through exponential infection thresholds: every susceptible carries an
//! `Exp(1)` threshold and is infected on the first day the accumulated
//! pressure exceeds it. Because thresholds are memoryless, the number of
//! susceptibles crossing on a given day is exactly binomial with the
//! probability above. Only the smallest thresholds are ever generated
//! (as ordered spacings), so the cost scales with the number infected, and
//! two runs that share a stream but differ in `alpha` are coupled
//! monotonically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::RngStream;

/// Two reported cases no more than this many days apart fix the reference date.
pub const REFERENCE_WINDOW_DAYS: u32 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsirParams {
    /// Population size. Zero in a config file means "use the simulated population".
    #[serde(default)]
    pub n: u64,
    /// Horizon in days; days are numbered `1..=horizon`.
    pub horizon: u32,
    pub alpha: f64,
    /// Constant external infection pressure per day.
    #[serde(default)]
    pub spark: f64,
    pub avg_start: f64,
    pub min_start: u32,
    /// Spread of the start day; defaults to `(avg_start - min_start) / 3`.
    #[serde(default)]
    pub start_sd: Option<f64>,
    pub inf_period: u32,
    pub inf_init: u64,
    pub report_prop: f64,
    pub report_delay_mean: f64,
    pub rep: u32,
}

impl Default for SsirParams {
    fn default() -> Self {
        SsirParams {
            n: 0,
            horizon: 300,
            alpha: 0.298,
            spark: 0.0,
            avg_start: 45.0,
            min_start: 20,
            start_sd: None,
            inf_period: 4,
            inf_init: 32,
            report_prop: 0.02,
            report_delay_mean: 7.0,
            rep: 10,
        }
    }
}

impl SsirParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "population size must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        // alpha == 0 is accepted: it yields the no-transmission baseline.
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        if !(self.spark >= 0.0 && self.spark.is_finite()) {
            return Err(Error::param("spark", format!("must be >= 0, got {}", self.spark)));
        }
        if !(0.0..=1.0).contains(&self.report_prop) {
            return Err(Error::param("report_prop", "must lie in [0, 1]"));
        }
        if !(self.report_delay_mean >= 0.0 && self.report_delay_mean.is_finite()) {
            return Err(Error::param("report_delay_mean", "must be >= 0"));
        }
        if !(self.min_start as f64 <= self.avg_start && self.avg_start < self.horizon as f64) {
            return Err(Error::param(
                "avg_start",
                format!(
                    "need min_start ({}) <= avg_start ({}) < horizon ({})",
                    self.min_start, self.avg_start, self.horizon
                ),
            ));
        }
        if let Some(sd) = self.start_sd {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::param("start_sd", "must be >= 0"));
            }
        }
        if self.inf_period == 0 {
            return Err(Error::param("inf_period", "must be >= 1"));
        }
        if self.inf_init > self.n {
            return Err(Error::param("inf_init", "cannot exceed the population size"));
        }
        if self.rep == 0 {
            return Err(Error::param("rep", "must be >= 1"));
        }
        Ok(())
    }

    fn start_sd(&self) -> f64 {
        self.start_sd.unwrap_or((self.avg_start - self.min_start as f64) / 3.0)
    }
}

/// One simulated season. Vectors are indexed by `day - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicSeries {
    pub replicate: u32,
    pub start_day: u32,
    pub inf_period: u32,
    pub susceptible: Vec<u64>,
    pub infected: Vec<u64>,
    pub removed: Vec<u64>,
    pub new_inf: Vec<u64>,
    pub reported: Vec<u64>,
    pub reference_date: Option<u32>,
}

impl EpidemicSeries {
    pub fn horizon(&self) -> u32 {
        self.new_inf.len() as u32
    }

    pub fn population(&self) -> u64 {
        self.susceptible.first().map(|s| s + self.infected[0] + self.removed[0]).unwrap_or(0)
    }

    pub fn total_infected(&self) -> u64 {
        self.new_inf.iter().sum()
    }

    pub fn total_reported(&self) -> u64 {
        self.reported.iter().sum()
    }

    pub fn peak_infected(&self) -> u64 {
        self.infected.iter().copied().max().unwrap_or(0)
    }

    /// Day (1-based) of the largest daily incidence; earliest on ties.
    pub fn peak_day(&self) -> Option<u32> {
        let max = *self.new_inf.iter().max()?;
        if max == 0 {
            return None;
        }
        self.new_inf.iter().position(|&v| v == max).map(|i| i as u32 + 1)
    }

    pub fn first_reported_day(&self) -> Option<u32> {
        self.reported.iter().position(|&c| c > 0).map(|i| i as u32 + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicSummary {
    pub n_sims: usize,
    pub avg_total_infected: f64,
    pub avg_total_reported: f64,
    pub avg_peak_infected: f64,
}

pub fn summarize(series: &[EpidemicSeries]) -> EpidemicSummary {
    let n = series.len().max(1) as f64;
    let avg = |f: fn(&EpidemicSeries) -> u64| series.iter().map(|s| f(s) as f64).sum::<f64>() / n;
    EpidemicSummary {
        n_sims: series.len(),
        avg_total_infected: avg(EpidemicSeries::total_infected),
        avg_total_reported: avg(EpidemicSeries::total_reported),
        avg_peak_infected: avg(EpidemicSeries::peak_infected),
    }
}

/// Daily probability that a susceptible is infected.
pub fn infection_probability(alpha: f64, infected: u64, n: u64, spark: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "population size must be >= 1"));
    }
    Ok(-(-daily_pressure(alpha, infected, n, spark)).exp_m1())
}

fn daily_pressure(alpha: f64, infected: u64, n: u64, spark: f64) -> f64 {
    alpha * infected as f64 / n as f64 + spark
}

/// Simulates `params.rep` independent seasons. Replicate `j` (1-based) uses
/// the sub-streams `rep-j/start`, `rep-j/transmission` and `rep-j/reporting`
/// of `master`.
pub fn simulate_ssir(params: &SsirParams, master: &RngStream) -> Result<Vec<EpidemicSeries>> {
    params.validate()?;
    (1..=params.rep).into_par_iter().map(|j| simulate_replicate(params, j, &master.child(format!("rep-{j}")))).collect()
}

fn draw_start_day(params: &SsirParams, stream: &mut RngStream) -> u32 {
    let draw = stream.normal(params.avg_start, params.start_sd()).round();
    let lo = params.min_start.max(1) as f64;
    draw.max(lo).min(params.horizon as f64) as u32
}

/// Smallest order statistics of `m` i.i.d. `Exp(1)` thresholds, generated
/// lazily by the spacing representation.
struct Thresholds {
    remaining: u64,
    next: f64,
}

impl Thresholds {
    fn new(m: u64, stream: &mut RngStream) -> Self {
        let next = if m > 0 { stream.exponential(1.0) / m as f64 } else { f64::INFINITY };
        Thresholds { remaining: m, next }
    }

    /// Number of thresholds at or below `level`, consuming them.
    fn take_below(&mut self, level: f64, stream: &mut RngStream) -> u64 {
        let mut taken = 0;
        while self.remaining > 0 && self.next <= level {
            taken += 1;
            self.remaining -= 1;
            self.next = if self.remaining > 0 {
                self.next + stream.exponential(1.0) / self.remaining as f64
            } else {
                f64::INFINITY
            };
        }
        taken
    }
}

fn simulate_replicate(params: &SsirParams, replicate: u32, stream: &RngStream) -> Result<EpidemicSeries> {
    let horizon = params.horizon as usize;
    let n = params.n;
    let p = params.inf_period as usize;
    let start_day = draw_start_day(params, &mut stream.child("start"));
    let start = start_day as usize - 1;

    let mut new_inf = vec![0u64; horizon];
    let mut susceptible = vec![n; horizon];
    let mut infected = vec![0u64; horizon];
    let mut removed = vec![0u64; horizon];

    let seeded = params.inf_init.min(n);
    new_inf[start] = seeded;
    susceptible[start] = n - seeded;
    infected[start] = seeded;

    let mut transmission = stream.child("transmission");
    let mut thresholds = Thresholds::new(n - seeded, &mut transmission);
    let mut cumulative = 0.0;
    for t in start + 1..horizon {
        cumulative += daily_pressure(params.alpha, infected[t - 1], n, params.spark);
        let fresh = thresholds.take_below(cumulative, &mut transmission);
        let recovered = if t >= p { new_inf[t - p] } else { 0 };
        new_inf[t] = fresh;
        susceptible[t] = susceptible[t - 1] - fresh;
        infected[t] = infected[t - 1] + fresh - recovered;
        removed[t] = removed[t - 1] + recovered;
    }

    let reported =
        apply_reporting(&new_inf, params.report_prop, params.report_delay_mean, &mut stream.child("reporting"));
    let reference_date = compute_reference_date(&reported);
    Ok(EpidemicSeries {
        replicate,
        start_day,
        inf_period: params.inf_period,
        susceptible,
        infected,
        removed,
        new_inf,
        reported,
        reference_date,
    })
}

/// Thins daily infections to laboratory-confirmed cases and shifts each one
/// by a rounded exponential delay. Cases landing past the horizon are lost.
/// A `delay_mean` of zero reports on the day of infection.
pub fn apply_reporting(new_inf: &[u64], report_prop: f64, delay_mean: f64, stream: &mut RngStream) -> Vec<u64> {
    let horizon = new_inf.len();
    let mut reported = vec![0u64; horizon];
    for (t, &cases) in new_inf.iter().enumerate() {
        let confirmed = stream.binomial(cases, report_prop);
        for _ in 0..confirmed {
            let delay = if delay_mean > 0.0 { stream.exponential(1.0 / delay_mean).round() } else { 0.0 };
            let day = t as f64 + delay;
            if day < horizon as f64 {
                reported[day as usize] += 1;
            }
        }
    }
    reported
}

/// Date of the second case in the earliest pair of consecutive reported
/// cases at most [`REFERENCE_WINDOW_DAYS`] apart. Cases on the same day are
/// consecutive with gap zero.
pub fn compute_reference_date(reported: &[u64]) -> Option<u32> {
    let mut previous: Option<u32> = None;
    for (i, &count) in reported.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let day = i as u32 + 1;
        if previous.is_some_and(|p| day - p <= REFERENCE_WINDOW_DAYS) || count >= 2 {
            return Some(day);
        }
        previous = Some(day);
    }
    None
}

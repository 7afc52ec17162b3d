//! Daily school absenteeism surveillance tables built from simulated
//! seasons and a population.

use std::f64::consts::PI;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epidemic::EpidemicSeries;
use crate::error::{Error, Result};
use crate::population::PopulationFrame;
use crate::stochastics::RngStream;

/// Columns preceding the lag features.
pub const BASE_COLUMNS: [&str; 12] = [
    "Date",
    "ScYr",
    "pct_absent",
    "absent",
    "absent_sick",
    "new_inf",
    "reported_cases",
    "Case",
    "sinterm",
    "costerm",
    "window",
    "ref_date",
];

pub fn column_names(maxlag: usize) -> Vec<String> {
    BASE_COLUMNS.iter().map(|s| s.to_string()).chain((0..=maxlag).map(|k| format!("lag{k}"))).collect()
}

/// What counts as a "case" day in the response column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseDefinition {
    /// At least one laboratory-confirmed case reported that day.
    #[default]
    Reported,
    /// At least one new infection that day.
    NewInfections,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsenteeismParams {
    pub p_base: f64,
    pub p_sick: f64,
    pub maxlag: usize,
    pub window_days: u32,
    pub year_length: f64,
    #[serde(default)]
    pub case_definition: CaseDefinition,
}

impl Default for AbsenteeismParams {
    fn default() -> Self {
        AbsenteeismParams {
            p_base: 0.05,
            p_sick: 0.95,
            maxlag: 15,
            window_days: 14,
            year_length: 365.25,
            case_definition: CaseDefinition::Reported,
        }
    }
}

impl AbsenteeismParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_base && self.p_base <= self.p_sick && self.p_sick <= 1.0) {
            return Err(Error::param(
                "p_base",
                format!("need 0 <= p_base ({}) <= p_sick ({}) <= 1", self.p_base, self.p_sick),
            ));
        }
        if self.window_days == 0 {
            return Err(Error::param("window_days", "must be >= 1"));
        }
        if !(self.year_length > 0.0 && self.year_length.is_finite()) {
            return Err(Error::param("year_length", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceRow {
    pub date: u32,
    pub school_year: u32,
    pub pct_absent: f64,
    pub absent: u64,
    pub absent_sick: u64,
    pub new_inf: u64,
    pub reported_cases: u64,
    pub case: bool,
    pub sinterm: f64,
    pub costerm: f64,
    pub window: bool,
    pub ref_date: bool,
    /// `lags[k]` is `pct_absent` k days earlier within the same school year.
    pub lags: Vec<Option<f64>>,
}

/// Contiguous rows of one school year.
#[derive(Clone, Debug, PartialEq)]
pub struct YearBlock {
    pub school_year: u32,
    pub rows: Range<usize>,
    pub reference_date: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurveillanceDataset {
    pub maxlag: usize,
    pub rows: Vec<SurveillanceRow>,
}

impl SurveillanceDataset {
    pub fn column_names(&self) -> Vec<String> {
        column_names(self.maxlag)
    }

    /// Year blocks in table order. Rows of one year must be contiguous.
    pub fn years(&self) -> Vec<YearBlock> {
        let mut blocks: Vec<YearBlock> = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            match blocks.last_mut() {
                Some(b) if b.school_year == row.school_year => b.rows.end = i + 1,
                _ => blocks.push(YearBlock { school_year: row.school_year, rows: i..i + 1, reference_date: None }),
            }
            if row.ref_date {
                let b = blocks.last_mut().expect("block pushed above");
                b.reference_date.get_or_insert(row.date);
            }
        }
        blocks
    }

    pub fn year_rows(&self, block: &YearBlock) -> &[SurveillanceRow] {
        &self.rows[block.rows.clone()]
    }
}

/// Infection start day of every enrolled student (in population order),
/// `None` for students never infected.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentInfections {
    pub start_days: Vec<Option<u32>>,
    pub inf_period: u32,
    pub horizon: u32,
}

impl StudentInfections {
    /// Students infectious on each day `1..=horizon`.
    pub fn infected_per_day(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.horizon as usize];
        for &d in self.start_days.iter().flatten() {
            let first = d as usize - 1;
            let last = (first + self.inf_period as usize).min(counts.len());
            for c in &mut counts[first..last] {
                *c += 1;
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.start_days.iter().flatten().count()
    }
}

/// Assigns each day's new infections to individuals drawn uniformly without
/// replacement from those still susceptible, and keeps the draws that fall
/// on enrolled students.
pub fn allocate_student_infections(
    series: &EpidemicSeries,
    population: &PopulationFrame,
    stream: &mut RngStream,
) -> Result<StudentInfections> {
    let n = population.individuals.len();
    if series.population() != n as u64 {
        return Err(Error::Consistency(format!(
            "epidemic population {} does not match {} individuals",
            series.population(),
            n
        )));
    }
    let mut student_slot = vec![usize::MAX; n];
    let mut students = 0;
    for (i, person) in population.individuals.iter().enumerate() {
        if person.is_elem_child {
            student_slot[i] = students;
            students += 1;
        }
    }
    let mut start_days = vec![None; students];
    let mut pool: Vec<u32> = (0..n as u32).collect();
    for (t, &count) in series.new_inf.iter().enumerate() {
        if count > pool.len() as u64 {
            return Err(Error::Consistency(format!(
                "day {}: {count} new infections but only {} susceptible",
                t + 1,
                pool.len()
            )));
        }
        for _ in 0..count {
            let who = pool.swap_remove(stream.index(pool.len())) as usize;
            if student_slot[who] != usize::MAX {
                start_days[student_slot[who]] = Some(t as u32 + 1);
            }
        }
    }
    Ok(StudentInfections { start_days, inf_period: series.inf_period, horizon: series.horizon() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DailyAbsence {
    pub absent: Vec<u64>,
    pub absent_sick: Vec<u64>,
    pub pct_absent: Vec<f64>,
}

/// Daily absences among `enrolled` students. Infected students are absent
/// with `p_sick`, all others with `p_base`; the per-student Bernoulli trials
/// are aggregated into two binomial counts per day.
pub fn simulate_absences(
    infections: &StudentInfections,
    enrolled: u64,
    params: &AbsenteeismParams,
    stream: &mut RngStream,
) -> Result<DailyAbsence> {
    params.validate()?;
    if enrolled == 0 {
        return Err(Error::Consistency("no enrolled students".into()));
    }
    let infected = infections.infected_per_day();
    let mut out = DailyAbsence {
        absent: Vec::with_capacity(infected.len()),
        absent_sick: Vec::with_capacity(infected.len()),
        pct_absent: Vec::with_capacity(infected.len()),
    };
    for &sick in &infected {
        if sick > enrolled {
            return Err(Error::Consistency(format!("{sick} infected students exceed {enrolled} enrolled")));
        }
        let absent_sick = stream.binomial(sick, params.p_sick);
        let absent_other = stream.binomial(enrolled - sick, params.p_base);
        let absent = absent_sick + absent_other;
        out.absent.push(absent);
        out.absent_sick.push(absent_sick);
        out.pct_absent.push(absent as f64 / enrolled as f64);
    }
    Ok(out)
}

pub fn seasonal_terms(date: u32, year_length: f64) -> (f64, f64) {
    let angle = 2.0 * PI * date as f64 / year_length;
    (angle.sin(), angle.cos())
}

/// Non-fatal issue found while compiling.
#[derive(Clone, Debug, PartialEq)]
pub struct CompileWarning {
    pub school_year: u32,
    pub message: String,
}

/// Builds the surveillance table: one block of `horizon` rows per season,
/// with school year `j` drawing from the sub-stream `year-j` of `stream`.
/// Seasons without a reference date are kept with all-zero window flags and
/// reported as warnings.
pub fn compile_dataset(
    epidemics: &[EpidemicSeries],
    population: &PopulationFrame,
    params: &AbsenteeismParams,
    stream: &RngStream,
) -> Result<(SurveillanceDataset, Vec<CompileWarning>)> {
    params.validate()?;
    let enrolled = population.enrolled() as u64;
    let blocks: Vec<Vec<SurveillanceRow>> = epidemics
        .par_iter()
        .map(|series| {
            let year_stream = stream.child(format!("year-{}", series.replicate));
            let infections = allocate_student_infections(series, population, &mut year_stream.child("allocation"))?;
            let absence = simulate_absences(&infections, enrolled, params, &mut year_stream.child("absence"))?;
            Ok(year_rows(series, &absence, params))
        })
        .collect::<Result<_>>()?;

    let warnings = epidemics
        .iter()
        .filter(|s| s.reference_date.is_none())
        .map(|s| CompileWarning {
            school_year: s.replicate,
            message: "no reference date; excluded from alert evaluation".into(),
        })
        .collect();
    let dataset = SurveillanceDataset { maxlag: params.maxlag, rows: blocks.into_iter().flatten().collect() };
    Ok((dataset, warnings))
}

fn year_rows(series: &EpidemicSeries, absence: &DailyAbsence, params: &AbsenteeismParams) -> Vec<SurveillanceRow> {
    let reference = series.reference_date;
    (0..series.horizon() as usize)
        .map(|i| {
            let date = i as u32 + 1;
            let (sinterm, costerm) = seasonal_terms(date, params.year_length);
            let case = match params.case_definition {
                CaseDefinition::Reported => series.reported[i] >= 1,
                CaseDefinition::NewInfections => series.new_inf[i] >= 1,
            };
            let window = reference.is_some_and(|r| date <= r && date + params.window_days >= r);
            let lags = (0..=params.maxlag).map(|k| (i >= k).then(|| absence.pct_absent[i - k])).collect();
            SurveillanceRow {
                date,
                school_year: series.replicate,
                pct_absent: absence.pct_absent[i],
                absent: absence.absent[i],
                absent_sick: absence.absent_sick[i],
                new_inf: series.new_inf[i],
                reported_cases: series.reported[i],
                case,
                sinterm,
                costerm,
                window,
                ref_date: reference == Some(date),
                lags,
            }
        })
        .collect()
}

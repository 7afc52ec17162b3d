//! CSV and JSON readers/writers for every table the pipeline produces.
//!
//! Numbers are written in their shortest round-trip decimal form, flags as
//! `0`/`1`, and missing values as empty fields, so reading a written file
//! reproduces the in-memory values exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::epidemic::{compute_reference_date, EpidemicSeries, EpidemicSummary};
use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricGrid};
use crate::population::{Household, Individual, ParentType, Point};
use crate::surveillance::{column_names, SurveillanceDataset, SurveillanceRow, BASE_COLUMNS};

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::Reader::from_reader(BufReader::new(File::open(path)?)))
}

/// Field accessor with path/row context in errors.
struct Fields<'a> {
    path: &'a Path,
    line: usize,
    names: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn err(&self, column: usize, reason: impl std::fmt::Display) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            reason: match self.names.get(column) {
                Some(name) => format!("line {}, column `{}`: {reason}", self.line, name.trim()),
                None => format!("line {}, column {}: {reason}", self.line, column + 1),
            },
        }
    }

    fn raw(&self, column: usize) -> Result<&str> {
        self.record.get(column).map(str::trim).ok_or_else(|| self.err(column, "missing field"))
    }

    fn parse<T: FromStr>(&self, column: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(column)?;
        raw.parse().map_err(|e| self.err(column, format!("`{raw}`: {e}")))
    }

    fn parse_opt<T: FromStr>(&self, column: usize) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(column)?;
        if raw.is_empty() || raw == "NA" {
            Ok(None)
        } else {
            raw.parse().map(Some).map_err(|e| self.err(column, format!("`{raw}`: {e}")))
        }
    }

    fn flag(&self, column: usize) -> Result<bool> {
        match self.raw(column)? {
            "1" | "true" | "TRUE" => Ok(true),
            "0" | "false" | "FALSE" => Ok(false),
            other => Err(self.err(column, format!("`{other}` is not a 0/1 flag"))),
        }
    }
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected columns {expected:?}, found {found:?}"),
        });
    }
    Ok(())
}

fn for_each_record(path: &Path, expected: &[String], mut f: impl FnMut(&Fields<'_>) -> Result<()>) -> Result<()> {
    let mut rdr = reader(path)?;
    let names = rdr.headers()?.clone();
    check_header(path, &names, expected)?;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        f(&Fields { path, line: i + 2, names: &names, record: &record })?;
    }
    Ok(())
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub const HOUSEHOLD_COLUMNS: [&str; 9] =
    ["id", "catchment_id", "has_children", "parent_type", "num_children", "num_elem_children", "size", "x", "y"];

pub const INDIVIDUAL_COLUMNS: [&str; 7] =
    ["id", "household_id", "catchment_id", "is_elem_child", "school_id", "x", "y"];

pub const EPIDEMIC_COLUMNS: [&str; 7] = ["rep", "day", "S", "I", "R", "new_inf", "reported"];

pub fn write_households_csv(path: &Path, households: &[Household]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(HOUSEHOLD_COLUMNS)?;
    for h in households {
        let parent = match h.parent_type {
            Some(ParentType::Couple) => "couple",
            Some(ParentType::Lone) => "lone",
            None => "",
        };
        w.write_record([
            h.id.to_string(),
            h.catchment_id.to_string(),
            flag(h.has_children).to_string(),
            parent.to_string(),
            h.num_children.to_string(),
            h.num_elem_children.to_string(),
            h.size.to_string(),
            fmt_opt(h.location.map(|p| p.x)),
            fmt_opt(h.location.map(|p| p.y)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `households.csv`. Per-child school ids are not part of this table
/// and come back empty.
pub fn read_households_csv(path: &Path) -> Result<Vec<Household>> {
    let mut out = Vec::new();
    for_each_record(path, &strings(&HOUSEHOLD_COLUMNS), |f| {
        let parent_type = match f.raw(3)? {
            "couple" => Some(ParentType::Couple),
            "lone" => Some(ParentType::Lone),
            "" => None,
            other => return Err(f.err(3, format!("unknown parent type `{other}`"))),
        };
        let x: Option<f64> = f.parse_opt(7)?;
        let y: Option<f64> = f.parse_opt(8)?;
        out.push(Household {
            id: f.parse(0)?,
            catchment_id: f.parse(1)?,
            has_children: f.flag(2)?,
            parent_type,
            num_children: f.parse(4)?,
            num_elem_children: f.parse(5)?,
            size: f.parse(6)?,
            location: x.zip(y).map(|(x, y)| Point { x, y }),
            school_ids: Vec::new(),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_individuals_csv(path: &Path, individuals: &[Individual]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(INDIVIDUAL_COLUMNS)?;
    for p in individuals {
        w.write_record([
            p.id.to_string(),
            p.household_id.to_string(),
            p.catchment_id.to_string(),
            flag(p.is_elem_child).to_string(),
            fmt_opt(p.school_id),
            p.location.x.to_string(),
            p.location.y.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_individuals_csv(path: &Path) -> Result<Vec<Individual>> {
    let mut out = Vec::new();
    for_each_record(path, &strings(&INDIVIDUAL_COLUMNS), |f| {
        out.push(Individual {
            id: f.parse(0)?,
            household_id: f.parse(1)?,
            catchment_id: f.parse(2)?,
            is_elem_child: f.flag(3)?,
            school_id: f.parse_opt(4)?,
            location: Point { x: f.parse(5)?, y: f.parse(6)? },
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_epidemic_csv(path: &Path, series: &[EpidemicSeries]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(EPIDEMIC_COLUMNS)?;
    for s in series {
        for t in 0..s.new_inf.len() {
            w.write_record([
                s.replicate.to_string(),
                (t + 1).to_string(),
                s.susceptible[t].to_string(),
                s.infected[t].to_string(),
                s.removed[t].to_string(),
                s.new_inf[t].to_string(),
                s.reported[t].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `epidemic.csv`. The start day is the first day with new
/// infections and the reference date is recomputed from reported cases.
pub fn read_epidemic_csv(path: &Path, inf_period: u32) -> Result<Vec<EpidemicSeries>> {
    let mut out: Vec<EpidemicSeries> = Vec::new();
    for_each_record(path, &strings(&EPIDEMIC_COLUMNS), |f| {
        let rep: u32 = f.parse(0)?;
        let day: u32 = f.parse(1)?;
        if out.last().is_none_or(|s| s.replicate != rep) {
            out.push(EpidemicSeries {
                replicate: rep,
                start_day: 0,
                inf_period,
                susceptible: Vec::new(),
                infected: Vec::new(),
                removed: Vec::new(),
                new_inf: Vec::new(),
                reported: Vec::new(),
                reference_date: None,
            });
        }
        let s = out.last_mut().expect("pushed above");
        if day as usize != s.new_inf.len() + 1 {
            return Err(f.err(1, format!("replicate {rep}: expected day {}", s.new_inf.len() + 1)));
        }
        s.susceptible.push(f.parse(2)?);
        s.infected.push(f.parse(3)?);
        s.removed.push(f.parse(4)?);
        s.new_inf.push(f.parse(5)?);
        s.reported.push(f.parse(6)?);
        Ok(())
    })?;
    for s in &mut out {
        s.start_day = s.new_inf.iter().position(|&c| c > 0).map(|i| i as u32 + 1).unwrap_or(s.horizon());
        s.reference_date = compute_reference_date(&s.reported);
    }
    Ok(out)
}

pub fn write_surveillance_csv(path: &Path, dataset: &SurveillanceDataset) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(dataset.column_names())?;
    for r in &dataset.rows {
        let mut record = vec![
            r.date.to_string(),
            r.school_year.to_string(),
            r.pct_absent.to_string(),
            r.absent.to_string(),
            r.absent_sick.to_string(),
            r.new_inf.to_string(),
            r.reported_cases.to_string(),
            flag(r.case).to_string(),
            r.sinterm.to_string(),
            r.costerm.to_string(),
            flag(r.window).to_string(),
            flag(r.ref_date).to_string(),
        ];
        record.extend(r.lags.iter().map(|v| fmt_opt(*v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a surveillance table. The number of `lagK` columns after the
/// twelve base columns determines `maxlag`; this is also the ingestion path
/// for externally prepared data.
pub fn read_surveillance_csv(path: &Path) -> Result<SurveillanceDataset> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < BASE_COLUMNS.len() + 1 {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected at least {} columns", BASE_COLUMNS.len() + 1),
        });
    }
    let maxlag = headers.len() - BASE_COLUMNS.len() - 1;
    check_header(path, &headers, &column_names(maxlag))?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let f = Fields { path, line: i + 2, names: &headers, record: &record };
        let lags = (0..=maxlag).map(|k| f.parse_opt(BASE_COLUMNS.len() + k)).collect::<Result<Vec<Option<f64>>>>()?;
        rows.push(SurveillanceRow {
            date: f.parse(0)?,
            school_year: f.parse(1)?,
            pct_absent: f.parse(2)?,
            absent: f.parse(3)?,
            absent_sick: f.parse(4)?,
            new_inf: f.parse(5)?,
            reported_cases: f.parse(6)?,
            case: f.flag(7)?,
            sinterm: f.parse(8)?,
            costerm: f.parse(9)?,
            window: f.flag(10)?,
            ref_date: f.flag(11)?,
            lags,
        });
    }
    let mut seen = Vec::new();
    for r in &rows {
        if seen.last() != Some(&r.school_year) {
            if seen.contains(&r.school_year) {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    reason: format!("rows of school year {} are not contiguous", r.school_year),
                });
            }
            seen.push(r.school_year);
        }
    }
    Ok(SurveillanceDataset { maxlag, rows })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_epidemic_summary(path: &Path, summary: &EpidemicSummary) -> Result<()> {
    write_json(path, summary)
}

/// Metric matrix as CSV: one row per lag, one column per threshold.
pub fn write_metric_matrix(path: &Path, grid: &MetricGrid, metric: Metric) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["lag".to_string()];
    header.extend(grid.thresholds.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (lag, row) in grid.lags.iter().zip(grid.matrix(metric)) {
        let mut record = vec![lag.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metric matrix back as `(lags, thresholds, values)`.
/// Lags, thresholds and the lag-by-threshold values of one metric.
pub type MetricMatrix = (Vec<usize>, Vec<f64>, Vec<Vec<f64>>);

pub fn read_metric_matrix(path: &Path) -> Result<MetricMatrix> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let thresholds = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.trim().parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                reason: format!("bad threshold header `{h}`"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut lags = Vec::new();
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let f = Fields { path, line: i + 2, names: &headers, record: &record };
        lags.push(f.parse(0)?);
        values.push((1..=thresholds.len()).map(|c| f.parse(c)).collect::<Result<Vec<f64>>>()?);
    }
    Ok((lags, thresholds, values))
}

/// Summary of one metric across the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: f64,
    pub variance: f64,
    pub optimal_lag: Option<usize>,
    pub optimal_threshold: Option<f64>,
    pub minimum: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YearRecord {
    pub year: u32,
    pub ref_date: Option<u32>,
    #[serde(rename = "FAR")]
    pub far: Option<u32>,
    #[serde(rename = "ADD")]
    pub add: Option<u32>,
    #[serde(rename = "AATQ")]
    pub aatq: Option<u32>,
    #[serde(rename = "FATQ")]
    pub fatq: Option<u32>,
    #[serde(rename = "WAATQ")]
    pub waatq: Option<u32>,
    #[serde(rename = "WFATQ")]
    pub wfatq: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlertSummary {
    pub metrics: Vec<MetricSummary>,
    pub years: Vec<YearRecord>,
    pub failed_cells: Vec<(usize, f64)>,
}

impl AlertSummary {
    pub fn from_grid(grid: &MetricGrid) -> Self {
        let metrics = Metric::ALL
            .iter()
            .map(|&m| {
                let (mean, variance) = grid.cell_moments(m);
                let best = grid.best_for(m);
                MetricSummary {
                    metric: m.name(),
                    mean,
                    variance,
                    optimal_lag: best.map(|b| b.lag),
                    optimal_threshold: best.map(|b| b.threshold),
                    minimum: best.map(|b| b.value),
                }
            })
            .collect();
        let years = grid
            .years
            .iter()
            .map(|y| YearRecord {
                year: y.year,
                ref_date: y.ref_date,
                far: y.first_alerts[0],
                add: y.first_alerts[1],
                aatq: y.first_alerts[2],
                fatq: y.first_alerts[3],
                waatq: y.first_alerts[4],
                wfatq: y.first_alerts[5],
            })
            .collect();
        AlertSummary { metrics, years, failed_cells: grid.failed_cells() }
    }

    /// Plain-text rendering in the style of a console summary.
    pub fn render(&self) -> String {
        let mut s = String::from("Alert Metrics Summary\n=====================\n\n");
        let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
        for m in &self.metrics {
            s += &format!(
                "{} :\n  Mean: {:.4}\n  Variance: {:.4}\n  Optimal lag: {}\n  Optimal threshold: {}\n  Minimum value: {}\n\n",
                m.metric,
                m.mean,
                m.variance,
                opt(m.optimal_lag.map(|v| v.to_string())),
                opt(m.optimal_threshold.map(|v| v.to_string())),
                opt(m.minimum.map(|v| format!("{:.4}", v))),
            );
        }
        s += "Reference Dates and Model Selected Alert Dates:\n=====================\n\n";
        s += &format!(
            "{:>5} {:>8} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}\n",
            "year", "ref_date", "FAR", "ADD", "AATQ", "FATQ", "WAATQ", "WFATQ"
        );
        let cell = |v: Option<u32>| v.map(|d| d.to_string()).unwrap_or_else(|| "NA".into());
        for y in &self.years {
            s += &format!(
                "{:>5} {:>8} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}\n",
                y.year,
                cell(y.ref_date),
                cell(y.far),
                cell(y.add),
                cell(y.aatq),
                cell(y.fatq),
                cell(y.waatq),
                cell(y.wfatq)
            );
        }
        s
    }
}

pub const YEAR_TABLE_COLUMNS: [&str; 8] = ["year", "ref_date", "FAR", "ADD", "AATQ", "FATQ", "WAATQ", "WFATQ"];

pub fn write_year_table(path: &Path, summary: &AlertSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(YEAR_TABLE_COLUMNS)?;
    for y in &summary.years {
        w.write_record([
            y.year.to_string(),
            fmt_opt(y.ref_date),
            fmt_opt(y.far),
            fmt_opt(y.add),
            fmt_opt(y.aatq),
            fmt_opt(y.fatq),
            fmt_opt(y.waatq),
            fmt_opt(y.wfatq),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the per-year table as `(year, ref_date, first alert per metric)`.
pub type YearTableRow = (u32, Option<u32>, [Option<u32>; 6]);

pub fn read_year_table(path: &Path) -> Result<Vec<YearTableRow>> {
    let mut out = Vec::new();
    for_each_record(path, &strings(&YEAR_TABLE_COLUMNS), |f| {
        let mut alerts = [None; 6];
        for (k, slot) in alerts.iter_mut().enumerate() {
            *slot = f.parse_opt(2 + k)?;
        }
        out.push((f.parse(0)?, f.parse_opt(1)?, alerts));
        Ok(())
    })?;
    Ok(out)
}

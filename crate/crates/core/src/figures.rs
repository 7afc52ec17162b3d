//! Static SVG figures: the epidemic bar chart and the alert timeline.

use std::fmt::Write as _;
use std::path::Path;

use crate::epidemic::EpidemicSeries;
use crate::error::{Error, Result};
use crate::surveillance::SurveillanceRow;

const WIDTH: f64 = 800.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const PLOT_WIDTH: f64 = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;

const MARKER_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" \
         viewBox=\"0 0 {WIDTH} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn text(svg: &mut String, x: f64, y: f64, anchor: &str, body: &str) {
    let _ = writeln!(svg, "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{}</text>", escape(body));
}

/// A "nice" upper bound for an axis whose data maximum is `max`.
fn axis_max(max: f64) -> f64 {
    if max.is_nan() || max <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(max.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&v| v >= max).unwrap_or(10.0 * mag)
}

struct Panel {
    top: f64,
    height: f64,
    days: usize,
    y_max: f64,
}

impl Panel {
    fn x(&self, day: f64) -> f64 {
        MARGIN_LEFT + (day - 0.5) / self.days as f64 * PLOT_WIDTH
    }

    fn y(&self, v: f64) -> f64 {
        self.top + self.height - v / self.y_max * self.height
    }

    fn axes(&self, svg: &mut String, title: &str, y_label: &str) {
        let bottom = self.top + self.height;
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_LEFT}\" y1=\"{bottom:.2}\" x2=\"{:.2}\" y2=\"{bottom:.2}\" stroke=\"black\"/>",
            MARGIN_LEFT + PLOT_WIDTH
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_LEFT}\" y1=\"{:.2}\" x2=\"{MARGIN_LEFT}\" y2=\"{bottom:.2}\" stroke=\"black\"/>",
            self.top
        );
        for i in 0..=4 {
            let v = self.y_max * i as f64 / 4.0;
            text(svg, MARGIN_LEFT - 6.0, self.y(v) + 4.0, "end", &format_tick(v));
        }
        let step = tick_step(self.days);
        let mut day = step;
        while day <= self.days {
            text(svg, self.x(day as f64), bottom + 16.0, "middle", &day.to_string());
            day += step;
        }
        text(svg, MARGIN_LEFT + PLOT_WIDTH / 2.0, self.top - 8.0, "middle", title);
        let cy = self.top + self.height / 2.0;
        let _ = writeln!(
            svg,
            "<text x=\"14\" y=\"{cy:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {cy:.2})\">{}</text>",
            escape(y_label)
        );
    }

    fn bars(&self, svg: &mut String, values: &[u64], fill: &str) {
        let w = PLOT_WIDTH / self.days as f64;
        for (i, &v) in values.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let x = self.x(i as f64 + 1.0) - w / 2.0;
            let y = self.y(v as f64);
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{fill}\" data-day=\"{}\" data-value=\"{v}\"/>",
                self.top + self.height - y,
                i + 1
            );
        }
    }

    fn area(&self, svg: &mut String, values: &[f64], fill: &str, opacity: f64) {
        let bottom = self.top + self.height;
        let mut d = format!("M{:.2},{bottom:.2}", self.x(1.0));
        for (i, &v) in values.iter().enumerate() {
            let _ = write!(d, " L{:.2},{:.2}", self.x(i as f64 + 1.0), self.y(v));
        }
        let _ = write!(d, " L{:.2},{bottom:.2} Z", self.x(values.len() as f64));
        let _ = writeln!(svg, "<path d=\"{d}\" fill=\"{fill}\" fill-opacity=\"{opacity}\" stroke=\"none\"/>");
    }
}

fn tick_step(days: usize) -> usize {
    match days {
        0..=20 => 2,
        21..=60 => 10,
        61..=200 => 25,
        _ => 50,
    }
}

fn format_tick(v: f64) -> String {
    if v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}

/// Renders the two-panel epidemic figure (new infections on top, reported
/// cases below) as an SVG document.
pub fn render_epidemic_figure(series: &EpidemicSeries) -> Result<String> {
    let days = series.new_inf.len();
    if days == 0 {
        return Err(Error::InvalidConfig("epidemic figure needs a nonempty series".into()));
    }
    let panel_h = 220.0;
    let height = 2.0 * panel_h + 150.0;
    let mut svg = header(height);
    let top = Panel {
        top: 40.0,
        height: panel_h,
        days,
        y_max: axis_max(series.new_inf.iter().copied().max().unwrap_or(0) as f64),
    };
    let bottom = Panel {
        top: 40.0 + panel_h + 60.0,
        height: panel_h,
        days,
        y_max: axis_max(series.reported.iter().copied().max().unwrap_or(0) as f64),
    };
    svg += "<g id=\"new-infections\">\n";
    top.axes(&mut svg, &format!("Year {}: new infections", series.replicate), "New infections");
    top.bars(&mut svg, &series.new_inf, "#4c72b0");
    svg += "</g>\n<g id=\"reported-cases\">\n";
    bottom.axes(&mut svg, "Reported cases", "Reported cases");
    bottom.bars(&mut svg, &series.reported, "#dd8452");
    svg += "</g>\n";
    text(&mut svg, MARGIN_LEFT + PLOT_WIDTH / 2.0, height - 12.0, "middle", "Day");
    svg += "</svg>\n";
    Ok(svg)
}

pub fn emit_epidemic_figure(series: &EpidemicSeries, path: &Path) -> Result<()> {
    write_svg(path, &render_epidemic_figure(series)?)
}

/// Alert days of one metric's selected model, for the alert figure.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricAlerts {
    pub metric: String,
    pub lag: usize,
    pub threshold: f64,
    pub alert_days: Vec<u32>,
}

/// Renders the alert timeline for one school year: absenteeism percentage
/// and reported cases as areas, the reference date as a dashed line, and one
/// marker row per metric with alerts.
pub fn render_alert_figure(year_rows: &[SurveillanceRow], alerts: &[MetricAlerts], reference: u32) -> Result<String> {
    let days = year_rows.len();
    if days == 0 {
        return Err(Error::InvalidConfig("alert figure needs a nonempty school year".into()));
    }
    let shown: Vec<(usize, &MetricAlerts)> =
        alerts.iter().enumerate().filter(|(_, a)| !a.alert_days.is_empty()).collect();
    let omitted: Vec<&str> = alerts.iter().filter(|a| a.alert_days.is_empty()).map(|a| a.metric.as_str()).collect();
    let panel_h = 260.0;
    let row_h = 22.0;
    let markers_top = 40.0 + panel_h + 40.0;
    let legend_top = markers_top + row_h * shown.len() as f64 + 30.0;
    let height = legend_top + 40.0 + if omitted.is_empty() { 0.0 } else { 20.0 };

    let pct: Vec<f64> = year_rows.iter().map(|r| 100.0 * r.pct_absent).collect();
    let cases: Vec<f64> = year_rows.iter().map(|r| r.reported_cases as f64).collect();
    let pct_max = axis_max(pct.iter().copied().fold(0.0, f64::max));
    let case_max = axis_max(cases.iter().copied().fold(0.0, f64::max));
    let panel = Panel { top: 40.0, height: panel_h, days, y_max: pct_max };
    let year = year_rows[0].school_year;

    let mut svg = header(height);
    svg += "<g id=\"series\">\n";
    panel.axes(&mut svg, &format!("School year {year}"), "Absent (%)");
    panel.area(&mut svg, &pct, "#4c72b0", 0.5);
    let scaled: Vec<f64> = cases.iter().map(|c| c / case_max * pct_max).collect();
    panel.area(&mut svg, &scaled, "#dd8452", 0.6);
    text(&mut svg, MARGIN_LEFT + PLOT_WIDTH, panel.top - 8.0, "end", &format!("reported cases, max {case_max:.0}"));
    svg += "</g>\n";

    let first_date = year_rows[0].date;
    let ref_x = panel.x((reference - first_date + 1) as f64);
    let _ = writeln!(
        svg,
        "<line id=\"reference\" x1=\"{ref_x:.2}\" y1=\"{:.2}\" x2=\"{ref_x:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-dasharray=\"6,4\" data-day=\"{reference}\"/>",
        panel.top,
        markers_top + row_h * shown.len() as f64
    );

    svg += "<g id=\"alerts\">\n";
    for (row, (k, a)) in shown.iter().enumerate() {
        let cy = markers_top + row_h * (row as f64 + 0.5);
        let color = MARKER_COLORS[k % MARKER_COLORS.len()];
        text(&mut svg, MARGIN_LEFT - 6.0, cy + 4.0, "end", &a.metric);
        for &d in &a.alert_days {
            let cx = panel.x((d - first_date + 1) as f64);
            let _ = writeln!(
                svg,
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{color}\" data-metric=\"{}\" data-day=\"{d}\"/>",
                escape(&a.metric)
            );
        }
    }
    svg += "</g>\n<g id=\"legend\">\n";
    let mut x = MARGIN_LEFT;
    for (k, a) in &shown {
        let color = MARKER_COLORS[k % MARKER_COLORS.len()];
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>", x + 4.0, legend_top);
        let label = format!("{} (lag {}, threshold {})", a.metric, a.lag, a.threshold);
        text(&mut svg, x + 12.0, legend_top + 4.0, "start", &label);
        x += 12.0 + 7.0 * label.len() as f64;
        if x > WIDTH - 150.0 {
            x = MARGIN_LEFT;
        }
    }
    if !omitted.is_empty() {
        text(&mut svg, MARGIN_LEFT, legend_top + 24.0, "start", &format!("No alerts: {}", omitted.join(", ")));
    }
    svg += "</g>\n</svg>\n";
    Ok(svg)
}

pub fn emit_alert_figure(
    year_rows: &[SurveillanceRow],
    alerts: &[MetricAlerts],
    reference: u32,
    path: &Path,
) -> Result<()> {
    write_svg(path, &render_alert_figure(year_rows, alerts, reference)?)
}

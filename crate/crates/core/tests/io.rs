mod common;

use std::fs;

use sentinel_core::io;
use sentinel_core::metrics::Metric;
use sentinel_core::pipeline::{self, compute, MatrixFormat, RunOutputs};
use tempfile::tempdir;

fn outputs() -> RunOutputs {
    compute(&common::small_config()).unwrap()
}

#[test]
fn population_tables_round_trip() {
    let out = outputs();
    let dir = tempdir().unwrap();
    pipeline::write_population(dir.path(), &out.population).unwrap();
    let back = pipeline::read_population(dir.path()).unwrap();
    assert_eq!(back.individuals, out.population.individuals);
    assert_eq!(back.households.len(), out.population.households.len());
    for (a, b) in back.households.iter().zip(&out.population.households) {
        // School links are carried by the individuals table.
        assert_eq!(a.school_ids, Vec::<u32>::new());
        let mut b = b.clone();
        b.school_ids.clear();
        assert_eq!(a, &b);
    }
}

#[test]
fn epidemic_table_round_trips() {
    let out = outputs();
    let dir = tempdir().unwrap();
    let path = dir.path().join("epidemic.csv");
    io::write_epidemic_csv(&path, &out.epidemics).unwrap();
    let back = io::read_epidemic_csv(&path, common::small_config().epidemic.inf_period).unwrap();
    assert_eq!(back, out.epidemics);
}

#[test]
fn surveillance_table_round_trips_bit_for_bit() {
    let out = outputs();
    let dir = tempdir().unwrap();
    let path = dir.path().join("surveillance.csv");
    io::write_surveillance_csv(&path, &out.dataset).unwrap();
    let back = io::read_surveillance_csv(&path).unwrap();
    assert_eq!(back.maxlag, out.dataset.maxlag);
    assert_eq!(back.rows.len(), out.dataset.rows.len());
    for (a, b) in back.rows.iter().zip(&out.dataset.rows) {
        assert_eq!(a.pct_absent.to_bits(), b.pct_absent.to_bits());
        assert_eq!(a.sinterm.to_bits(), b.sinterm.to_bits());
        assert_eq!(a.costerm.to_bits(), b.costerm.to_bits());
        assert_eq!(a, b);
    }
    let header = fs::read_to_string(&path).unwrap();
    let first = header.lines().next().unwrap();
    assert_eq!(first.split(',').count(), 13 + out.dataset.maxlag);
    assert_eq!(first.split(',').collect::<Vec<_>>(), out.dataset.column_names());
    // Writing the re-read table reproduces the file byte for byte.
    let again = dir.path().join("again.csv");
    io::write_surveillance_csv(&again, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn metric_matrices_and_year_table_round_trip() {
    let out = outputs();
    let dir = tempdir().unwrap();
    for metric in Metric::ALL {
        let path = dir.path().join(format!("metric_{}.csv", metric.name()));
        io::write_metric_matrix(&path, &out.grid, metric).unwrap();
        let (lags, thresholds, values) = io::read_metric_matrix(&path).unwrap();
        assert_eq!(lags, out.grid.lags);
        assert_eq!(thresholds, out.grid.thresholds);
        let expect = out.grid.matrix(metric);
        for (row, e) in values.iter().zip(&expect) {
            let bits: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let expect_bits: Vec<u64> = e.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, expect_bits, "{}", metric.name());
        }
    }
    let summary = io::AlertSummary::from_grid(&out.grid);
    let path = dir.path().join("alert_years.csv");
    io::write_year_table(&path, &summary).unwrap();
    let back = io::read_year_table(&path).unwrap();
    assert_eq!(back.len(), out.grid.years.len());
    for (row, y) in back.iter().zip(&out.grid.years) {
        assert_eq!((row.0, row.1, row.2), (y.year, y.ref_date, y.first_alerts));
    }
    assert!(fs::read_to_string(&path).unwrap().lines().nth(1).unwrap().contains(",,"));
}

#[test]
fn json_matrices_match_csv_matrices() {
    let out = outputs();
    let csv_dir = tempdir().unwrap();
    let json_dir = tempdir().unwrap();
    pipeline::write_evaluation(csv_dir.path(), &out.grid, MatrixFormat::Csv).unwrap();
    pipeline::write_evaluation(json_dir.path(), &out.grid, MatrixFormat::Json).unwrap();
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(json_dir.path().join(pipeline::METRIC_MATRICES_FILE)).unwrap())
            .unwrap();
    for metric in Metric::ALL {
        let (_, _, values) =
            io::read_metric_matrix(&csv_dir.path().join(format!("metric_{}.csv", metric.name()))).unwrap();
        let from_json: Vec<Vec<f64>> = serde_json::from_value(doc["matrices"][metric.name()].clone()).unwrap();
        assert_eq!(values, from_json, "{}", metric.name());
    }
    let selected = pipeline::read_selected_alerts(&csv_dir.path().join(pipeline::SELECTED_ALERTS_FILE)).unwrap();
    assert_eq!(selected, pipeline::selected_alerts(&out.grid));
}

#[test]
fn malformed_tables_are_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("surveillance.csv");
    fs::write(&path, "Date,School_Year\n1,1\n").unwrap();
    assert!(io::read_surveillance_csv(&path).is_err());
    let path = dir.path().join("individuals.csv");
    fs::write(&path, "id,household_id,catchment_id,is_elem_child,school_id,x,y\n1,1,1,maybe,,0,0\n").unwrap();
    let err = io::read_individuals_csv(&path).unwrap_err();
    assert!(err.to_string().contains("is_elem_child"), "{err}");
    assert!(io::read_epidemic_csv(&dir.path().join("missing.csv"), 4).is_err());
}

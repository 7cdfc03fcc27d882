//! Checks, run reports and their JSON/CSV artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Record,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "==")]
    Equal,
    #[serde(rename = "record")]
    Record,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::Below => "<",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
            Relation::Equal => "==",
            Relation::Record => "record",
        }
    }
}

/// One measured quantity, compared against a bound unless it is a record.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub relation: Relation,
    pub bound: Option<f64>,
}

impl Check {
    pub fn compare(name: impl Into<String>, measured: f64, relation: Relation, bound: f64) -> Self {
        let ok = match relation {
            Relation::AtMost => measured <= bound,
            Relation::Below => measured < bound,
            Relation::AtLeast => measured >= bound,
            Relation::Above => measured > bound,
            Relation::Equal => measured == bound,
            Relation::Record => true,
        };
        Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured,
            relation,
            bound: Some(bound),
        }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::compare(name, measured, Relation::AtMost, bound)
    }

    pub fn record(name: impl Into<String>, measured: f64) -> Self {
        Check { name: name.into(), status: Status::Record, measured, relation: Relation::Record, bound: None }
    }
}

/// Fixed-column CSV series of one experiment.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Shortest round-trip scientific notation.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

/// `num`, or empty for a missing value.
pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Emit {
    Json,
    Csv,
    Both,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub experiment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub wall_time_s: f64,
    pub artifacts: Vec<PathBuf>,
    pub details: serde_json::Value,
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Output { path: dir.into(), msg: e.to_string() })?;
    }
    fs::write(path, text).map_err(|e| CliError::Output { path: path.into(), msg: e.to_string() })
}

/// Writes the CSV series and the JSON report, recording both paths in the report.
pub fn emit(report: &mut RunReport, table: &Table, emit: Emit) -> Result<(), CliError> {
    let dir = report.config.output.dir.clone();
    let stem = report.config.stem();
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    if matches!(emit, Emit::Csv | Emit::Both) {
        let text = table.to_csv().map_err(|e| CliError::Output { path: csv_path.clone(), msg: e.to_string() })?;
        write_file(&csv_path, &text)?;
        report.artifacts.push(csv_path);
    }
    if matches!(emit, Emit::Json | Emit::Both) {
        report.artifacts.push(json_path.clone());
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        write_file(&json_path, &text)?;
    }
    Ok(())
}

/// Human-readable lines for stdout.
pub fn summary_lines(report: &RunReport) -> Vec<String> {
    let mut out = vec![format!(
        "{} [{}] {} in {:.2} s",
        report.experiment,
        report.label.as_deref().unwrap_or(""),
        if report.passed { "PASS" } else { "FAIL" },
        report.wall_time_s
    )];
    for c in &report.checks {
        let status = match c.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Record => "    ",
        };
        let bound = c.bound.map(|b| format!(" {} {b:e}", c.relation.symbol())).unwrap_or_default();
        out.push(format!("  {status} {} = {:e}{bound}", c.name, c.measured));
    }
    for a in &report.artifacts {
        out.push(format!("  wrote {}", a.display()));
    }
    out
}

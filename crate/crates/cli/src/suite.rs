//! Runs every config in a directory, aggregating failures instead of stopping.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{num, opt, write_file, Check, Emit, Status, Table, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Pass,
    Fail,
    Error,
}

impl EntryStatus {
    fn word(self) -> &'static str {
        match self {
            EntryStatus::Pass => "PASS",
            EntryStatus::Fail => "FAIL",
            EntryStatus::Error => "ERROR",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub config: PathBuf,
    pub label: Option<String>,
    pub experiment: Option<String>,
    pub status: EntryStatus,
    pub checks: Vec<Check>,
    pub wall_time_s: f64,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub dir: PathBuf,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    /// 2 if any config could not run, else 1 if any check failed, else 0.
    pub fn exit_code(&self) -> u8 {
        if self.errors > 0 {
            2
        } else if self.failed > 0 {
            1
        } else {
            0
        }
    }
}

fn configs_in(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|source| CliError::Io { path: dir.into(), source })?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "toml") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn run_one(path: &Path, out: &Path, emit: Emit) -> SuiteEntry {
    let failed = |label, experiment, e: CliError| SuiteEntry {
        config: path.into(),
        label,
        experiment,
        status: EntryStatus::Error,
        checks: Vec::new(),
        wall_time_s: 0.0,
        artifacts: Vec::new(),
        error: Some(e.to_string()),
    };
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => return failed(None, None, e),
    };
    cfg.output.dir = out.into();
    let (label, experiment) = (cfg.label.clone(), Some(cfg.experiment.name().to_string()));
    match crate::run(cfg, emit) {
        Ok(r) => SuiteEntry {
            config: path.into(),
            label,
            experiment,
            status: if r.passed { EntryStatus::Pass } else { EntryStatus::Fail },
            checks: r.checks,
            wall_time_s: r.wall_time_s,
            artifacts: r.artifacts,
            error: None,
        },
        Err(e) => failed(label, experiment, e),
    }
}

fn table(report: &SuiteReport) -> Table {
    let mut t = Table::new(&[
        "config", "label", "experiment", "status", "check", "check_status", "measured", "relation", "bound",
    ]);
    for e in &report.entries {
        let head = vec![
            e.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            e.label.clone().unwrap_or_default(),
            e.experiment.clone().unwrap_or_default(),
            e.status.word().to_lowercase(),
        ];
        if e.checks.is_empty() {
            let mut row = head.clone();
            row.extend(["error".into(), "error".into(), String::new(), String::new(), String::new()]);
            t.push(row);
        }
        for c in &e.checks {
            let status = match c.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::Record => "record",
            };
            let mut row = head.clone();
            row.extend([c.name.clone(), status.into(), num(c.measured), c.relation.symbol().into(), opt(c.bound)]);
            t.push(row);
        }
    }
    t
}

fn print_summary(report: &SuiteReport) {
    println!("{:<28} {:<6} {:>9}  label", "config", "status", "time");
    for e in &report.entries {
        let name = e.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        println!(
            "{name:<28} {:<6} {:>7.2} s  {}",
            e.status.word(),
            e.wall_time_s,
            e.label.as_deref().unwrap_or("")
        );
        for c in e.checks.iter().filter(|c| c.status != Status::Record) {
            let mark = if c.status == Status::Pass { "pass" } else { "FAIL" };
            let bound = c.bound.map(|b| format!(" {} {b:e}", c.relation.symbol())).unwrap_or_default();
            println!("    {mark} {} = {:e}{bound}", c.name, c.measured);
        }
        if let Some(err) = &e.error {
            println!("    error: {err}");
        }
    }
    println!(
        "suite: {} passed, {} failed, {} errors ({} configs)",
        report.passed,
        report.failed,
        report.errors,
        report.entries.len()
    );
}

/// Runs the suite, writes suite.json and suite.csv under `out`, and returns the exit code.
pub fn run_suite(dir: &Path, out: &Path, emit: Emit) -> Result<u8, CliError> {
    let configs = configs_in(dir)?;
    if configs.is_empty() {
        eprintln!("warning: no *.toml configs in {}", dir.display());
    }
    let entries: Vec<SuiteEntry> = configs.iter().map(|p| run_one(p, out, emit)).collect();
    let count = |s| entries.iter().filter(|e| e.status == s).count();
    let report = SuiteReport {
        schema_version: SCHEMA_VERSION,
        dir: dir.into(),
        passed: count(EntryStatus::Pass),
        failed: count(EntryStatus::Fail),
        errors: count(EntryStatus::Error),
        entries,
    };
    print_summary(&report);
    if matches!(emit, Emit::Csv | Emit::Both) {
        let path = out.join("suite.csv");
        let text = table(&report).to_csv().map_err(|e| CliError::Output { path: path.clone(), msg: e.to_string() })?;
        write_file(&path, &text)?;
    }
    if matches!(emit, Emit::Json | Emit::Both) {
        write_file(&out.join("suite.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(report.exit_code())
}

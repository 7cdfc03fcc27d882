//! `paralab`: runs configured experiments and writes JSON reports and CSV series.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 on a
//! configuration or I/O error. `PARALAB_WORKERS` sets the worker thread count.

mod config;
mod error;
mod experiments;
mod report;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{Experiment, ExperimentConfig};
use error::CliError;
use report::{Emit, RunReport, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "paralab", version, about = "Paraproduct and paralinearization experiments on discrete scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        args: Overrides,
    },
    /// Run every *.toml config in a directory and print a summary table.
    Suite {
        dir: PathBuf,
        /// Directory for suite.json and suite.csv.
        #[arg(long, default_value = "out/suite")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        emit: Emit,
    },
    /// Doubling, Poincaré, skewness and heat kernel diagnostics.
    Geometry(ExperimentArgs),
    /// Scalar normalization and reconstruction identity.
    Reconstruct(ExperimentArgs),
    /// Product decomposition residuals.
    Decompose(ExperimentArgs),
    /// Sobolev norms, Riesz bounds and the structural identity.
    Sobolev(ExperimentArgs),
    /// Remainder of a nonlinearity and its five-term split.
    Paralinearize(ExperimentArgs),
    /// Smoothing ratios of the remainder over lacunary inputs.
    Smoothing(ExperimentArgs),
    /// Directional regularity for a manufactured equation.
    Propagate(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Config file; built-in defaults are used when omitted.
    config: Option<PathBuf>,
    #[command(flatten)]
    args: Overrides,
}

/// Flags that override config fields.
#[derive(Args)]
struct Overrides {
    /// Scene kind: circle, torus2, heisenberg or graph.
    #[arg(long)]
    scene: Option<String>,
    /// Grid sizes, e.g. 16,16 for torus2.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Scene file for graph scenes.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Multiplier order N.
    #[arg(long)]
    order: Option<u32>,
    #[arg(long)]
    nodes_per_decade: Option<usize>,
    /// Decades of quadrature padding beyond the spectrum.
    #[arg(long)]
    pad: Option<f64>,
    /// 1 for midpoint cells, 2..=5 for Gauss–Legendre cells.
    #[arg(long)]
    points_per_cell: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Directional exponents for propagate, comma-separated.
    #[arg(long, value_delimiter = ',')]
    rho_values: Option<Vec<f64>>,
    /// Nonlinearity tag: square, cube, sin, tanh, expm1 or poly.
    #[arg(long = "nonlinearity", short = 'F')]
    nonlinearity: Option<String>,
    /// Polynomial coefficients for `poly`, lowest degree first.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    coeffs: Option<Vec<f64>>,
    /// Inclusive depth range, e.g. 3,6.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    k_range: Option<Vec<usize>>,
    /// Number of seeded functions or pairs.
    #[arg(long)]
    samples: Option<usize>,
    /// Structural identity exponent for sobolev.
    #[arg(long)]
    beta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// File stem of the JSON and CSV artifacts.
    #[arg(long)]
    stem: Option<String>,
    #[arg(long, value_enum, default_value = "both")]
    emit: Emit,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = &self.scene {
            cfg.scene.kind = v.clone();
        }
        if let Some(v) = &self.sizes {
            cfg.scene.sizes = v.clone();
        }
        if let Some(v) = &self.graph {
            cfg.scene.kind = "graph".into();
            cfg.scene.path = Some(v.clone());
        }
        if let Some(v) = self.order {
            cfg.multiplier.order = v;
        }
        if let Some(v) = self.nodes_per_decade {
            cfg.quadrature.nodes_per_decade = v;
        }
        if let Some(v) = self.pad {
            cfg.quadrature.pad = v;
        }
        if let Some(v) = self.points_per_cell {
            cfg.quadrature.points_per_cell = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        let p = &mut cfg.params;
        p.s = self.s.or(p.s);
        p.p = self.p.or(p.p);
        p.q = self.q.or(p.q);
        p.eps = self.eps.or(p.eps);
        p.rho = self.rho.or(p.rho);
        p.beta = self.beta.or(p.beta);
        p.samples = self.samples.or(p.samples);
        if let Some(v) = &self.rho_values {
            p.rho_values = Some(v.clone());
        }
        if let Some(v) = &self.nonlinearity {
            p.nonlinearity = Some(v.clone());
        }
        if let Some(v) = &self.coeffs {
            p.coeffs = Some(v.clone());
        }
        if let Some(v) = &self.k_range {
            p.k_range = Some([v[0], v[1]]);
        }
        if let Some(v) = &self.out {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = &self.stem {
            cfg.output.stem = Some(v.clone());
        }
    }
}

/// Validates, runs and emits one config.
pub fn run(mut cfg: ExperimentConfig, emit: Emit) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let scene = cfg.validate()?;
    let out = experiments::execute(&cfg, scene)?;
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().into(),
        label: cfg.label.clone(),
        passed: out.checks.iter().all(|c| c.status != report::Status::Fail),
        checks: out.checks,
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: Vec::new(),
        details: out.details,
        config: cfg,
    };
    report::emit(&mut report, &out.table, emit)?;
    Ok(report)
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PARALAB_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config { field: "PARALAB_WORKERS".into(), reason: format!("expected a positive integer, got `{raw}`") })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config { field: "PARALAB_WORKERS".into(), reason: e.to_string() })
}

fn single(config: Option<PathBuf>, experiment: Option<Experiment>, args: &Overrides) -> Result<RunReport, CliError> {
    let mut cfg = match &config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(experiment.expect("subcommand names an experiment")),
    };
    if let Some(e) = experiment {
        cfg.experiment = e;
    }
    args.apply(&mut cfg);
    run(cfg, args.emit)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let (config, experiment, args) = match cli.command {
        Command::Suite { dir, out, emit } => {
            return match suite::run_suite(&dir, &out, emit) {
                Ok(code) => ExitCode::from(code),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Command::Run { config, args } => (Some(config), None, args),
        Command::Geometry(a) => (a.config, Some(Experiment::Geometry), a.args),
        Command::Reconstruct(a) => (a.config, Some(Experiment::Reconstruct), a.args),
        Command::Decompose(a) => (a.config, Some(Experiment::Decompose), a.args),
        Command::Sobolev(a) => (a.config, Some(Experiment::Sobolev), a.args),
        Command::Paralinearize(a) => (a.config, Some(Experiment::Paralinearize), a.args),
        Command::Smoothing(a) => (a.config, Some(Experiment::Smoothing), a.args),
        Command::Propagate(a) => (a.config, Some(Experiment::Propagate), a.args),
    };
    match single(config, experiment, &args) {
        Ok(report) => {
            for line in report::summary_lines(&report) {
                println!("{line}");
            }
            ExitCode::from(if report.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

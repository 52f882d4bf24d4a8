//! `netexp`: estimation, simulation and exact checks for network experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use netexp::config::{AnalysisConfig, DistanceSpec, LipschitzConfig, VarianceMethod};
use netexp::io::{self, DatasetPaths};
use netexp::report::{self, RunOptions};
use netexp::sim::{run_simulation, SimGrid, SimResultRow};
use netexp::{Error, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "netexp", version, about = "Design-based inference for network experiments")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Confidence intervals cover with probability 1 - alpha.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Monte Carlo draws for cross moments that cannot be enumerated.
    #[arg(long, global = true)]
    mc_draws: Option<usize>,
    /// Omit timestamps so identical inputs give identical bytes.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Directory holding units.csv, keymap.csv, assignment.csv and outcomes.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    units: Option<PathBuf>,
    #[arg(long)]
    keymap: Option<PathBuf>,
    #[arg(long)]
    assignment: Option<PathBuf>,
    #[arg(long)]
    outcomes: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self, observed: bool) -> Result<DatasetPaths> {
        let base = self.data.as_deref().map(DatasetPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, default: Option<PathBuf>, name: &str| {
            explicit
                .clone()
                .or(default)
                .ok_or_else(|| Error::Schema(format!("missing --{name} (or --data)")))
        };
        let units = pick(&self.units, base.as_ref().map(|b| b.units.clone()), "units")?;
        let keymap = pick(&self.keymap, base.as_ref().map(|b| b.keymap.clone()), "keymap")?;
        let optional = |explicit: &Option<PathBuf>, default: Option<PathBuf>| {
            explicit.clone().or(default.filter(|p| p.exists()))
        };
        let mut assignment = optional(&self.assignment, base.as_ref().and_then(|b| b.assignment.clone()));
        let mut outcomes = optional(&self.outcomes, base.as_ref().and_then(|b| b.outcomes.clone()));
        if observed {
            assignment = Some(pick(&assignment, None, "assignment")?);
            outcomes = Some(pick(&outcomes, None, "outcomes")?);
        }
        Ok(DatasetPaths {
            units,
            keymap,
            assignment,
            outcomes,
        })
    }
}

fn parse_keyword<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Overrides of the configuration's variance section.
#[derive(Args, Debug, Clone)]
struct VarianceArgs {
    /// stratified, additive, lipschitz or cr-special.
    #[arg(long, value_parser = parse_keyword::<VarianceMethod>)]
    variance: Option<VarianceMethod>,
    /// Lipschitz constant is this value over sqrt(n).
    #[arg(long)]
    lipschitz_c: Option<f64>,
    #[arg(long, value_parser = parse_keyword::<DistanceSpec>)]
    lipschitz_dist: Option<DistanceSpec>,
    /// Bound on the absolute value of every potential outcome.
    #[arg(long)]
    outcome_bound: Option<f64>,
}

impl VarianceArgs {
    fn apply(&self, cfg: &mut AnalysisConfig) -> Result<()> {
        if let Some(v) = self.variance {
            cfg.variance = v;
        }
        if self.lipschitz_c.is_none() && self.lipschitz_dist.is_none() && self.outcome_bound.is_none() {
            return Ok(());
        }
        let base = cfg.lipschitz.clone();
        let c = self.lipschitz_c.or(base.as_ref().map(|l| l.c));
        let bound = self.outcome_bound.or(base.as_ref().map(|l| l.outcome_bound));
        let (Some(c), Some(outcome_bound)) = (c, bound) else {
            return Err(Error::Schema(
                "Lipschitz settings need both --lipschitz-c and --outcome-bound".into(),
            ));
        };
        cfg.lipschitz = Some(LipschitzConfig {
            c,
            distance: self.lipschitz_dist.or(base.map(|l| l.distance)).unwrap_or_default(),
            outcome_bound,
        });
        Ok(())
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Point estimates, variances and confidence intervals.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Analysis configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        variance: VarianceArgs,
    },
    /// Monte Carlo study on synthetic populations; writes a results CSV.
    Simulate {
        /// Simulation grid (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Directory for long-format plot data.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Exact estimands and estimator moments under a potential-outcome table.
    Oracle {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: PathBuf,
        /// Potential outcomes: cluster_id,unit_id,assignment,y.
        #[arg(long)]
        table: PathBuf,
    },
    /// Estimates over a grid of group shares.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        variance: VarianceArgs,
        /// Comma-separated group shares; the config's sweep section when absent.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        /// CSV of group share against estimate and interval bounds.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Checks the input tables and lists every violation.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    exit_code: i32,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ValidateOutput {
    valid: bool,
    clusters: usize,
    violations: Vec<io::Violation>,
}

#[derive(Serialize)]
struct PlotRow<'a> {
    #[serde(rename = "K")]
    k: usize,
    m_k: usize,
    model: &'a str,
    intervention: &'a str,
    estimand: &'a str,
    estimator: &'a str,
    metric: &'a str,
    value: String,
}

fn read_config(path: &Path) -> Result<AnalysisConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    AnalysisConfig::from_json(&text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A single value as an object, several as an array.
fn one_or_array<T: Serialize>(items: &[T]) -> Result<String> {
    match items {
        [one] => io::to_json(one),
        many => io::to_json(&many),
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let opts = RunOptions {
        alpha: cli.alpha,
        seed: cli.seed.unwrap_or(0),
        mc_draws: cli.mc_draws,
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Estimate {
            data,
            config,
            variance,
        } => {
            let bundle = io::load(&data.paths(true)?)?;
            let mut cfg = read_config(config)?;
            variance.apply(&mut cfg)?;
            let mut reports = report::run_estimate(&bundle, &cfg, &opts)?;
            if !cli.deterministic {
                let t = now();
                for r in &mut reports {
                    r.generated_at_unix = Some(t);
                }
            }
            emit(out, &one_or_array(&reports)?)?;
        }
        Command::Simulate {
            config,
            reps,
            plot_data,
        } => {
            let text = fs::read_to_string(config)
                .map_err(|e| Error::Schema(format!("cannot read {}: {e}", config.display())))?;
            let mut grid: SimGrid = serde_json::from_str(&text)
                .map_err(|e| Error::Schema(format!("simulation config: {e}")))?;
            if let Some(r) = reps {
                grid.reps = *r;
            }
            if let Some(s) = cli.seed {
                grid.seed = s;
            }
            if let Some(a) = cli.alpha {
                grid.alpha = a;
            }
            let mut rows: Vec<SimResultRow> = Vec::new();
            for c in grid.configs() {
                let summary = run_simulation(&c)?;
                for w in &summary.warnings {
                    eprintln!("warning: K={} m_k={} {}: {w}", c.k, c.m, c.model.label());
                }
                rows.extend(summary.rows);
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.write_record([
                    r.k.to_string(),
                    r.m_k.to_string(),
                    r.model.clone(),
                    r.intervention.clone(),
                    r.estimand.clone(),
                    r.estimator.clone(),
                    io::fmt_f64(r.bias),
                    io::fmt_f64(r.emp_se),
                    io::fmt_f64(r.mean_se_hat),
                    io::fmt_f64(r.coverage),
                    io::fmt_f64(r.ci_length),
                    r.reps_ok.to_string(),
                    r.reps_failed.to_string(),
                ])
                .map_err(Error::from)?;
            }
            let body = String::from_utf8(w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            let header = "K,m_k,model,intervention,estimand,estimator,bias,emp_se,mean_se_hat,coverage,ci_length,reps_ok,reps_failed\n";
            emit(out, &format!("{header}{body}"))?;
            if let Some(dir) = plot_data {
                fs::create_dir_all(dir)?;
                let mut long = Vec::new();
                for r in &rows {
                    for (metric, v) in [
                        ("bias", r.bias),
                        ("emp_se", r.emp_se),
                        ("mean_se_hat", r.mean_se_hat),
                        ("coverage", r.coverage),
                        ("ci_length", r.ci_length),
                    ] {
                        long.push(PlotRow {
                            k: r.k,
                            m_k: r.m_k,
                            model: &r.model,
                            intervention: &r.intervention,
                            estimand: &r.estimand,
                            estimator: &r.estimator,
                            metric,
                            value: io::fmt_f64(v),
                        });
                    }
                }
                io::write_csv(&dir.join("simulation_long.csv"), &long)?;
            }
        }
        Command::Oracle {
            data,
            config,
            table,
        } => {
            let bundle = io::load(&data.paths(false)?)?;
            let cfg = read_config(config)?;
            let table = io::read_potentials(table, &bundle.frame)?;
            let reports = report::run_oracle(&bundle.frame, &bundle.keys, &cfg, &table, &opts)?;
            emit(out, &one_or_array(&reports)?)?;
        }
        Command::Sweep {
            data,
            config,
            variance,
            alphas,
            plot_data,
        } => {
            let bundle = io::load(&data.paths(true)?)?;
            let mut cfg = read_config(config)?;
            variance.apply(&mut cfg)?;
            let grid = if alphas.is_empty() {
                cfg.sweep
                    .as_ref()
                    .map(|s| s.alphas.clone())
                    .ok_or_else(|| Error::Schema("no group shares: pass --alphas or a sweep section".into()))?
            } else {
                alphas.clone()
            };
            let mut points = report::run_sweep(&bundle, &cfg, &grid, &opts)?;
            if !cli.deterministic {
                let t = now();
                for r in points.iter_mut().flat_map(|p| p.reports.iter_mut()) {
                    r.generated_at_unix = Some(t);
                }
            }
            for p in &points {
                if let Some(e) = &p.error {
                    eprintln!("warning: group share {}: {}", p.group_alpha, e.message);
                }
            }
            emit(out, &io::to_json(&points)?)?;
            if let Some(path) = plot_data {
                let rows: Vec<[String; 8]> = report::sweep_rows(&points)
                    .into_iter()
                    .map(|r| {
                        let f = |x: Option<f64>| x.map(io::fmt_f64).unwrap_or_default();
                        [
                            io::fmt_f64(r.group_alpha),
                            r.estimand,
                            r.estimator,
                            f(r.point),
                            f(r.se),
                            f(r.ci_lo),
                            f(r.ci_hi),
                            r.status,
                        ]
                    })
                    .collect();
                let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
                w.write_record(["group_alpha", "estimand", "estimator", "point", "se", "ci_lo", "ci_hi", "status"])
                    .map_err(Error::from)?;
                for r in rows {
                    w.write_record(&r).map_err(Error::from)?;
                }
                w.flush()?;
            }
        }
        Command::Validate { data } => {
            let (bundle, report) = io::validate(&data.paths(false)?)?;
            let code = match report.clone().into_result() {
                Ok(()) => 0,
                Err(e) => e.exit_code(),
            };
            let output = ValidateOutput {
                valid: report.is_ok(),
                clusters: bundle.map(|b| b.frame.k()).unwrap_or(0),
                violations: report.violations,
            };
            emit(out, &io::to_json(&output)?)?;
            return Ok(code);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let body = ErrorReport {
                error: ErrorBody {
                    code: e.code(),
                    exit_code: e.exit_code(),
                    message: e.to_string(),
                },
            };
            match serde_json::to_string(&body) {
                Ok(s) => eprintln!("{s}"),
                Err(_) => eprintln!("{e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

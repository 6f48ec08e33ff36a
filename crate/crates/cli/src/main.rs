//! Command-line front end: fits, population geometry, `E_δ` studies and
//! Monte Carlo risk experiments.
//!
//! Exit status is 0 on success, 2 for configuration or input problems and
//! 3 for numerical failures.

use addsieve::estimator::{sup_grid, PreparedEstimator};
use addsieve::harness::{
    self, fit_rate, parse_estimator_config, parse_experiment_config, read_risk_csv, report::aggregate,
    write_edelta_csv, write_risk_csv, RiskReport,
};
use addsieve::sumspace::geometry;
use addsieve::{Dataset, Error, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "addsieve", version, about = "Series estimation of one additive component under dependent designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the two-stage estimator to a CSV with columns x1,...,xq,y.
    Fit {
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Write (grid point, estimate) pairs here.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Population minimal angle, Hilbert-Schmidt norm and spectrum of a model.
    Geometry {
        #[arg(long)]
        config: PathBuf,
        /// Write the eigen-spectrum as CSV.
        #[arg(long)]
        spectrum_out: Option<PathBuf>,
    },
    /// Failure frequency of the Gram concentration event over the n grid.
    Edelta {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the risk experiment and write risk.csv and summary.toml.
    SimulateRisk {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the log-log rate to an existing risk.csv.
    Rates {
        #[arg(long = "in")]
        input: PathBuf,
        /// Smoothness of the target, to report the theoretical slope.
        #[arg(long)]
        alpha1: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit { data, config, grid_out } => {
            let config = parse_estimator_config(&config)?;
            let data = Dataset::from_csv(&data)?;
            let fit = PreparedEstimator::new(config)?.fit(&data)?;
            print!("{}", fit.to_text()?);
            if let Some(path) = grid_out {
                let points = sup_grid(&fit.w1);
                let values = fit.evaluate(&points);
                let mut w = csv::Writer::from_path(&path)?;
                let mut header: Vec<String> = (1..=points.ncols()).map(|j| format!("x{j}")).collect();
                header.push("estimate".into());
                w.write_record(&header)?;
                for (i, v) in values.iter().enumerate() {
                    let mut record: Vec<String> = points.row(i).iter().map(|x| x.to_string()).collect();
                    record.push(v.to_string());
                    w.write_record(&record)?;
                }
                w.flush()?;
            }
        }
        Command::Geometry { config, spectrum_out } => {
            let config = parse_estimator_config(&config)?;
            let report = geometry(&config.model, &config.design_law, &config.integration)?;
            print!("{}", report.to_text()?);
            if let Some(path) = spectrum_out {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["index", "eigenvalue"])?;
                for (i, v) in report.spectrum.iter().enumerate() {
                    w.write_record([i.to_string(), v.to_string()])?;
                }
                w.flush()?;
            }
        }
        Command::Edelta { config, out } => {
            let config = parse_experiment_config(&config)?;
            let rows = harness::run_edelta_study(&config)?;
            match out {
                Some(path) => write_edelta_csv(&rows, &path)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                }
            }
        }
        Command::SimulateRisk { config, out } => {
            let config = parse_experiment_config(&config)?;
            let experiment = harness::RiskExperiment::new(&config)?;
            let report = experiment.run()?;
            fs::create_dir_all(&out)?;
            write_risk_csv(&report.rows, &out.join("risk.csv"))?;
            let summary = summarize(&config, &report)?;
            fs::write(out.join("summary.toml"), &summary)?;
            print!("{summary}");
        }
        Command::Rates { input, alpha1 } => {
            let rows = read_risk_csv(&input)?;
            let hash = rows.first().map(|r| r.scenario_hash.clone()).unwrap_or_default();
            let report = RiskReport::from_rows(hash, rows, Vec::new());
            let fit = fit_rate(&report, alpha1)?;
            print!("{}", toml::to_string(&RatesOutput { rate: fit, aggregates: aggregate(&report.rows) })?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RatesOutput {
    rate: harness::RateFit,
    aggregates: Vec<harness::RiskAggregate>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario_hash: &'a str,
    log_factor: &'static str,
    config: &'a harness::ExperimentConfig,
    dims: &'a [harness::ModelDims],
    aggregates: &'a [harness::RiskAggregate],
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<harness::RateFit>,
    oracle: Vec<harness::OracleComparison>,
}

fn summarize(config: &harness::ExperimentConfig, report: &RiskReport) -> Result<String> {
    let rate = if report.aggregates.len() >= 4 {
        match fit_rate(report, Some(config.scenario.alpha1)) {
            Ok(fit) => Some(fit),
            Err(e @ Error::NonPositiveRisk { .. }) => {
                log::warn!("rate fit skipped: {e}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let oracle = if config.experiment.oracle {
        report
            .aggregates
            .iter()
            .map(|a| {
                let rows: Vec<_> = report.rows.iter().filter(|r| r.n == a.n).cloned().collect();
                harness::oracle_comparison_from_rows(a.n, &rows)
            })
            .collect()
    } else {
        Vec::new()
    };
    let summary = Summary {
        scenario_hash: &report.scenario_hash,
        log_factor: "max(ln(n)^4, 16)",
        config,
        dims: &report.dims,
        aggregates: &report.aggregates,
        rate,
        oracle,
    };
    Ok(toml::to_string(&summary)?)
}

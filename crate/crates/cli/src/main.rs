use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use perf_fl::config::split_override;
use perf_fl::harness::{presets, run_preset, RunOptions};
use perf_fl::{Algorithm, ExperimentConfig, SummaryReport};

#[derive(Parser)]
#[command(name = "perf-fl", version, about = "Performative federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a preset and write traces plus a summary CSV.
    Run {
        #[arg(long)]
        preset: String,
        /// Dotted `key=value` applied to every cell, e.g. `T=200` or
        /// `environment.gamma=2.5`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = "PERF_FL_OUT", default_value = "results")]
        out: PathBuf,
        /// Comma-separated seeds; defaults to the preset's own list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated sweep labels to keep.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<String>>,
        /// Comma-separated algorithms to keep.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<Algorithm>>,
    },
    /// List the built-in presets.
    ListPresets,
    /// Check an experiment config file without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            preset: name,
            overrides,
            out,
            seeds,
            sweep,
            algorithms,
        } => {
            let overrides = overrides
                .iter()
                .map(|s| split_override(s).map(|(k, v)| (k.to_string(), v.to_string())))
                .collect::<perf_fl::Result<Vec<_>>>()?;
            let opts = RunOptions {
                seeds,
                sweep,
                algorithms,
                overrides,
                out: Some(out.clone()),
            };
            let run = run_preset(&name, &opts)?;
            print_summary(&run.summary);
            println!(
                "{} cells written to {}",
                run.cells.len(),
                out.join(&run.preset.name).display()
            );
            Ok(())
        }
        Command::ListPresets => {
            for p in presets()? {
                println!("{:32} {}", p.name, p.description);
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_path(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            for warning in cfg.validate()? {
                println!("warning: {warning}");
            }
            println!(
                "{}: ok ({}, {} clients, d = {}, T = {})",
                config.display(),
                cfg.algorithm,
                cfg.num_clients,
                cfg.dim(),
                cfg.iterations
            );
            Ok(())
        }
    }
}

fn print_summary(report: &SummaryReport) {
    println!(
        "{:14} {:15} {:>5} {:>22} {:>18} {:>12}",
        "sweep", "algorithm", "runs", "final loss", "accuracy", "samples"
    );
    for r in &report.rows {
        let acc = match (r.accuracy_mean, r.accuracy_std) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "-".into(),
        };
        println!(
            "{:14} {:15} {:>5} {:>22} {:>18} {:>12.0}",
            r.sweep,
            r.algorithm.to_string(),
            r.runs,
            format!("{:.5} ± {:.5}", r.final_loss_mean, r.final_loss_std),
            acc,
            r.samples_mean
        );
    }
}

//! Named experiment grids and their execution.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Deserialize;

use super::optima::optima;
use super::summary::{write_cell_metrics, CellMetrics, SummaryReport};
use super::federation_accuracy;
use crate::config::{apply_override, set_path, Algorithm, ExperimentConfig};
use crate::error::{Error, Result};
use crate::federation::run_with_clients;
use crate::trace::RunTrace;

macro_rules! embedded {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("presets/", $name, ".toml")))),*]
    };
}

const EMBEDDED: &[(&str, &str)] = embedded!(
    "scalar-pricing",
    "table-pricing-loss",
    "table-accuracy-same",
    "table-accuracy-different",
    "table-accuracy-credit",
    "table-accuracy-adult",
    "fig1a-contamination",
    "fig1b-server-jacobian",
    "fig1c-adaptive",
    "fig2a-sample-sizes",
    "fig2b-learning-rates",
    "fig2c-windows",
    "fig3a-enrollment",
    "fig3b-heterogeneity",
    "fig4a-sample-sizes",
    "fig4b-rounds",
    "fig5a-contribution",
    "fig5b-contribution-regression",
    "appendix-fedavg-equivalence",
    "appendix-coincidence",
);

/// One value of the swept parameter: a label and the dotted keys it sets.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub label: String,
    #[serde(default)]
    pub set: toml::Table,
}

/// A base configuration, the algorithms to compare, a sweep and seeds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub description: String,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep_axis: Option<String>,
    pub config: toml::Table,
    /// Per-algorithm settings, applied after the sweep values.
    #[serde(default)]
    pub overrides: BTreeMap<Algorithm, toml::Table>,
    #[serde(default)]
    pub sweep: Vec<SweepPoint>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn set_all(table: &mut toml::Table, settings: &toml::Table) -> Result<()> {
    for (k, v) in settings {
        set_path(table, k, v.clone())?;
    }
    Ok(())
}

impl ExperimentPreset {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: ExperimentPreset = toml::from_str(s)?;
        if p.algorithms.is_empty() || p.seeds.is_empty() {
            return Err(Error::config(format!(
                "preset `{}` needs at least one algorithm and one seed",
                p.name
            )));
        }
        if !p.sweep.is_empty() && p.sweep_axis.is_none() {
            return Err(Error::config(format!("preset `{}` sweeps without a sweep_axis", p.name)));
        }
        Ok(p)
    }

    /// Sweep labels; a single empty label when nothing is swept.
    pub fn sweep_labels(&self) -> Vec<String> {
        if self.sweep.is_empty() {
            vec![String::new()]
        } else {
            self.sweep.iter().map(|s| s.label.clone()).collect()
        }
    }

    /// The configuration of one cell: base, then sweep value, then the
    /// algorithm's settings, then user overrides.
    pub fn cell_config(
        &self,
        sweep: &str,
        algorithm: Algorithm,
        seed: u64,
        overrides: &[(String, String)],
    ) -> Result<ExperimentConfig> {
        let mut table = self.config.clone();
        if !sweep.is_empty() {
            let point = self
                .sweep
                .iter()
                .find(|p| p.label == sweep)
                .ok_or_else(|| {
                    Error::config(format!("preset `{}` has no sweep value `{sweep}`", self.name))
                })?;
            set_all(&mut table, &point.set)?;
        }
        if let Some(o) = self.overrides.get(&algorithm) {
            set_all(&mut table, o)?;
        }
        set_path(&mut table, "algorithm", toml::Value::String(algorithm.as_str().into()))?;
        set_path(&mut table, "seed", toml::Value::Integer(seed as i64))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        ExperimentConfig::from_table(table)
    }

    /// Directory name of a cell, e.g. `profl_epsilon-0.2_seed-3`.
    pub fn cell_name(&self, sweep: &str, algorithm: Algorithm, seed: u64) -> String {
        match (&self.sweep_axis, sweep.is_empty()) {
            (Some(axis), false) => format!("{algorithm}_{axis}-{sweep}_seed-{seed}"),
            _ => format!("{algorithm}_seed-{seed}"),
        }
    }
}

/// All built-in presets.
pub fn presets() -> Result<Vec<ExperimentPreset>> {
    EMBEDDED
        .iter()
        .map(|(_, text)| ExperimentPreset::from_toml_str(text))
        .collect()
}

pub fn preset_names() -> Vec<&'static str> {
    EMBEDDED.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<ExperimentPreset> {
    let text = EMBEDDED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            available: preset_names().join(", "),
        })?;
    ExperimentPreset::from_toml_str(text)
}

/// Restrictions and outputs for [`run_preset`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seeds: Option<Vec<u64>>,
    pub sweep: Option<Vec<String>>,
    pub algorithms: Option<Vec<Algorithm>>,
    /// `dotted.key = value` pairs applied to every cell.
    pub overrides: Vec<(String, String)>,
    /// When set, traces go to `<out>/<preset>/<cell>/trace.csv` and the
    /// summary to `<out>/<preset>/summary.csv`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub name: String,
    pub config: ExperimentConfig,
    pub trace: RunTrace,
    pub metrics: CellMetrics,
}

#[derive(Debug, Clone)]
pub struct PresetRun {
    pub preset: ExperimentPreset,
    pub cells: Vec<CellResult>,
    pub summary: SummaryReport,
}

impl PresetRun {
    pub fn cell(&self, sweep: &str, algorithm: Algorithm, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.metrics.sweep == sweep && c.metrics.algorithm == algorithm && c.metrics.seed == seed
        })
    }

    /// Cells of one (sweep, algorithm) pair in seed order.
    pub fn series(&self, sweep: &str, algorithm: Algorithm) -> Vec<&CellResult> {
        let mut v: Vec<&CellResult> = self
            .cells
            .iter()
            .filter(|c| c.metrics.sweep == sweep && c.metrics.algorithm == algorithm)
            .collect();
        v.sort_by_key(|c| c.metrics.seed);
        v
    }
}

fn run_cell(preset: &ExperimentPreset, sweep: &str, algorithm: Algorithm, seed: u64, opts: &RunOptions) -> Result<CellResult> {
    let config = preset.cell_config(sweep, algorithm, seed, &opts.overrides)?;
    let clients = config.build_clients()?;
    let trace = run_with_clients(&config, &clients)?;
    let theta = trace.final_theta().expect("trace has rows").clone();
    let accuracy = federation_accuracy(
        &clients,
        theta.coords(),
        config.evaluation.accuracy_samples,
        config.seed,
    );
    let distance = optima(&clients, &config.projection).map(|o| o.theta_po.distance(&theta));
    let metrics = CellMetrics::from_trace(sweep, algorithm, seed, &trace, accuracy, distance);
    Ok(CellResult {
        name: preset.cell_name(sweep, algorithm, seed),
        config,
        trace,
        metrics,
    })
}

/// Runs every selected (sweep value × algorithm × seed) cell.
pub fn run_preset(name: &str, opts: &RunOptions) -> Result<PresetRun> {
    let preset = preset(name)?;
    let sweeps: Vec<String> = match &opts.sweep {
        Some(wanted) => {
            let known = preset.sweep_labels();
            for w in wanted {
                if !known.contains(w) {
                    return Err(Error::config(format!(
                        "preset `{name}` has no sweep value `{w}`; available: {}",
                        known.join(", ")
                    )));
                }
            }
            known.into_iter().filter(|l| wanted.contains(l)).collect()
        }
        None => preset.sweep_labels(),
    };
    let algorithms: Vec<Algorithm> = match &opts.algorithms {
        Some(a) => preset.algorithms.iter().copied().filter(|x| a.contains(x)).collect(),
        None => preset.algorithms.clone(),
    };
    if algorithms.is_empty() {
        return Err(Error::config(format!(
            "none of the requested algorithms are part of preset `{name}`"
        )));
    }
    let seeds = opts.seeds.clone().unwrap_or_else(|| preset.seeds.clone());
    let mut jobs: Vec<(String, Algorithm, u64)> = Vec::new();
    for s in &sweeps {
        for a in &algorithms {
            for seed in &seeds {
                jobs.push((s.clone(), *a, *seed));
            }
        }
    }
    // Fail fast on configuration errors before any cell runs.
    for (s, a, seed) in &jobs {
        preset.cell_config(s, *a, *seed, &opts.overrides)?.validate()?;
    }
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|(s, a, seed)| run_cell(&preset, s, *a, *seed, opts))
        .collect::<Result<_>>()?;
    let summary = SummaryReport::from_cells(&cells.iter().map(|c| c.metrics.clone()).collect::<Vec<_>>());
    if let Some(out) = &opts.out {
        let dir = out.join(&preset.name);
        for (index, c) in cells.iter().enumerate() {
            let cell_dir = dir.join(&c.name);
            std::fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
            c.trace.write_csv_file(&cell_dir.join("trace.csv"))?;
            write_cell_metrics(&cell_dir.join("metrics.csv"), &c.metrics)?;
            std::fs::write(cell_dir.join("index"), index.to_string())
                .map_err(|e| Error::io(&cell_dir, e))?;
        }
        summary.write_csv_file(&dir.join("summary.csv"))?;
    }
    Ok(PresetRun {
        preset,
        cells,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for p in presets().unwrap() {
            assert!(preset_names().contains(&p.name.as_str()), "{}", p.name);
            for s in p.sweep_labels() {
                for a in &p.algorithms {
                    let cfg = p.cell_config(&s, *a, 0, &[]);
                    let cfg = cfg.unwrap_or_else(|e| panic!("{} / {s} / {a}: {e}", p.name));
                    cfg.validate().unwrap_or_else(|e| panic!("{} / {s} / {a}: {e}", p.name));
                }
            }
        }
    }

    #[test]
    fn unknown_preset_lists_the_available_ones() {
        let err = preset("nope").unwrap_err().to_string();
        assert!(err.contains("fig1a-contamination"));
    }

    #[test]
    fn cell_names() {
        let p = preset("fig1a-contamination").unwrap();
        assert_eq!(p.cell_name("0.2", Algorithm::Profl, 3), "profl_epsilon-0.2_seed-3");
    }
}

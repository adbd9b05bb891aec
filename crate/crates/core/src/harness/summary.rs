//! Per-cell metrics and their multi-seed aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::error::{Error, Result};
use crate::trace::RunTrace;

/// Relative band used for the convergence iteration.
pub const CONVERGENCE_TOL: f64 = 0.01;

/// What one (sweep value, algorithm, seed) run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub sweep: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub final_loss: f64,
    pub accuracy: Option<f64>,
    pub distance_to_po: Option<f64>,
    pub convergence_iteration: usize,
    pub total_samples: usize,
}

impl CellMetrics {
    pub fn from_trace(
        sweep: &str,
        algorithm: Algorithm,
        seed: u64,
        trace: &RunTrace,
        accuracy: Option<f64>,
        distance_to_po: Option<f64>,
    ) -> Self {
        CellMetrics {
            sweep: sweep.to_string(),
            algorithm,
            seed,
            final_loss: trace.final_loss(),
            accuracy,
            distance_to_po,
            convergence_iteration: trace.convergence_iteration(CONVERGENCE_TOL),
            total_samples: trace.total_samples(),
        }
    }
}

/// Mean and sample standard deviation over seeds for one
/// (sweep value, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep: String,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub distance_mean: Option<f64>,
    pub distance_std: Option<f64>,
    pub convergence_mean: f64,
    pub samples_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryReport {
    pub rows: Vec<SummaryRow>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn optional(xs: Vec<Option<f64>>) -> (Option<f64>, Option<f64>) {
    match xs.into_iter().collect::<Option<Vec<f64>>>() {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        _ => (None, None),
    }
}

impl SummaryReport {
    /// Groups cells by (sweep, algorithm) in first-seen order.
    pub fn from_cells(cells: &[CellMetrics]) -> Self {
        let mut order: Vec<(String, Algorithm)> = Vec::new();
        let mut groups: BTreeMap<(String, Algorithm), Vec<&CellMetrics>> = BTreeMap::new();
        for c in cells {
            let key = (c.sweep.clone(), c.algorithm);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(c);
        }
        let rows = order
            .into_iter()
            .map(|key| {
                let mut g = groups.remove(&key).expect("grouped");
                g.sort_by_key(|c| c.seed);
                let losses: Vec<f64> = g.iter().map(|c| c.final_loss).collect();
                let (final_loss_mean, final_loss_std) = mean_std(&losses);
                let (accuracy_mean, accuracy_std) = optional(g.iter().map(|c| c.accuracy).collect());
                let (distance_mean, distance_std) =
                    optional(g.iter().map(|c| c.distance_to_po).collect());
                let n = g.len() as f64;
                SummaryRow {
                    sweep: key.0,
                    algorithm: key.1,
                    runs: g.len(),
                    final_loss_mean,
                    final_loss_std,
                    accuracy_mean,
                    accuracy_std,
                    distance_mean,
                    distance_std,
                    convergence_mean: g.iter().map(|c| c.convergence_iteration as f64).sum::<f64>() / n,
                    samples_mean: g.iter().map(|c| c.total_samples as f64).sum::<f64>() / n,
                }
            })
            .collect();
        SummaryReport { rows }
    }

    pub fn row(&self, sweep: &str, algorithm: Algorithm) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.sweep == sweep && r.algorithm == algorithm)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("summary", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
        Ok(SummaryReport { rows })
    }
}

/// Writes a cell's metrics next to its trace.
pub(crate) fn write_cell_metrics(path: &Path, m: &CellMetrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(m)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Recomputes the summary of a preset output directory from the per-cell
/// `trace.csv` and `metrics.csv` files, ordered as the cells were run.
pub fn summarize_output(preset_dir: &Path) -> Result<SummaryReport> {
    let mut cells = Vec::new();
    let entries = std::fs::read_dir(preset_dir).map_err(|e| Error::io(preset_dir, e))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut indexed = Vec::new();
    for dir in dirs {
        let trace = RunTrace::read_csv_file(&dir.join("trace.csv"))?;
        let mut r = csv::Reader::from_path(dir.join("metrics.csv"))?;
        let stored: CellMetrics = r
            .deserialize()
            .next()
            .ok_or_else(|| Error::Data {
                path: dir.join("metrics.csv"),
                message: "no metrics row".into(),
            })??;
        let index = std::fs::read_to_string(dir.join("index"))
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .unwrap_or(usize::MAX);
        let recomputed = CellMetrics::from_trace(
            &stored.sweep,
            stored.algorithm,
            stored.seed,
            &trace,
            stored.accuracy,
            stored.distance_to_po,
        );
        indexed.push((index, recomputed));
    }
    indexed.sort_by_key(|(i, _)| *i);
    cells.extend(indexed.into_iter().map(|(_, c)| c));
    Ok(SummaryReport::from_cells(&cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn groups_by_sweep_and_algorithm() {
        let cell = |sweep: &str, algorithm, seed, loss| CellMetrics {
            sweep: sweep.into(),
            algorithm,
            seed,
            final_loss: loss,
            accuracy: None,
            distance_to_po: Some(loss),
            convergence_iteration: 10,
            total_samples: 100,
        };
        let report = SummaryReport::from_cells(&[
            cell("a", Algorithm::Profl, 0, 1.0),
            cell("a", Algorithm::Pfl, 0, 5.0),
            cell("a", Algorithm::Profl, 1, 3.0),
        ]);
        assert_eq!(report.rows.len(), 2);
        let r = report.row("a", Algorithm::Profl).unwrap();
        assert_eq!((r.runs, r.final_loss_mean), (2, 2.0));
        assert_eq!(r.accuracy_mean, None);
        assert_eq!(r.distance_mean, Some(2.0));
    }
}

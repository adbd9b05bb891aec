//! Experiment presets, multi-seed runs, summaries and data ingestion.

mod data;
mod optima;
mod preset;
mod summary;

pub use data::{ingest_csv, synthetic_dataset, Dataset};
pub use optima::{numeric_optima, optima};
pub use preset::{
    preset, preset_names, presets, run_preset, CellResult, ExperimentPreset, PresetRun, RunOptions,
    SweepPoint,
};
pub use summary::{summarize_output, CellMetrics, SummaryReport, SummaryRow};

use crate::env::{ContaminatedClient, Environment};
use crate::error::{Error, Result};
use crate::rng::{stream, SimRng, StreamLabel};

/// Accuracy of the rule `θᵀx ≥ 0 ⇒ 1` on `n_eval` fresh draws from the
/// clean distribution induced by θ (the whole shard for static data).
pub fn classify_accuracy(
    theta: &[f64],
    env: &dyn Environment,
    n_eval: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    env.accuracy(theta, n_eval, rng).ok_or_else(|| {
        Error::config(format!("{} is not a classification environment", env.name()))
    })
}

/// α-weighted accuracy over the federation; `None` for non-classification
/// environments.
pub fn federation_accuracy(
    clients: &[ContaminatedClient],
    theta: &[f64],
    n_eval: usize,
    seed: u64,
) -> Option<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for (i, c) in clients.iter().enumerate() {
        let mut rng = stream(seed, i as u64, StreamLabel::Accuracy, 0);
        total += c.alpha * c.env.accuracy(theta, n_eval, &mut rng)?;
        weight += c.alpha;
    }
    (weight > 0.0).then(|| total / weight)
}

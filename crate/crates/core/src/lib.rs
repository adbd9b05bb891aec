//! Performative federated learning: ProFL, PoFL, PFL and centralized
//! performative gradient on simulated performative environments.
//!
//! ```no_run
//! use perf_fl::{harness, RunOptions};
//!
//! let run = harness::run_preset("scalar-pricing", &RunOptions::default()).unwrap();
//! for row in &run.summary.rows {
//!     println!("{} {:.4}", row.algorithm, row.final_loss_mean);
//! }
//! ```

pub mod config;
pub mod env;
pub mod error;
pub mod estimation;
pub mod federation;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod trace;

pub use config::{Algorithm, ExperimentConfig, SampleSizeMode};
pub use env::{ContaminatedClient, Environment, Sample};
pub use error::{Error, Result};
pub use federation::{run, run_with_clients};
pub use harness::{run_preset, RunOptions, SummaryReport};
pub use model::{project, weighted_aggregate, ModelVector, ParameterBox};
pub use trace::{RunTrace, TraceRow};

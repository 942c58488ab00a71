//! Experiment harness: configuration, metrics, reports, the end-to-end
//! driver and the built-in self-check battery.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod selfcheck;

pub use config::{EvalSpec, ExperimentConfig};
pub use experiment::{evaluate, run_experiment, run_experiment_in, EvalSplit, RunArtifacts};
pub use metrics::{posterior_distance, psnr, sliced_w1, PosteriorDistance};
pub use report::{emit_report, read_report, EvalReport, EvalRow, REPORT_HEADER};

//! Config-driven experiment surface: runs, metric reports, loss-weight
//! sweeps, CIL/CILD comparisons, plots and feature export.

pub mod config;
pub mod export;
pub mod plot;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, FORMAT_VERSION, OUTPUT_ENV};
pub use export::export_features;
pub use report::{report, summarize_run_dir, MetricRow, Report, RunSummary};
pub use run::{execute, execute_all, run, Arm, Job};
pub use sweep::{compare_cil_cild, compare_disco, parse_grid, sweep, ComparisonReport, Variant};

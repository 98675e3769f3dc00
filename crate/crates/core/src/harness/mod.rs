//! Monte Carlo experiments: truth simulation, filter runs, metrics and output files.

pub mod metrics;
mod runner;

pub use metrics::{compute_metrics, error_stats, ErrorStats, MetricsTable, POSITION, VELOCITY};
pub use runner::{
    run_experiment, run_seeds, run_single, write_outputs, CommSummary, Experiment, ExperimentOptions, PredictionOnly,
    RunOutput, Summary, TraceRow, AVERAGING,
};

//! Configuration, instance generation, trace ingestion and experiment runs.

mod config;
mod experiment;
mod generate;
mod trace;

pub use config::{ExperimentConfig, PRESETS};
pub use experiment::{
    build_instance, read_json, run_experiment, run_experiment_on, solve, summary_lines, write_json,
    write_metrics, ExperimentOutcome,
};
pub use generate::{capacities_from_demand, draw_comm_weights, generate_instance};
pub use trace::{ingest_trace, ingest_trace_reader, Ingested, TraceRow};

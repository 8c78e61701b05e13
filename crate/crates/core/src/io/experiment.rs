use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::generate::generate_instance;
use super::trace::ingest_trace;
use crate::central::solve_central;
use crate::dist::solve_distributed;
use crate::error::{Error, Result};
use crate::metrics::{compare_alone_vs_nbs, write_metrics_csv, MetricsReport};
use crate::model::{Instance, SurplusVector};
use crate::protocol::{run_protocol, write_trace_jsonl, ProtocolTrace};
use crate::report::{SolveReport, SolverKind};
use crate::standalone::{self, StandaloneSolution};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Ingests `config.trace` when set, otherwise generates from the seed.
pub fn build_instance(config: &ExperimentConfig) -> Result<Instance> {
    match &config.trace {
        Some(path) => {
            let got = ingest_trace(path, config)?;
            Ok(got.instance)
        }
        None => generate_instance(config),
    }
}

fn alone_report(instance: &Instance, alone: &StandaloneSolution) -> SolveReport {
    SolveReport {
        solver: SolverKind::Alone,
        allocation: alone.x_alone.clone(),
        surplus: SurplusVector::at(instance, &alone.x_alone, &alone.d0),
        objective_history: vec![],
        residual_history: vec![],
        iterations: 0,
        converged: true,
        final_residual: 0.0,
    }
}

/// Runs the configured solver on `instance`.
pub fn solve(
    instance: &Instance,
    alone: &StandaloneSolution,
    config: &ExperimentConfig,
) -> Result<(SolveReport, Option<ProtocolTrace>)> {
    let d0 = &alone.d0;
    match config.solver {
        SolverKind::Alone => Ok((alone_report(instance, alone), None)),
        SolverKind::Central => Ok((solve_central(instance, d0, &config.central_config())?, None)),
        SolverKind::Dist => Ok((
            solve_distributed(instance, d0, &config.dist_config(instance))?.report,
            None,
        )),
        SolverKind::Protocol => {
            let run = run_protocol(instance, d0, &config.dist_config(instance))?;
            Ok((run.solution.report, Some(run.trace)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub instance: Instance,
    pub alone: StandaloneSolution,
    pub report: SolveReport,
    pub metrics: MetricsReport,
    pub trace: Option<ProtocolTrace>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    /// One summary row per provider.
    pub fn summary(&self) -> Vec<String> {
        summary_lines(&self.metrics)
    }
}

/// Table with one row per provider and a closing `all` row.
pub fn summary_lines(metrics: &MetricsReport) -> Vec<String> {
    let mut lines = vec![format!(
        "{:>4} {:>12} {:>12} {:>9} {:>9} {:>9} {:>9}",
        "esp", "u_alone", "u_nbs", "rs_alone", "rs_nbs", "ut_alone", "ut_nbs"
    )];
    for e in &metrics.esps {
        lines.push(format!(
            "{:>4} {:>12.6} {:>12.6} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            e.provider,
            e.utility_alone,
            e.utility_nbs,
            e.rs_alone,
            e.rs_nbs,
            e.mean_utilization_alone,
            e.mean_utilization_nbs
        ));
    }
    lines.push(format!(
        "{:>4} {:>12} {:>12} {:>9.3} {:>9.3} {:>9.3} {:>9.3}  jain {}",
        "all",
        "",
        "",
        metrics.rs_alone,
        metrics.rs_nbs,
        metrics.utilization_alone,
        metrics.utilization_nbs,
        metrics
            .jain_gain
            .map_or("-".to_string(), |j| format!("{j:.4}"))
    ));
    lines
}

/// Writes `metrics.json` and `metrics.csv` into `dir`.
pub fn write_metrics(dir: &Path, metrics: &MetricsReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join("metrics.json");
    write_json(&json, metrics)?;
    let csv = dir.join("metrics.csv");
    write_metrics_csv(BufWriter::new(File::create(&csv)?), metrics)?;
    Ok(vec![json, csv])
}

fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    instance: &Instance,
    report: &SolveReport,
    metrics: &MetricsReport,
    trace: Option<&ProtocolTrace>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![
        dir.join("config.json"),
        dir.join("instance.json"),
        dir.join("solution.json"),
    ];
    write_json(&files[0], config)?;
    write_json(&files[1], instance)?;
    write_json(&files[2], report)?;
    files.extend(write_metrics(dir, metrics)?);
    if let Some(t) = trace {
        let p = dir.join("trace.jsonl");
        let mut w = BufWriter::new(File::create(&p)?);
        write_trace_jsonl(&mut w, t)?;
        w.flush()?;
        files.push(p);
    }
    Ok(files)
}

/// Builds the instance, solves it standalone and with the configured solver,
/// computes metrics and writes every artifact to `config.out_dir`.
///
/// When the solver does not converge the best iterate is still written
/// before the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let instance = build_instance(config)?;
    run_experiment_on(config, instance)
}

/// [`run_experiment`] on an instance built elsewhere; the instance fields of
/// `config` are ignored.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    instance: Instance,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let alone = standalone::solve_all(&instance);
    info!(
        "instance: N={} M={} K={} solver={}",
        instance.num_providers(),
        instance.num_apps(),
        instance.num_resources(),
        config.solver
    );
    let (report, trace) = match solve(&instance, &alone, config) {
        Ok(v) => v,
        Err(Error::NotConverged {
            iterations,
            residual,
            best,
            state,
            trace,
        }) => {
            let metrics = compare_alone_vs_nbs(&instance, &alone, &best);
            write_outputs(
                &config.out_dir,
                config,
                &instance,
                &best,
                &metrics,
                trace.as_deref(),
            )?;
            return Err(Error::NotConverged {
                iterations,
                residual,
                best,
                state,
                trace,
            });
        }
        Err(e) => return Err(e),
    };
    let metrics = compare_alone_vs_nbs(&instance, &alone, &report);
    let files = write_outputs(
        &config.out_dir,
        config,
        &instance,
        &report,
        &metrics,
        trace.as_ref(),
    )?;
    Ok(ExperimentOutcome {
        instance,
        alone,
        report,
        metrics,
        trace,
        files,
    })
}

//! Command line front end: generate, ingest, solve, report and batch runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use serde::de::DeserializeOwned;

use nbs_share::central::StartRule;
use nbs_share::io::{
    build_instance, ingest_trace, read_json, run_experiment, run_experiment_on, summary_lines,
    write_json, write_metrics, ExperimentConfig,
};
use nbs_share::metrics::compare_alone_vs_nbs;
use nbs_share::{standalone, Error, Instance, Result, SolveReport, SolverKind};

#[derive(Parser, Debug)]
#[command(
    name = "nbs-share",
    version,
    about = "Nash bargaining resource sharing among edge service providers"
)]
struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an instance and write config.json and instance.json.
    Generate(ConfigArgs),
    /// Build a 3-resource instance from a workload trace.
    Ingest(ConfigArgs),
    /// Solve an instance and write solution, metrics and (protocol) trace files.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Solve this instance file instead of generating one.
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Recompute metrics from instance.json and solution.json in a run directory.
    Report {
        /// Directory written by `solve`.
        dir: PathBuf,
    },
    /// Run several presets and seeds concurrently, one directory per run.
    Batch {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        presets: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Every flag overrides the matching `ExperimentConfig` field of the base
/// configuration (`--config`, else `--preset`, else the defaults).
#[derive(Args, Debug, Default, Clone)]
struct ConfigArgs {
    /// JSON experiment configuration to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<u8>,
    #[arg(long)]
    num_providers: Option<usize>,
    #[arg(long)]
    apps_per_provider: Option<usize>,
    #[arg(long)]
    num_resources: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    request_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    deficit_providers: Option<Vec<usize>>,
    #[arg(long)]
    deficit_factor: Option<f64>,
    #[arg(long)]
    surplus_factor: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    comm_weight_range: Option<Vec<f64>>,
    /// alone | central | dist | protocol
    #[arg(long, value_parser = parse_named::<SolverKind>)]
    solver: Option<SolverKind>,
    #[arg(long)]
    dual_step: Option<f64>,
    #[arg(long)]
    alpha_gain: Option<f64>,
    #[arg(long)]
    step_decay: Option<bool>,
    /// Largest fraction of its block response a provider moves by, in (0, 1].
    #[arg(long)]
    relaxation: Option<f64>,
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// greedy | sharing
    #[arg(long, value_parser = parse_named::<StartRule>)]
    start: Option<StartRule>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Workload trace (provider, app, cpu_cores, cpu, memory columns).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    samples_per_provider: Option<usize>,
    #[arg(long, env = "NBS_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

/// Parses a unit enum through its serde name.
fn parse_named<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase())).map_err(|e| e.to_string())
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match (&self.config, self.preset) {
            (Some(path), _) => read_json(path)?,
            (None, Some(p)) => ExperimentConfig::preset(p)?,
            (None, None) => ExperimentConfig::default(),
        };
        if let (Some(_), Some(p)) = (&self.config, self.preset) {
            let base = ExperimentConfig::preset(p)?;
            c.preset = base.preset;
            c.num_providers = base.num_providers;
            c.apps_per_provider = base.apps_per_provider;
            c.num_resources = base.num_resources;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
        }
        set!(
            num_providers,
            apps_per_provider,
            num_resources,
            seed,
            deficit_providers,
            deficit_factor,
            surplus_factor,
            offset,
            solver,
            dual_step,
            alpha_gain,
            step_decay,
            relaxation,
            kkt_tol,
            max_rounds,
            grad_tol,
            max_iters,
            start,
            restarts,
            samples_per_provider,
            out_dir
        );
        if let Some(r) = &self.request_range {
            c.request_range = pair(r);
        }
        if let Some(r) = &self.comm_weight_range {
            c.comm_weight_range = pair(r);
        }
        if self.trace.is_some() {
            c.trace = self.trace.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_lines(lines: &[String]) {
    for l in lines {
        println!("{l}");
    }
}

fn generate(args: &ConfigArgs) -> Result<()> {
    let config = args.resolve()?;
    let instance = build_instance(&config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    write_json(&config.out_dir.join("config.json"), &config)?;
    let path = config.out_dir.join("instance.json");
    write_json(&path, &instance)?;
    println!(
        "wrote {} (N={} M={} K={})",
        path.display(),
        instance.num_providers(),
        instance.num_apps(),
        instance.num_resources()
    );
    Ok(())
}

fn ingest(args: &ConfigArgs) -> Result<()> {
    let config = args.resolve()?;
    let Some(trace) = &config.trace else {
        return Err(Error::BadConfig("ingest needs --trace".into()));
    };
    let got = ingest_trace(trace, &config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    write_json(&config.out_dir.join("config.json"), &config)?;
    write_json(&config.out_dir.join("instance.json"), &got.instance)?;
    let mut w = csv::Writer::from_path(config.out_dir.join("rows.csv"))?;
    for (n, rows) in got.rows.iter().enumerate() {
        for r in rows {
            w.write_record([
                n.to_string(),
                r.provider.clone(),
                r.app.clone(),
                r.cpu_cores.to_string(),
                r.cpu.to_string(),
                r.memory.to_string(),
                r.line.to_string(),
            ])?;
        }
    }
    w.flush()?;
    for (n, tag) in got.tags.iter().enumerate() {
        println!("provider {n}: {tag} ({} rows)", got.rows[n].len());
    }
    if !got.warnings.is_empty() {
        println!("{} warnings", got.warnings.len());
    }
    Ok(())
}

fn solve(args: &ConfigArgs, instance: Option<&Path>) -> Result<()> {
    let config = args.resolve()?;
    let outcome = match instance {
        Some(p) => run_experiment_on(&config, read_json::<Instance>(p)?)?,
        None => run_experiment(&config)?,
    };
    let r = &outcome.report;
    println!(
        "{}: converged={} iterations={} residual={:.3e}",
        r.solver, r.converged, r.iterations, r.final_residual
    );
    print_lines(&outcome.summary());
    info!(
        "wrote {} files to {}",
        outcome.files.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let instance: Instance = read_json(&dir.join("instance.json"))?;
    let solution: SolveReport = read_json(&dir.join("solution.json"))?;
    let alone = standalone::solve_all(&instance);
    let metrics = compare_alone_vs_nbs(&instance, &alone, &solution);
    write_metrics(dir, &metrics)?;
    println!(
        "{}: converged={} iterations={}",
        solution.solver, solution.converged, solution.iterations
    );
    print_lines(&summary_lines(&metrics));
    Ok(())
}

struct BatchRow {
    preset: u8,
    seed: u64,
    status: String,
    code: i32,
    rs_alone: f64,
    rs_nbs: f64,
    jain: Option<f64>,
}

fn batch(args: &ConfigArgs, presets: &[u8], seeds: &[u64], jobs: Option<usize>) -> Result<i32> {
    let base = args.resolve()?;
    let mut work = Vec::new();
    for &p in presets {
        let dims = ExperimentConfig::preset(p)?;
        for &s in seeds {
            work.push(ExperimentConfig {
                preset: dims.preset,
                num_providers: dims.num_providers,
                apps_per_provider: dims.apps_per_provider,
                num_resources: dims.num_resources,
                seed: s,
                out_dir: base
                    .out_dir
                    .join(format!("preset-{p}"))
                    .join(format!("seed-{s}")),
                ..base.clone()
            });
        }
    }
    let threads = jobs
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .clamp(1, work.len().max(1));
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::with_capacity(work.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = work.get(i) else { break };
                let preset = cfg.preset.unwrap_or(0);
                let row = match run_experiment(cfg) {
                    Ok(o) => BatchRow {
                        preset,
                        seed: cfg.seed,
                        status: "ok".into(),
                        code: 0,
                        rs_alone: o.metrics.rs_alone,
                        rs_nbs: o.metrics.rs_nbs,
                        jain: o.metrics.jain_gain,
                    },
                    Err(e) => {
                        error!("preset {preset} seed {}: {e}", cfg.seed);
                        BatchRow {
                            preset,
                            seed: cfg.seed,
                            status: e.to_string(),
                            code: e.exit_code(),
                            rs_alone: f64::NAN,
                            rs_nbs: f64::NAN,
                            jain: None,
                        }
                    }
                };
                rows.lock().expect("batch worker panicked").push(row);
            });
        }
    });
    let mut rows = rows.into_inner().expect("batch worker panicked");
    rows.sort_by_key(|r| (r.preset, r.seed));

    std::fs::create_dir_all(&base.out_dir)?;
    let mut w = csv::Writer::from_path(base.out_dir.join("batch.csv"))?;
    w.write_record([
        "preset",
        "seed",
        "rs_alone",
        "rs_nbs",
        "jain_gain",
        "status",
    ])?;
    println!(
        "{:>6} {:>6} {:>9} {:>9} {:>8}  status",
        "preset", "seed", "rs_alone", "rs_nbs", "jain"
    );
    for r in &rows {
        let jain = r.jain.map_or(String::new(), |j| j.to_string());
        w.write_record([
            r.preset.to_string(),
            r.seed.to_string(),
            r.rs_alone.to_string(),
            r.rs_nbs.to_string(),
            jain,
            r.status.clone(),
        ])?;
        println!(
            "{:>6} {:>6} {:>9.3} {:>9.3} {:>8}  {}",
            r.preset,
            r.seed,
            r.rs_alone,
            r.rs_nbs,
            r.jain.map_or("-".to_string(), |j| format!("{j:.4}")),
            r.status
        );
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| r.code != 0).count();
    if failed > 0 {
        warn!("{failed} of {} runs failed", rows.len());
    }
    Ok(rows.iter().map(|r| r.code).max().unwrap_or(0))
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate(a) => generate(a).map(|_| 0),
        Command::Ingest(a) => ingest(a).map(|_| 0),
        Command::Solve { config, instance } => solve(config, instance.as_deref()).map(|_| 0),
        Command::Report { dir } => report(dir).map(|_| 0),
        Command::Batch {
            config,
            presets,
            seeds,
            jobs,
        } => batch(config, presets, seeds, *jobs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors; help and version are not errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

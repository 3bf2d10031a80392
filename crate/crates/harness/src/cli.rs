//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmba_core::corpus::compute_lva;
use dmba_core::plan::{PlanSettings, SweepSpec, DEFAULT_SWEEP_PER_TYPE, DEFAULT_TEMPERATURE_GRID, DEFAULT_TOP_P_GRID};
use dmba_core::request::{RetryPolicy, DEFAULT_MAX_TOKENS};
use dmba_core::scoring::DEFAULT_TAU;

use crate::dataset::{croissant_metadata, export_dataset, load_dataset, load_lva_sheets, validate_croissant, DatasetFormat};
use crate::error::{Error, Result};
use crate::orchestrator::{
    build_gateway, execute, prepare, write_recorded_fixtures, BackendKind, Checkpoint, Outcome, RunMode, RunSpec,
    DEFAULT_CHECKPOINT_EVERY, DEFAULT_PER_MODEL_LIMIT,
};
use crate::report::{export_results, load_results, ReportInput};

/// Exit status when a run stops on `--halt-after-batch`.
pub const HALTED_EXIT_CODE: u8 = 86;
pub const DEFAULT_SEED: u64 = 2025;

#[derive(Debug, Parser)]
#[command(name = "dmba", version, about = "Dual-metric stereotype bias evaluation of chat-completion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a pair file and, optionally, its Croissant descriptor.
    ValidateDataset {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        format: Option<DatasetFormat>,
        #[arg(long)]
        croissant: Option<PathBuf>,
        /// Re-export the validated pairs to this path.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Agreement statistics for manual validation sheets.
    Lva {
        #[arg(long)]
        sheets: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every pair over the twelve decoding batches.
    Run(RunArgs),
    /// Continue an interrupted run or sweep from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, hide = true)]
        halt_after_batch: Option<usize>,
    },
    /// Temperature and top_p sensitivity sweeps over a stratified sample.
    Sweep(SweepArgs),
    /// Recompute the summary, correlations and charts from a result directory.
    Analyze {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<DatasetFormat>,
    /// Comma-separated model ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    /// Agreement prompt template; the built-in one is used when omitted.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    pub max_tokens: u32,
    /// Stop sequence; repeat for several.
    #[arg(long = "stop")]
    pub stop_sequences: Vec<String>,
    /// Defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "live")]
    pub backend: BackendKind,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, default_value = "dmba-results")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PER_MODEL_LIMIT)]
    pub per_model_limit: usize,
    #[arg(long, default_value_t = DEFAULT_CHECKPOINT_EVERY)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = RetryPolicy::default().max_attempts)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = RetryPolicy::default().base_delay_ms)]
    pub base_delay_ms: f64,
    #[arg(long, default_value_t = RetryPolicy::default().request_timeout_ms)]
    pub timeout_ms: f64,
    #[arg(long, hide = true)]
    pub halt_after_batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = DEFAULT_SWEEP_PER_TYPE)]
    pub per_type: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TEMPERATURE_GRID)]
    pub temps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TOP_P_GRID)]
    pub top_ps: Vec<f64>,
    /// top_p held fixed during the temperature sweep.
    #[arg(long, default_value_t = 1.0)]
    pub fixed_top_p: f64,
    /// Temperature held fixed during the top_p sweep.
    #[arg(long, default_value_t = 0.7)]
    pub fixed_temperature: f64,
}

fn canonical(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

fn build_spec(common: &CommonArgs, mode: RunMode) -> Result<RunSpec> {
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let fixtures = match (&common.fixtures, common.backend) {
        // Record mode may create the fixture file.
        (Some(p), BackendKind::Record) if !p.exists() => {
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(canonical(dir)?.join(p.file_name().ok_or_else(|| Error::Usage("--fixtures must name a file".into()))?))
        }
        (Some(p), _) => Some(canonical(p)?),
        (None, _) => None,
    };
    let policy = RetryPolicy {
        max_attempts: common.max_attempts,
        base_delay_ms: common.base_delay_ms,
        request_timeout_ms: common.timeout_ms,
        ..RetryPolicy::default()
    };
    Ok(RunSpec {
        mode,
        format: common.format.unwrap_or_else(|| DatasetFormat::from_path(&common.data)),
        data: canonical(&common.data)?,
        models: common.models.iter().map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect(),
        template: common.template.as_deref().map(canonical).transpose()?,
        settings: PlanSettings {
            tau: common.tau,
            seed: common.seed,
            max_tokens: common.max_tokens,
            stop_sequences: common.stop_sequences.clone(),
        },
        backend: common.backend,
        fixtures,
        out_dir: canonical(&common.out)?,
        per_model_limit: common.per_model_limit,
        checkpoint_every: common.checkpoint_every,
        policy,
    })
}

/// Executes (or resumes) `spec` and writes its report.
pub fn run_spec(spec: &RunSpec, checkpoint: &Path, halt_after_batch: Option<usize>) -> Result<Option<ReportInput>> {
    let prepared = prepare(spec)?;
    let gateway = build_gateway(spec, &prepared)?;
    log::info!(
        "{}: {} pair(s), {} model(s), {} batch(es), {} request(s)",
        prepared.plan.run_id,
        prepared.dataset.len(),
        prepared.plan.models.len(),
        prepared.plan.batches.len(),
        prepared.plan.requests.len()
    );
    match execute(spec, &prepared, &gateway, checkpoint, halt_after_batch)? {
        Outcome::Halted { batch } => {
            println!("halted after batch {batch}; checkpoint {}", checkpoint.display());
            Ok(None)
        }
        Outcome::Complete(results) => {
            if spec.backend == BackendKind::Record {
                let path = spec.fixtures.as_deref().ok_or_else(|| Error::Usage("--fixtures is required for record".into()))?;
                let ck = Checkpoint::load(checkpoint)?;
                let n = write_recorded_fixtures(&prepared, &ck, path)?;
                println!("fixtures: {n} entries in {}", path.display());
            }
            let input = ReportInput::from_run(spec, &prepared, &results);
            let bundle = export_results(&input, &spec.out_dir)?;
            let s = results.summary();
            println!(
                "{}: {} pair result(s), {} completion(s), {} unparseable, {} failed; report in {}",
                prepared.plan.run_id,
                s.n_pairs,
                s.n_completions,
                s.unparseable_count,
                s.failed_count,
                bundle.summary_json.parent().unwrap_or(Path::new(".")).display()
            );
            Ok(Some(input))
        }
    }
}

fn finish(outcome: Option<ReportInput>) -> ExitCode {
    match outcome {
        Some(_) => ExitCode::SUCCESS,
        None => ExitCode::from(HALTED_EXIT_CODE),
    }
}

pub fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::ValidateDataset { data, format, croissant, export } => {
            let format = format.unwrap_or_else(|| DatasetFormat::from_path(&data));
            let mut dataset = load_dataset(&data, format)?;
            println!("{}: {} pairs", data.display(), dataset.len());
            for (bt, n) in dataset.type_counts() {
                println!("  {}: {n}", bt.as_str());
            }
            let mut findings = Vec::new();
            if let Some(desc) = croissant {
                findings = validate_croissant(&desc)?;
                if findings.is_empty() {
                    println!("{}: Croissant descriptor complete", desc.display());
                    dataset.metadata = croissant_metadata(&desc)?;
                }
                for f in &findings {
                    println!("finding: {f}");
                }
            }
            if let Some(path) = export {
                export_dataset(&dataset, &path, DatasetFormat::from_path(&path))?;
                println!("exported to {}", path.display());
            }
            Ok(if findings.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Lva { sheets, out } => {
            let report = compute_lva(&load_lva_sheets(&sheets)?)?;
            let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
            json.push('\n');
            match out {
                Some(path) => fs::write(&path, json).map_err(|e| Error::io(&path, e))?,
                None => print!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let spec = build_spec(&args.common, RunMode::Main)?;
            let ck = args.common.checkpoint.clone().unwrap_or_else(|| spec.default_checkpoint());
            Ok(finish(run_spec(&spec, &ck, args.common.halt_after_batch)?))
        }
        Command::Sweep(args) => {
            let sweep = SweepSpec {
                temperatures: args.temps.clone(),
                top_ps: args.top_ps.clone(),
                fixed_top_p: args.fixed_top_p,
                fixed_temperature: args.fixed_temperature,
            };
            let spec = build_spec(&args.common, RunMode::Sweep { per_type: args.per_type, spec: sweep })?;
            let ck = args.common.checkpoint.clone().unwrap_or_else(|| spec.default_checkpoint());
            Ok(finish(run_spec(&spec, &ck, args.common.halt_after_batch)?))
        }
        Command::Resume { checkpoint, halt_after_batch } => {
            let spec = Checkpoint::load(&checkpoint)?.spec;
            Ok(finish(run_spec(&spec, &checkpoint, halt_after_batch)?))
        }
        Command::Analyze { results, out } => {
            let input = load_results(&results)?;
            let bundle = export_results(&input, &out)?;
            println!("{} file(s) written to {}", bundle.all_paths().len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! `attmot`: generate synthetic benchmarks, train the fusion head, track,
//! evaluate and run ablations.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attmot_core::assoc::{AssocConfig, AttrSource, CostMode};
use attmot_core::fusion::{attribute_accuracy, loss_trace_csv, train, FusionParams, FusionStrategy, TrainConfig};
use attmot_core::metrics::{tpr_at_far, EvalOptions, DEFAULT_FAR_LEVELS};
use attmot_core::pipeline::{
    evaluate_benchmark, generate_benchmark, load_benchmark, read_results_dir, run_ablation, track_benchmark,
    training_set, verification_set, write_results_dir, BenchmarkConfig, ExperimentSpec, CONFIG_VERSION,
};
use attmot_core::synthgen::WorldConfig;
use attmot_core::{verify, Error};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "attmot", version, about = "Attribute-assisted multi-object tracking")]
struct Cli {
    /// Sequences processed concurrently. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    OcclusionHeavy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Observed,
    Predicted,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a benchmark and write it to disk.
    Generate {
        /// Benchmark config (TOML, `version = 1`); defaults listed below.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// World preset used when no config file is given.
        #[arg(long, value_enum, default_value_t = Preset::OcclusionHeavy)]
        preset: Preset,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's sequence count.
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the attribute fusion head on benchmark crops.
    Train {
        #[arg(short, long)]
        bench: PathBuf,
        /// attr-only, preproc-attr, preproc-both, cross-fertilize:R, self-enhance:R, concat-self
        #[arg(long, default_value = "preproc-attr")]
        strategy: FusionStrategy,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Training config (TOML, `version = 1`); defaults listed below.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Hold out every k-th crop for the reported accuracy; 0 trains on all.
        #[arg(long, default_value_t = 5)]
        holdout: usize,
        /// Per-iteration loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Parameter file (JSON).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Track every sequence of a benchmark.
    Track {
        #[arg(short, long)]
        bench: PathBuf,
        /// iou, embed, attr, embed+attr or concat; overrides the config.
        #[arg(long)]
        mode: Option<CostMode>,
        /// Trained fusion parameters, required for predicted attributes.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Where track attributes come from; overrides the config.
        #[arg(long, value_enum)]
        attr_source: Option<Source>,
        /// Association config (TOML, `version = 1`); defaults listed below.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Result directory, one `<sequence>.txt` per sequence.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score tracker results against benchmark ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        res: PathBuf,
        /// Report CSV; the table always goes to stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Count predictions on ignore regions as false positives.
        #[arg(long)]
        keep_ignored_fp: bool,
        /// Add TPR at FAR 0.1 / 0.01 / 0.001 for crop-pair verification.
        #[arg(long)]
        tpr: bool,
        /// Compare adapted embeddings in the verification table.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Crops drawn for the verification pairs.
        #[arg(long, default_value_t = 600)]
        max_crops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an ablation matrix: variants x seeds, medians over seeds.
    Ablate {
        /// Experiment spec (TOML, `version = 1`); see the example below.
        #[arg(short, long)]
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the invariant and oracle checks.
    Verify,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let usage = match &e {
            Error::Config(_) | Error::MissingFusionParams => true,
            Error::Run { source, .. } => matches!(**source, Error::Config(_) | Error::MissingFusionParams),
            _ => false,
        };
        if usage { Failure::Usage(e.to_string()) } else { Failure::Runtime(e.to_string()) }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn versioned_toml<T: Serialize>(value: &T) -> String {
    let body = toml::to_string(value).expect("config serializes");
    format!("version = {CONFIG_VERSION}\n{body}")
}

fn read_config_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Reads a TOML config whose first key is `version = 1`.
fn load_versioned<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bad = |msg: String| Failure::Usage(format!("{}: {msg}", path.display()));
    let mut table: toml::Table = read_config_text(path)?.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
    match table.remove("version") {
        Some(toml::Value::Integer(v)) if v == i64::from(CONFIG_VERSION) => {}
        Some(v) => return Err(bad(format!("unsupported config version {v}"))),
        None => return Err(bad("missing `version = 1` header".into())),
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(e.to_string()))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_params(path: &Path) -> CliResult<FusionParams> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    FusionParams::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn generate(config: Option<&Path>, preset: Preset, seed: Option<u64>, sequences: Option<usize>, out: &Path) -> CliResult {
    let mut cfg = match config {
        Some(p) => BenchmarkConfig::from_toml(&read_config_text(p)?)?,
        None => BenchmarkConfig {
            world: match preset {
                Preset::Default => WorldConfig::default(),
                Preset::OcclusionHeavy => WorldConfig::occlusion_heavy(),
            },
            ..Default::default()
        },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = sequences {
        cfg.sequences = n;
    }
    let dirs = generate_benchmark(&cfg, out)?;
    println!("wrote {} sequences to {}", dirs.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    bench: &Path,
    strategy: FusionStrategy,
    seed: u64,
    config: Option<&Path>,
    holdout: usize,
    trace_path: Option<&Path>,
    out: &Path,
) -> CliResult {
    let mut cfg: TrainConfig = match config {
        Some(p) => load_versioned(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    let data = training_set(&load_benchmark(bench)?)?;
    let (fit, held) = if holdout > 0 { data.split_every(holdout) } else { (data.clone(), data) };
    let (params, trace) = train(&fit, &cfg, strategy)?;
    write_file(out, &params.to_json())?;
    if let Some(p) = trace_path {
        write_file(p, &loss_trace_csv(&trace))?;
    }
    let first = trace.first().map_or(f64::NAN, |r| r.total);
    let last = trace.last().map_or(f64::NAN, |r| r.total);
    println!("crops {} identities {} strategy {strategy}", fit.len(), fit.classes);
    println!("loss {first:.4} -> {last:.4}");
    if !held.is_empty() {
        println!("attribute accuracy {:.4} on {} crops", attribute_accuracy(&params, &held)?, held.len());
    }
    Ok(())
}

fn track_cmd(
    bench: &Path,
    mode: Option<CostMode>,
    params: Option<&Path>,
    source: Option<Source>,
    config: Option<&Path>,
    out: &Path,
    jobs: usize,
) -> CliResult {
    let mut cfg: AssocConfig = match config {
        Some(p) => load_versioned(p)?,
        None => AssocConfig::default(),
    };
    if let Some(m) = mode {
        cfg.mode = m;
    }
    match source {
        Some(Source::Observed) => cfg.attr_source = AttrSource::Observed,
        Some(Source::Predicted) => cfg.attr_source = AttrSource::Predicted,
        None => {}
    }
    cfg.validate()?;
    let fusion = params.map(load_params).transpose()?;
    let seqs = load_benchmark(bench)?;
    let results = track_benchmark(&seqs, &cfg, fusion.as_ref(), jobs)?;
    write_results_dir(out, &results)?;
    let rows: usize = results.iter().map(|(_, r)| r.len()).sum();
    println!("tracked {} sequences ({rows} boxes) with {} into {}", results.len(), cfg.mode, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    gt: &Path,
    res: &Path,
    out: Option<&Path>,
    opts: EvalOptions,
    tpr: bool,
    params: Option<&Path>,
    max_crops: usize,
    seed: u64,
) -> CliResult {
    let seqs = load_benchmark(gt)?;
    let results = read_results_dir(res)?;
    let mut report = evaluate_benchmark(&seqs, &results, &opts)?;
    if tpr {
        let fusion = params.map(load_params).transpose()?;
        let set = verification_set(&seqs, fusion.as_ref(), max_crops, seed)?;
        report.verification = tpr_at_far(&set, &DEFAULT_FAR_LEVELS)?;
    }
    print!("{}", report.to_table());
    if let Some(p) = out {
        write_file(p, &report.to_csv())?;
    }
    Ok(())
}

fn ablate_cmd(spec_path: &Path, out: &Path, jobs: usize) -> CliResult {
    let spec = ExperimentSpec::from_toml(&read_config_text(spec_path)?)?;
    let report = run_ablation(&spec, Some(out), jobs)?;
    print!("{}", report.to_table());
    Ok(())
}

fn verify_cmd() -> CliResult {
    let checks = verify::run_all();
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn example_spec() -> String {
    let spec = ExperimentSpec {
        generate: Some(BenchmarkConfig { world: WorldConfig::occlusion_heavy(), ..Default::default() }),
        seeds: (0..10).collect(),
        variants: vec![
            attmot_core::pipeline::Variant { name: "embed".into(), assoc: AssocConfig::with_mode(CostMode::Embed) },
            attmot_core::pipeline::Variant {
                name: "embed+attr".into(),
                assoc: AssocConfig::with_mode(CostMode::EmbedPlusAttr),
            },
        ],
        ..Default::default()
    };
    spec.to_toml()
}

fn command() -> clap::Command {
    let thresholds: Vec<String> =
        CostMode::ALL.iter().map(|m| format!("  {m}: {}", m.default_threshold())).collect();
    Cli::command()
        .mut_subcommand("generate", |c| {
            let cfg = BenchmarkConfig { world: WorldConfig::occlusion_heavy(), ..Default::default() };
            c.after_long_help(format!("Default config (occlusion-heavy preset):\n\n{}", cfg.to_toml()))
        })
        .mut_subcommand("train", |c| {
            c.after_long_help(format!("Default config:\n\n{}", versioned_toml(&TrainConfig::default())))
        })
        .mut_subcommand("track", |c| {
            c.after_long_help(format!(
                "Default config:\n\n{}\nWhen match_threshold is unset the mode's default applies:\n{}\n",
                versioned_toml(&AssocConfig::default()),
                thresholds.join("\n")
            ))
        })
        .mut_subcommand("ablate", |c| {
            c.after_long_help(format!(
                "Example spec (use `benchmark = \"dir\"` instead of [generate] to reuse a benchmark on disk; \
                 seeds then only reach training):\n\n{}",
                example_spec()
            ))
        })
}

fn run(cli: Cli) -> CliResult {
    let jobs = cli.jobs.max(1);
    match cli.cmd {
        Cmd::Generate { config, preset, seed, sequences, out } => {
            generate(config.as_deref(), preset, seed, sequences, &out)
        }
        Cmd::Train { bench, strategy, seed, config, holdout, trace, out } => {
            train_cmd(&bench, strategy, seed, config.as_deref(), holdout, trace.as_deref(), &out)
        }
        Cmd::Track { bench, mode, params, attr_source, config, out } => {
            track_cmd(&bench, mode, params.as_deref(), attr_source, config.as_deref(), &out, jobs)
        }
        Cmd::Eval { gt, res, out, iou, keep_ignored_fp, tpr, params, max_crops, seed } => {
            let opts = EvalOptions { iou_threshold: iou, suppress_ignored_fp: !keep_ignored_fp };
            eval_cmd(&gt, &res, out.as_deref(), opts, tpr, params.as_deref(), max_crops, seed)
        }
        Cmd::Ablate { spec, out } => ablate_cmd(&spec, &out, jobs),
        Cmd::Verify => verify_cmd(),
    }
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tapgen::config::{EnsembleMode, PipelineConfig, Preset};
use tapgen::{cmd_ensemble, cmd_eval, cmd_infer, cmd_synth, cmd_train};

/// Temporal action proposal generation on precomputed snippet features.
#[derive(Debug, Parser)]
#[command(name = "tapgen", version)]
struct Cli {
    /// Built-in preset the configuration starts from.
    #[arg(long, value_enum, default_value = "desk", global = true)]
    preset: Preset,
    /// TOML file overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Output directory (defaults to the dataset directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the training subset.
    Train {
        /// Model file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss trace CSV to write.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Produce detections for the inference subset.
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Detection file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-window heatmap and score-map dumps.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Combine detection files, or the score maps of several models.
    Ensemble {
        /// Detection files (concat, multiscale) or model files (maps).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EnsembleMode>,
        /// Model weights for the maps mode.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Window scales matching the inputs for the multiscale mode.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a detection file against the ground truth.
    Eval {
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Report JSON to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<EnsembleMode, String> {
    match s {
        "concat" => Ok(EnsembleMode::Concat),
        "multiscale" => Ok(EnsembleMode::Multiscale),
        "maps" => Ok(EnsembleMode::Maps),
        _ => Err(format!("unknown mode {s:?}; expected concat, multiscale or maps")),
    }
}

fn run(cli: Cli) -> tapgen_core::Result<()> {
    let mut cfg = PipelineConfig::load(cli.preset, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(data) = cli.data {
        cfg.paths.data_dir = data;
    }
    match cli.command {
        Command::Synth { out } => {
            if let Some(out) = out {
                cfg.paths.data_dir = out;
            }
            let s = cmd_synth(&cfg)?;
            println!("wrote {} videos with {} instances to {}", s.videos, s.instances, s.root.display());
        }
        Command::Train { out, trace } => {
            if let Some(out) = out {
                cfg.paths.model = out;
            }
            if let Some(trace) = trace {
                cfg.paths.trace = trace;
            }
            let s = cmd_train(&cfg)?;
            println!(
                "trained {} parameters on {} windows: loss {:.6} -> {:.6}",
                s.parameters, s.windows, s.initial.total, s.last.total
            );
            println!("model: {}  trace: {}", s.model_path.display(), s.trace_path.display());
        }
        Command::Infer { model, out, dump } => {
            if let Some(model) = model {
                cfg.paths.model = model;
            }
            if let Some(out) = out {
                cfg.paths.detections = out;
            }
            if dump.is_some() {
                cfg.paths.dump_dir = dump;
            }
            let file = cmd_infer(&cfg)?;
            let n: usize = file.results.values().map(Vec::len).sum();
            println!("wrote {n} detections for {} videos to {}", file.results.len(), cfg.paths.detections.display());
        }
        Command::Ensemble {
            inputs,
            mode,
            weights,
            scales,
            out,
        } => {
            if let Some(mode) = mode {
                cfg.ensemble.mode = mode;
            }
            if let Some(weights) = weights {
                cfg.ensemble.weights = weights;
            }
            if let Some(scales) = scales {
                cfg.ensemble.scales = scales;
            }
            if let Some(out) = out {
                cfg.paths.detections = out;
            }
            let file = cmd_ensemble(&cfg, &inputs)?;
            let n: usize = file.results.values().map(Vec::len).sum();
            println!("wrote {n} detections for {} videos to {}", file.results.len(), cfg.paths.detections.display());
        }
        Command::Eval { detections, out } => {
            if let Some(d) = detections {
                cfg.paths.detections = d;
            }
            if let Some(out) = out {
                cfg.paths.report = out;
            }
            let result = cmd_eval(&cfg)?;
            print!("{}", result.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

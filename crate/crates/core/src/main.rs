use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use cxr_core::cli;
use cxr_core::config::RunConfig;
use cxr_core::data::Split;
use cxr_core::preproc::PreprocOp;

/// Chest X-ray preprocessing, training and evaluation.
#[derive(Parser)]
#[command(name = "cxr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one preprocessing operator to an image or a directory tree.
    Preprocess(PreprocessArgs),
    /// Train a network from a JSON run config.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<output.dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Write the stratified train/val/test manifest as CSV.
    Split(RunArgs),
    /// Generate the synthetic four-class pattern dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    /// identity, augment, histeq, ltp, threshold or hybrid.
    #[arg(long)]
    operator: String,
    #[arg(long)]
    out: PathBuf,
    /// Contrast gain (augment).
    #[arg(long)]
    alpha: Option<f64>,
    /// Brightness offset (augment).
    #[arg(long)]
    beta: Option<f64>,
    /// Ternary band half-width (ltp).
    #[arg(long)]
    t: Option<u8>,
    /// Odd Gaussian window side (threshold, hybrid).
    #[arg(long)]
    block: Option<usize>,
    /// Offset subtracted from the local mean (threshold, hybrid).
    #[arg(long)]
    c: Option<f64>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
        .map_err(|e: cxr_core::data::DataError| e.to_string())
}

impl PreprocessArgs {
    fn params(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("alpha", self.alpha.map(|v| json!(v)));
        put("beta", self.beta.map(|v| json!(v)));
        put("t", self.t.map(|v| json!(v)));
        put("block", self.block.map(|v| json!(v)));
        put("c", self.c.map(|v| json!(v)));
        Value::Object(m)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(args) => {
            let op = PreprocOp::parse(&args.operator, &args.params())?;
            cli::cmd_preprocess(&args.input, &op, &args.out)?;
        }
        Command::Train(args) => {
            let cfg = RunConfig::load(&args.config)?;
            let summary = cli::cmd_train(&cfg, args.seed, args.out.as_deref())?;
            println!("{}", summary.out_dir.join(cli::CHECKPOINT).display());
        }
        Command::Eval {
            run,
            checkpoint,
            split,
        } => {
            let cfg = RunConfig::load(&run.config)?;
            let cfg = match run.seed {
                Some(seed) => RunConfig {
                    train: cxr_core::config::TrainConfig {
                        seed,
                        ..cfg.train.clone()
                    },
                    ..cfg
                },
                None => cfg,
            };
            cli::cmd_eval(&cfg, checkpoint.as_deref(), split, run.out.as_deref())?;
        }
        Command::Split(args) => {
            let cfg = RunConfig::load(&args.config)?;
            let path = cli::cmd_split(&cfg, args.seed, args.out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Synth {
            out,
            per_class,
            size,
            seed,
        } => {
            cli::cmd_synth(&out, per_class, size, seed)?;
        }
    }
    Ok(())
}

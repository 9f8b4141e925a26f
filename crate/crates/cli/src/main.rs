mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Class-incremental learning with one VAE per class.
#[derive(Debug, Parser)]
#[command(name = "vaecil", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn every task of the stream, writing a checkpoint after each task.
    Train(Common),
    /// Evaluate a checkpoint on the test data of the learned tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate tasks 1..=UPTO only (default: all learned tasks).
        #[arg(long)]
        upto: Option<usize>,
    },
    /// Sweep r_intra or r_inter over a grid, one multi-seed run per value.
    Sweep {
        /// r_intra or r_inter.
        param: String,
        /// Comma-separated grid (default: the built-in grid for PARAM).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare loss ablations (var1, var2, var3, full) per stage.
    Ablate(Common),
    /// Run the fine-tune and/or joint softmax baselines.
    Baseline {
        /// finetune, joint or both.
        #[arg(default_value = "both")]
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Print the contents of a checkpoint.
    Inspect(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Key-value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the MNIST IDX files.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Training feature file (used instead of --dataset).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Test feature file, required with --features.
    #[arg(long)]
    test_features: Option<PathBuf>,
    #[arg(long)]
    classes_per_task: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    r_intra: Option<f64>,
    #[arg(long)]
    r_inter: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Seed of single-run commands.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds of multi-run commands.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory for checkpoints and tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// var1, var2, var3, full or all.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn flag_values(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("dataset", path(&self.dataset)),
            ("features", path(&self.features)),
            ("test_features", path(&self.test_features)),
            (
                "classes_per_task",
                self.classes_per_task.map(|v| v.to_string()),
            ),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("r_intra", self.r_intra.map(|v| v.to_string())),
            ("r_inter", self.r_inter.map(|v| v.to_string())),
            ("lambda1", self.lambda1.map(|v| v.to_string())),
            ("lambda2", self.lambda2.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("seeds", self.seeds.clone()),
            ("out", path(&self.out)),
            ("variant", self.variant.clone()),
            ("checkpoint", path(&self.checkpoint)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.flag_values() {
            cfg.set(key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => commands::train(&c.resolve()?),
        Command::Eval { common, upto } => commands::eval(&common.resolve()?, upto),
        Command::Sweep {
            param,
            values,
            common,
        } => commands::sweep(&common.resolve()?, &param, values),
        Command::Ablate(c) => commands::ablate(&c.resolve()?),
        Command::Baseline { kind, common } => commands::baseline(&common.resolve()?, &kind),
        Command::Inspect(c) => commands::inspect(&c.resolve()?),
    }
}

/// 2 for configuration and I/O problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config_or_io = err.chain().any(|cause| {
        cause
            .downcast_ref::<vaecil::Error>()
            .is_some_and(vaecil::Error::is_config_or_io)
            || cause.is::<std::io::Error>()
    });
    if config_or_io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

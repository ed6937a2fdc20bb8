use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::Settings;
use error::CliResult;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Teacher-student distillation for texture anomaly detection.
#[derive(Debug, Parser)]
#[command(name = "texdistill", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distill a student from the frozen teachers.
    Train(TrainArgs),
    /// Score a test set and report image/pixel AUROC.
    Eval(EvalArgs),
    /// Write anomaly maps, overlays and scores for images.
    Infer(InferArgs),
    /// Measure single-image inference latency.
    Bench(BenchArgs),
    /// Train and evaluate one reduced student per tap preset.
    AblateLayers(AblateArgs),
    /// Write a synthetic texture dataset in MVTec layout.
    MakeSynthetic(SynthArgs),
}

/// Declares an argument struct whose optional string flags map 1:1 onto
/// config keys.
macro_rules! keyed_args {
    ($name:ident { $($field:ident),* $(,)? }) => {
        #[derive(Debug, Args)]
        struct $name {
            /// Flat `key = value` config file.
            #[arg(long, short = 'c')]
            config: Option<PathBuf>,
            $(
                #[arg(long)]
                $field: Option<String>,
            )*
        }

        impl $name {
            const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn settings(&self) -> CliResult<Settings> {
                Settings::resolve(
                    Self::KEYS,
                    self.config.as_deref(),
                    vec![$((stringify!($field), self.$field.clone())),*],
                )
            }
        }
    };
}

keyed_args!(TrainArgs {
    method,
    data,
    category,
    data_seed,
    n_train,
    n_test_good,
    n_test_defect,
    seed,
    epochs,
    learning_rate,
    batch_size,
    alpha,
    input_size,
    split_ratio,
    resnet_weights,
    effnet_weights,
    preset,
    out_dir,
    threads,
});

keyed_args!(EvalArgs {
    checkpoint,
    data,
    category,
    data_seed,
    n_train,
    n_test_good,
    n_test_defect,
    fusion,
    batch_size,
    out_dir,
    threads,
});

keyed_args!(InferArgs {
    checkpoint,
    input,
    fusion,
    out_dir,
    threads
});

keyed_args!(BenchArgs {
    checkpoint,
    runs,
    warmup,
    input_size,
    fusion,
    out_dir,
    threads
});

keyed_args!(AblateArgs {
    presets,
    data,
    category,
    data_seed,
    n_train,
    n_test_good,
    n_test_defect,
    seed,
    epochs,
    learning_rate,
    batch_size,
    alpha,
    input_size,
    split_ratio,
    resnet_weights,
    out_dir,
    threads,
});

keyed_args!(SynthArgs {
    family,
    n_train,
    n_test_good,
    n_test_defect,
    data_seed,
    out_dir
});

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => commands::train(a.settings()?),
        Command::Eval(a) => commands::eval(a.settings()?),
        Command::Infer(a) => commands::infer(a.settings()?),
        Command::Bench(a) => commands::bench(a.settings()?),
        Command::AblateLayers(a) => commands::ablate_layers(a.settings()?),
        Command::MakeSynthetic(a) => commands::make_synthetic(a.settings()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("texdistill: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leakyspan::corpus::Split;
use leakyspan::ErrorKind;

mod commands;
mod config;

/// Memory-span analysis of leaky LSTMs on two-speaker separation.
#[derive(Debug, Parser)]
#[command(name = "leakyspan", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.batch_size=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Replaces the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 129 inputs, two bidirectional layers of 600 units, 2580 outputs.
    Large,
    /// The model section of the run configuration.
    Config,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the full default configuration.
    Defaults,
    /// Synthesise a speaker corpus, or mix one from `--from-wav`.
    PrepareCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Directory of `<speaker>/*.wav` recordings.
        #[arg(long)]
        from_wav: Option<PathBuf>,
    },
    /// Train a separation model.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// I-vector CSV; enables speaker conditioning.
        #[arg(long)]
        ivectors: Option<PathBuf>,
    },
    /// Separate one mixture into source WAVs.
    Separate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of sources; defaults to the separation section.
        #[arg(long)]
        sources: Option<usize>,
        /// I-vector CSV for conditioned models.
        #[arg(long, requires = "utterances")]
        ivectors: Option<PathBuf>,
        /// Utterance ids in the CSV, one per source.
        #[arg(long, value_delimiter = ',')]
        utterances: Vec<String>,
    },
    /// Score a model's SI-SDR improvement on one split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        ivectors: Option<PathBuf>,
    },
    /// Train and evaluate every cell of the lifetime grid.
    SweepLeak {
        #[arg(long, required_unless_present = "dry_run")]
        manifest: Option<PathBuf>,
        #[arg(long, required_unless_present = "dry_run")]
        out: Option<PathBuf>,
        #[arg(long)]
        ivectors: Option<PathBuf>,
        /// Print the job grid and exit.
        #[arg(long)]
        dry_run: bool,
        /// Keep finished rows of an existing sweep and run only the rest.
        #[arg(long)]
        resume: bool,
    },
    /// Compare leak-trained models with no-leak models tested under leak.
    Mismatch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ivectors: Option<PathBuf>,
    },
    /// Delayed-recall accuracy over the probe grid.
    ProbeMemory {
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter counts of every variant with and without leak.
    CountParams {
        #[arg(long, value_enum, default_value = "large")]
        preset: Preset,
    },
    /// Train the UBM and total-variability matrix on training utterances.
    TrainUbm {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract an i-vector for every utterance of a manifest.
    ExtractIvectors {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory written by `train-ubm`.
        #[arg(long)]
        speaker_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<leakyspan::Error>());
    match core.map(leakyspan::Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numerical) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

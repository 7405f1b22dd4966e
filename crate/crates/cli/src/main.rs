//! `drnmf`: corpus synthesis, dictionary and network training, separation,
//! evaluation and self-checks.

mod commands;
mod keys;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use keys::ConfigArgs;

#[derive(Parser)]
#[command(name = "drnmf", version, about = "Speech separation with sparse NMF and deep recurrent NMF")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus of clean/noise/mixture triplets and a manifest.
    Synth {
        /// Output directory for the WAV files and manifest.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the speech and noise dictionaries with sparse NMF.
    TrainNmf {
        #[arg(long)]
        manifest: PathBuf,
        /// Dictionary model file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a DR-NMF network initialized from a dictionary model.
    TrainDrnmf {
        /// Training manifest.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val_manifest: PathBuf,
        #[arg(long)]
        nmf_model: PathBuf,
        /// Best checkpoint, rewritten whenever validation loss improves.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV [default: <out>.history.csv].
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Enhance one WAV file frame by frame.
    Separate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Pass the STFT through unmasked (checks analysis and synthesis).
        #[arg(long)]
        identity_mask: bool,
        /// Samples read per chunk.
        #[arg(long, default_value_t = 16000)]
        chunk: usize,
        /// Print the process peak resident set size.
        #[arg(long)]
        report_memory: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a method on a manifest; writes per-utterance and per-SNR SDR.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Required for drnmf and snmf.
        #[arg(long)]
        model: Option<PathBuf>,
        /// SDR table (CSV).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare cold- and warm-start ISTA on a manifest's mixtures.
    Solve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        nmf_model: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Check backpropagated gradients against central differences.
    Gradcheck {
        /// Model size as F,N,K,T.
        #[arg(long, default_value = "9,6,2,5")]
        size: String,
        /// Flip the sign of one backward term; the check should then fail.
        #[arg(long)]
        corrupt: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Method {
    Drnmf,
    Snmf,
    Mixture,
    Clean,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Drnmf => "drnmf",
            Method::Snmf => "snmf",
            Method::Mixture => "mixture",
            Method::Clean => "clean",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] drnmf::Error),
    #[error("gradient check failed")]
    GradcheckFailed,
    #[error("initialization check failed: loss gap {0:.3e}")]
    InitMismatch(f64),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        use drnmf::Error as E;
        match self {
            Failure::Usage(_) => 1,
            Failure::GradcheckFailed | Failure::InitMismatch(_) => 2,
            Failure::Core(e) => match e {
                E::Config(_) | E::InvalidArgument(_) | E::Shape(_) => 1,
                E::NonFinite(_) | E::Overflow(_) | E::EmptySignal | E::ZeroEnergy(_) => 2,
                E::Io { .. } | E::Format { .. } => 3,
            },
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Synth { out, cfg } => commands::synth(&cfg.resolve()?, &out),
        Cmd::TrainNmf { manifest, out, cfg } => commands::train_nmf(&cfg.resolve()?, &manifest, &out),
        Cmd::TrainDrnmf { manifest, val_manifest, nmf_model, out, history, cfg } => {
            let history = history.unwrap_or_else(|| {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".history.csv");
                out.with_file_name(name)
            });
            commands::train_drnmf(&cfg.resolve()?, &manifest, &val_manifest, &nmf_model, &out, &history)
        }
        Cmd::Separate { model, input, output, identity_mask, chunk, report_memory, cfg } => {
            if chunk == 0 {
                return Err(Failure::Usage("--chunk must be positive".into()));
            }
            commands::separate(&cfg.resolve()?, &model, &input, &output, identity_mask, chunk, report_memory)
        }
        Cmd::Evaluate { manifest, method, model, out, cfg } => {
            if matches!(method, Method::Drnmf | Method::Snmf) && model.is_none() {
                return Err(Failure::Usage(format!("--model is required for method {}", method.name())));
            }
            commands::evaluate(&cfg.resolve()?, &manifest, method, model.as_deref(), &out)
        }
        Cmd::Solve { manifest, nmf_model, cfg } => commands::solve(&cfg.resolve()?, &manifest, &nmf_model),
        Cmd::Gradcheck { size, corrupt, cfg } => {
            let dims: Vec<usize> = size.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| {
                Failure::Usage(format!("--size expects F,N,K,T, got `{size}`"))
            })?;
            let [f, n, k, t] = dims[..] else {
                return Err(Failure::Usage(format!("--size expects four numbers, got `{size}`")));
            };
            commands::gradcheck(&cfg.resolve()?, (f, n, k, t), corrupt)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let command = Cli::command().after_help(keys::key_table());
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

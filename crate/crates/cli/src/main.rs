use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isslstm::data::{load_dir, write_atomic, Split};
use isslstm::thermal::SignalKind;
use isslstm_cli::checkpoint::Checkpoint;
use isslstm_cli::commands::{self, SimulateArgs, TrainArgs};
use isslstm_cli::{exit, CliError};

/// ISS-promoted LSTM identification of a two-zone thermal plant.
#[derive(Debug, Parser)]
#[command(name = "isslstm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark: one CSV per experiment plus manifest.csv.
    Simulate {
        /// Plant template (TOML); the built-in reference plant when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Only emit experiments of this kind (steps, prbs, packs, closed_loop_like).
        #[arg(long, value_parser = parse_kind)]
        signals: Option<SignalKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Duration of every experiment in hours; drawn from [2, 7.5] when omitted.
        #[arg(long)]
        duration_h: Option<f64>,
        /// Output noise standard deviation, °C.
        #[arg(long, default_value_t = 0.1)]
        noise_sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write a checkpoint plus the validation history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// History CSV; defaults to the checkpoint path with extension history.csv.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Worker threads for per-sequence work; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score a checkpoint on one split: per-output Fit, median Fit, MSE, ISS verdict.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the stability certificate of a checkpoint; exits 4 when it fails.
    CheckIss {
        #[arg(long)]
        ckpt: PathBuf,
        /// Key-value (TOML) copy of the certificate.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare BPTT gradients with central differences; exits 4 above 1e-6.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Networks audited per penalty weight.
        #[arg(long, default_value_t = 3)]
        trials: usize,
    },
}

fn parse_kind(s: &str) -> Result<SignalKind, String> {
    s.parse().map_err(|e: isslstm::thermal::ThermalError| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?}; expected train, val or test"))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Simulate { params, signals, seed, duration_h, noise_sigma, out } => {
            let ds = commands::simulate(&SimulateArgs { out: out.clone(), seed, params, signals, duration_h, noise_sigma })?;
            println!("wrote {} sequences and manifest.csv to {}", ds.sequences.len(), out.display());
        }
        Command::Train { data, config, out, history, threads } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Invalid(e.to_string()))?;
            }
            let ckpt = commands::train_command(&TrainArgs { data, config, out: out.clone(), history })?;
            println!("{}", ckpt.iss);
            println!("checkpoint written to {}", out.display());
        }
        Command::Eval { ckpt, data, split, out } => {
            let c = Checkpoint::load(&ckpt)?;
            let ds = load_dir(&data)?;
            let report = commands::evaluate(&c, &ds, split)?;
            if let Some(path) = out {
                let mut json = serde_json::to_string_pretty(&report).expect("report serialises");
                json.push('\n');
                write_atomic(&path, json.as_bytes())?;
            }
            println!("{report}");
        }
        Command::CheckIss { ckpt, out } => {
            let cert = commands::certify(&Checkpoint::load(&ckpt)?)?;
            if let Some(path) = out {
                write_atomic(&path, cert.to_toml().as_bytes())?;
            }
            println!("{cert}");
            if !cert.verdict {
                return Ok(exit::ASSERTION);
            }
        }
        Command::Gradcheck { seed, trials } => {
            let summary = commands::gradcheck(seed, trials)?;
            println!("{summary}");
            if !summary.passed() {
                return Ok(exit::ASSERTION);
            }
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISSLSTM_LOG", "info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

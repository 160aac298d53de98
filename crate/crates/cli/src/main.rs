use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use partconf_cli::error::CliError;
use partconf_cli::stages;
use partconf_cli::PipelineConfig;

/// Weakly supervised part-configuration discovery pipeline.
#[derive(Parser)]
#[command(name = "partconf", version, about)]
struct Cli {
    /// Pipeline configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset.
    Synth {
        /// Synthetic spec (TOML); defaults are used when omitted.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Output directory; defaults to the configured workdir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Select discriminative clusters by constrained greedy covering.
    Discover {
        /// Dataset manifest; defaults to <workdir>/manifest.jsonl.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Clusters file to write; defaults to <workdir>/clusters.json.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Mine recurring two-cluster configurations.
    MineConfigs {
        /// Clusters file; defaults to <workdir>/clusters.json.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Configurations file to write; estimates.json lands beside it.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Cut hard-negative strips from the mined configuration.
    Hardneg {
        /// Configurations file; defaults to <workdir>/configs.json.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Hard-negative file to write; defaults to <workdir>/hardneg.json.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train the detector with latent re-localization.
    Train {
        /// Estimates file; defaults to <workdir>/estimates.json.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Model file to write; defaults to <workdir>/model.json.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Report CorLoc (and AP once a model exists) against ground truth.
    Evaluate {
        /// Estimates file; defaults to <workdir>/estimates.json.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Report file to write; defaults to <workdir>/report.json.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Brute-force cross-checks of discovery and config mining.
    Oracle {
        /// Dataset manifest; defaults to <workdir>/manifest.jsonl.
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
        /// Oracle report to write; defaults to <workdir>/oracle.json.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn init_threads() {
    if let Ok(raw) = std::env::var("PARTCONF_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => log::warn!("ignoring invalid PARTCONF_THREADS value {raw:?}"),
        }
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match &cli.command {
        Command::Synth { input, out } => {
            stages::run_synth(&cfg, input.as_deref(), out.as_deref(), cli.seed)
        }
        Command::Discover { input, out } => {
            stages::run_discover(&cfg, input.as_deref(), out.as_deref())
        }
        Command::MineConfigs { input, out } => {
            stages::run_mine_configs(&cfg, input.as_deref(), out.as_deref())
        }
        Command::Hardneg { input, out } => {
            stages::run_hardneg(&cfg, input.as_deref(), out.as_deref())
        }
        Command::Train { input, out } => stages::run_train(&cfg, input.as_deref(), out.as_deref()),
        Command::Evaluate { input, out } => {
            stages::run_evaluate(&cfg, input.as_deref(), out.as_deref())
        }
        Command::Oracle { input, out } => {
            stages::run_oracle(&cfg, input.as_deref(), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();

    let cli = Cli::parse();
    match run(cli) {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({
                "error": e.to_string(),
                "kind": e.kind(),
                "code": e.exit_code(),
            });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

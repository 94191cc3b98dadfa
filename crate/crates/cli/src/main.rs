use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spikemem::pipeline::Ablation;
use spikemem_cli::commands::{cmd_ablate, cmd_eval, cmd_reconstruct, cmd_synth, cmd_train};
use spikemem_cli::error::EXIT_CONFIG;
use spikemem_cli::{CliError, CliResult, RunConfig};

/// Spiking autoencoder and associative-memory classifiers for multi-task EEG.
#[derive(Debug, Parser)]
#[command(name = "spikemem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed; overrides `plan.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationArg {
    NoSpiking,
    NoBam,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset as a trial bundle.
    Synth(Common),
    /// Train the codec and the per-task memories.
    Train(Common),
    /// Evaluate stored checkpoints on the held-out split.
    Eval(Common),
    /// Export reconstructed class waveforms, ERPs and spike rasters.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        #[arg(long = "class")]
        class: Option<usize>,
    },
    /// Run an ablated variant end to end.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        ablation: AblationArg,
    },
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.plan.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(c) => {
            let path = cmd_synth(&resolve(&c)?)?;
            println!("{}", path.display());
        }
        Command::Train(c) => {
            for path in cmd_train(&resolve(&c)?)? {
                println!("{}", path.display());
            }
        }
        Command::Eval(c) => print!("{}", cmd_eval(&resolve(&c)?)?.summary()),
        Command::Reconstruct {
            common,
            task,
            class,
        } => {
            for path in cmd_reconstruct(&resolve(&common)?, task.as_deref(), class)? {
                println!("{}", path.display());
            }
        }
        Command::Ablate { common, ablation } => {
            let ablation = match ablation {
                AblationArg::NoSpiking => Ablation::NoSpiking,
                AblationArg::NoBam => Ablation::NoBam,
            };
            print!("{}", cmd_ablate(&resolve(&common)?, ablation)?.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

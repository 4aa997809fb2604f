use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xbar_harness::{run, Command, Overrides};

#[derive(Parser)]
#[command(name = "xbar", version, about = "Adversarial robustness experiments on non-ideal crossbar models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); relative paths inside it resolve against its directory
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tune r_wire of each crossbar preset to its NF target
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Restrict calibration to these presets
        #[arg(long = "preset")]
        presets: Vec<String>,
    },
    /// Train the classifier
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train one learned crossbar model per preset
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the attack grid and write results.csv
    Attack {
        #[command(flatten)]
        common: Common,
    },
    /// Derive gain and accuracy curves from result tables
    Report {
        #[command(flatten)]
        common: Common,
        /// Additional results.csv files to include
        #[arg(long = "results")]
        results: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, cmd) = match cli.command {
        Cmd::Calibrate { common, presets } => (common, Command::Calibrate { presets }),
        Cmd::Train { common } => (common, Command::Train),
        Cmd::TrainSurrogate { common } => (common, Command::TrainSurrogate),
        Cmd::Attack { common } => (common, Command::Attack),
        Cmd::Report { common, results } => (common, Command::Report { results }),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
    };
    match run(&common.config, &overrides, &cmd) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.category(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

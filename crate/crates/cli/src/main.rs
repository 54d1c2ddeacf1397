use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use ssformer_cli::commands::{self, CliError, CliResult};
use ssformer_cli::config::{RunConfig, KEYS};

#[derive(Parser)]
#[command(name = "ssformer", version, about = "Train and inspect pyramid-transformer segmentation models")]
#[command(after_help = "Set SSF_LOG=quiet|info|debug to control logging (default: info).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.ckpt, log.csv, run.log and config.txt
    #[command(after_help = config_keys_help())]
    Train {
        /// Run configuration (key=value lines) [default: built-in defaults]
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Dataset directory with images/ and masks/; turns off synthetic data [default: from config]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides train.seed [default: from config]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print mean Dice and IoU of a checkpoint on a dataset
    Eval {
        /// Run configuration naming the architecture [default: built-in defaults]
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to evaluate
        #[arg(long, default_value = "run/model.ckpt")]
        ckpt: PathBuf,
        /// Dataset directory [default: validation data from config]
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a binary P5 mask predicted for one image
    Predict {
        /// Run configuration naming the architecture [default: built-in defaults]
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to use
        #[arg(long, default_value = "run/model.ckpt")]
        ckpt: PathBuf,
        /// Input image (P5 or P6)
        image: PathBuf,
        /// Output mask path
        output: PathBuf,
    },
    /// Check every gradient against central differences
    Gradcheck {
        #[arg(long, hide = true)]
        mutant: Option<String>,
    },
    /// Export feature and attention heatmaps for one image
    Heatmap {
        /// Run configuration naming the architecture [default: built-in defaults]
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to use
        #[arg(long, default_value = "run/model.ckpt")]
        ckpt: PathBuf,
        /// Input image (P5 or P6)
        image: PathBuf,
        /// Output directory
        #[arg(long, default_value = "heatmaps")]
        out: PathBuf,
    },
    /// Write a synthetic dataset as images/<id>.ppm and masks/<id>.pgm
    Synth {
        /// Number of samples
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Side length, a multiple of 32
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Generator seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
}

fn config_keys_help() -> String {
    let mut s = String::from("Config keys and defaults:\n");
    for (k, v) in KEYS {
        s.push_str(&format!("  {k}={v}\n"));
    }
    s
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn init_logging() {
    let level = match std::env::var("SSF_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train { config, out, data, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = data {
                cfg.dir = Some(d);
                cfg.synthetic = false;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = commands::train(&cfg, &out)?;
            if let Some(v) = outcome.last_val {
                println!("{}", commands::format_metrics(&v));
            }
        }
        Command::Eval { config, ckpt, data } => {
            let cfg = load_config(config.as_deref())?;
            println!("{}", commands::format_metrics(&commands::eval(&cfg, &ckpt, data.as_deref())?));
        }
        Command::Predict {
            config,
            ckpt,
            image,
            output,
        } => commands::predict(&load_config(config.as_deref())?, &ckpt, &image, &output)?,
        Command::Gradcheck { mutant } => {
            let mutant = match mutant.as_deref() {
                None => false,
                Some("conv2d") => true,
                Some(other) => return Err(CliError::Usage(format!("unknown mutant {other:?}"))),
            };
            let results = commands::gradcheck(mutant);
            for r in &results {
                println!("{}", commands::format_check(r));
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
            if !failed.is_empty() {
                return Err(CliError::Usage(format!("gradient check failed: {}", failed.join(", "))));
            }
        }
        Command::Heatmap {
            config,
            ckpt,
            image,
            out,
        } => {
            for p in commands::heatmap(&load_config(config.as_deref())?, &ckpt, &image, &out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Synth { n, size, seed, out } => commands::synth(n, size, seed, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

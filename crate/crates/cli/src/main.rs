use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nar_cli::commands::{self, TrainOptions};
use nar_cli::{CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nar", version, about = "Train and evaluate neural algorithmic reasoners in baseline, forget and gated history modes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides),
            None => ExperimentConfig::parse("", &self.overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets for every configured algorithm.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Replace existing dataset files whose contents differ.
        #[arg(long)]
        force: bool,
    },
    /// Train one run per seed, resuming from the latest checkpoint if present.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Start over instead of resuming.
        #[arg(long)]
        fresh: bool,
        /// Stop after this many steps.
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Run the λ pilot for every seed of a gated config.
    CalibrateLambda {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a run on its val and test splits and on extra test sizes.
    Eval {
        run_dir: PathBuf,
        /// Extra test sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Tabulate test micro-F1 by algorithm and mode over the runs found under the given paths.
    Compare {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write loss, gate-norm and per-step curves (CSV and SVG) for a run.
    Plots { run_dir: PathBuf },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { cfg, force } => {
            for p in commands::gen_data(&cfg.load()?, force)? {
                println!("{}", p.display());
            }
        }
        Command::Train { cfg, fresh, stop_at } => {
            for d in commands::train(&cfg.load()?, &TrainOptions { fresh, stop_at })? {
                println!("{}", d.display());
            }
        }
        Command::CalibrateLambda { cfg } => {
            let cfg = cfg.load()?;
            for (seed, c) in cfg.seeds.iter().zip(commands::calibrate_all(&cfg)?) {
                println!("seed {seed}: lambda = {} (L = {:.6}, P = {:.6}, degenerate = {})", c.lambda, c.l_hat, c.p_hat, c.degenerate);
            }
        }
        Command::Eval { run_dir, sizes } => {
            for r in commands::eval(&run_dir, &sizes)? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Command::Compare { paths, json } => {
            let c = commands::compare(&paths)?;
            print!("{}", c.to_markdown());
            if let Some(p) = json {
                std::fs::write(p, serde_json::to_string_pretty(&c)?)?;
            }
        }
        Command::Plots { run_dir } => {
            for p in commands::plots(&run_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fernmatch_cli::commands::NO_MODEL;
use fernmatch_cli::{cmd_eval, cmd_inspect, cmd_match, cmd_train, CliError, MatchOptions, RunConfig};

#[derive(Parser)]
#[command(name = "fernmatch", version, about = "Train and run random-fern keypoint recognizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Match a trained model against a test image.
    Match {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop matches whose best log-score is below this.
        #[arg(long, allow_negative_numbers = true)]
        min_score: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate ferns and the NCC baseline on held-out warps.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        test_warps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed.eval` from the config.
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Print a model file's header and training report.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let config = RunConfig::load(&config)?;
            let out = cmd_train(&config)?;
            if !out.report.untrained_classes.is_empty() {
                eprintln!(
                    "warning: {} classes received no training patches",
                    out.report.untrained_classes.len()
                );
            }
            println!("model written to {}", out.model_path.display());
            println!("report written to {}", out.report_path.display());
        }
        Command::Match {
            model,
            image,
            out,
            min_score,
            seed,
        } => {
            let mut opts = MatchOptions::default();
            if let Some(s) = min_score {
                opts.min_log_score = s;
            }
            opts.ransac.seed = seed;
            let result = cmd_match(&model, &image, &out, &opts)?;
            match &result.fit {
                Some(f) => println!(
                    "{} correspondences, {} inliers",
                    result.correspondences.len(),
                    f.inliers.len()
                ),
                None => println!("{} correspondences, {NO_MODEL}", result.correspondences.len()),
            }
        }
        Command::Eval {
            config,
            test_warps,
            out,
            split_seed,
        } => {
            let config = RunConfig::load(&config)?;
            let seed = split_seed.unwrap_or(config.eval_seed);
            let result = cmd_eval(&config, test_warps, seed, &out)?;
            println!("{}", serde_json::to_string_pretty(&result.outcome.summary)?);
        }
        Command::Inspect { model } => print!("{}", cmd_inspect(&model)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use igeood::datastore::ToySpec;
use igeood_cli::histogram::{histogram, read_scores};
use igeood_cli::synth::{synth, SynthSpec};
use igeood_cli::toy::run_toy;
use igeood_cli::{run, CliResult, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(
    name = "igeood",
    version,
    about = "Fisher-Rao out-of-distribution detection runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, tune, score and evaluate one experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equal-width histogram of a `population,score` CSV.
    Histogram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-dimensional Fisher-Rao versus Mahalanobis comparison.
    Toy {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        mu1: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        sigma1: f64,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        mu2: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        sigma_a: f64,
        #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
        sigma_b: f64,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic fixture: dumps, trained model and configs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            threads,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                seed,
                threads: Some(threads),
                out,
            };
            let report = run(&cfg, &opts)?;
            print!("{}", report.to_csv()?);
        }
        Command::Histogram { input, bins, out } => {
            let scores = read_scores(&input)?;
            histogram(&scores, bins)?.write(&out)?;
        }
        Command::Toy {
            mu1,
            sigma1,
            mu2,
            sigma_a,
            sigma_b,
            n,
            seed,
            bins,
            out,
        } => {
            let spec = ToySpec {
                mu1,
                sigma1,
                mu2,
                sigma_a,
                sigma_b,
                n,
                seed,
            };
            let report = run_toy(&spec, out.as_deref(), bins)?;
            println!("score,ood_set,auroc");
            for r in &report.rows {
                println!(
                    "{},{},{}",
                    r.score,
                    r.ood_set,
                    igeood_cli::report::fmt17(r.auroc)
                );
            }
        }
        Command::Synth { out, seed } => {
            synth(
                &SynthSpec {
                    seed,
                    ..SynthSpec::default()
                },
                &out,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("igeood: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

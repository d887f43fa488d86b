use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ham_cli::commands::{self, Split};

#[derive(Parser)]
#[command(name = "ham", version, about = "Adversarial training with hard adversarial example mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: cifar10-full, svhn-full or mnist-desk.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue an interrupted run from its latest checkpoint.
        #[arg(long, conflicts_with_all = ["config", "preset", "seed"])]
        resume: Option<PathBuf>,
        /// Run directory (default: <output_dir>/<run_id>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Class-wise standard, boundary and robust errors of a checkpoint.
    Evaluate {
        checkpoint: PathBuf,
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Over-confidence scatter and minimal-step histogram of a checkpoint.
    Diagnose {
        checkpoint: PathBuf,
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one mining parameter across seeds.
    Ablate {
        #[command(flatten)]
        source: ConfigSource,
        /// Sweep file with `parameter` and `values`.
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Render SVG figures from a run directory or an ablation summary.
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a built-in preset as TOML, as a starting point for a config file.
    Preset { name: String },
    /// Comparison table over finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = commands::ReportFormat::Markdown)]
        format: commands::ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            source,
            seed,
            resume,
            out,
            quiet,
        } => {
            let summary = commands::train(&commands::TrainArgs {
                config: source.config,
                preset: source.preset,
                seed,
                resume,
                out,
                quiet,
            })?;
            println!("{}", commands::format_fairness(&summary.report));
            println!("run directory: {}", summary.run_dir.display());
        }
        Command::Evaluate {
            checkpoint,
            source,
            split,
            out,
        } => {
            let (report, out) = commands::evaluate(&commands::EvaluateArgs {
                checkpoint,
                config: source.config,
                preset: source.preset,
                split,
                out,
            })?;
            println!("{}", commands::format_fairness(&report));
            println!("reports written to {}", out.display());
        }
        Command::Diagnose {
            checkpoint,
            source,
            split,
            out,
        } => {
            let d = commands::diagnose(&commands::DiagnoseArgs {
                checkpoint,
                config: source.config,
                preset: source.preset,
                split,
                out,
            })?;
            println!("class  over-confident  robust-acc");
            for (c, (p, r)) in d.overconfidence.per_class_proportion.iter().zip(&d.robust_accuracy).enumerate() {
                println!("{c:>5}  {:>14.2}  {:>10.2}", 100.0 * p, 100.0 * r);
            }
            println!(
                "easy after {} steps: {:.2}%",
                d.early_drop_step,
                100.0 * d.histogram.easy_fraction_at(d.early_drop_step)
            );
            println!("diagnostics written under {}", d.out.display());
        }
        Command::Ablate {
            source,
            sweep,
            jobs,
            out,
            quiet,
        } => {
            let out = commands::run_ablation(&commands::AblateArgs {
                config: source.config,
                preset: source.preset,
                sweep,
                jobs,
                out,
                quiet,
            })?;
            println!("summary: {}", out.join("summary.csv").display());
        }
        Command::Plot { input, out } => {
            for f in commands::plot(&commands::PlotArgs { input, out })? {
                println!("{}", f.display());
            }
        }
        Command::Preset { name } => print!("{}", ham_cli::presets::preset(&name)?.to_toml()),
        Command::Report { runs, format, out } => {
            let table = commands::report(&commands::ReportArgs {
                runs,
                format,
                out: out.clone(),
            })?;
            if out.is_none() {
                print!("{table}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

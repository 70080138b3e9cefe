use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use flowsvdd::pipeline::{self, EvalSplit};

#[derive(Parser)]
#[command(
    name = "flowsvdd",
    about = "Train and evaluate a flow-based one-class classifier",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Auto,
}

impl From<SplitArg> for EvalSplit {
    fn from(s: SplitArg) -> EvalSplit {
        match s {
            SplitArg::Train => EvalSplit::Train,
            SplitArg::Test => EvalSplit::Test,
            SplitArg::Auto => EvalSplit::Auto,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run manifest
    Train {
        /// Path to the run manifest
        #[arg(long)]
        manifest: PathBuf,
        /// Override the manifest's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a dataset split and write a metrics report
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest
        #[arg(long)]
        data: PathBuf,
        /// Which split to evaluate
        #[arg(long, value_enum, default_value = "auto")]
        split: SplitArg,
        /// F1 threshold ratio; defaults to the split's true anomaly ratio
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Export a 2-d boundary grid (and optionally latent embeddings)
    Grid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = -2.0)]
        xmin: f64,
        #[arg(long, default_value_t = 2.0)]
        xmax: f64,
        #[arg(long, default_value_t = -2.0)]
        ymin: f64,
        #[arg(long, default_value_t = 2.0)]
        ymax: f64,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long, default_value = "grid.csv")]
        out: PathBuf,
        /// Dataset manifest whose training split gets embedded
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write the embedded training points
        #[arg(long)]
        latent_out: Option<PathBuf>,
    },
    /// Report best-k and worst-k examples by center distance
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        split: SplitArg,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "ranks.json")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> pipeline::Result<()> {
    match cli.command {
        Command::Train { manifest, seed } => {
            let art = pipeline::cmd_train(&manifest, seed)?;
            println!("model: {}", art.model_path.display());
            println!("history: {}", art.history_path.display());
            println!(
                "final R^2 = {:.6}, train violation fraction = {:.4}",
                art.final_radius_sq, art.final_violation_fraction
            );
        }
        Command::Eval { model, data, split, ratio, out } => {
            let report = pipeline::cmd_eval(&model, &data, split.into(), ratio, &out)?;
            match (report.auc, report.f1) {
                (Some(a), Some(f)) => println!("auc = {:.4}, f1 = {:.4}", a, f),
                _ => println!("no labels: scores only"),
            }
            println!("violation fraction = {:.4}", report.violation_fraction);
            println!("report: {}", out.display());
        }
        Command::Grid {
            model,
            xmin,
            xmax,
            ymin,
            ymax,
            resolution,
            out,
            data,
            latent_out,
        } => {
            let art = pipeline::cmd_grid(
                &model,
                [xmin, xmax, ymin, ymax],
                resolution,
                &out,
                data.as_deref(),
                latent_out.as_deref(),
            )?;
            println!("grid: {}", art.grid_path.display());
            if let Some(lp) = art.latent_path {
                println!("latent: {}", lp.display());
            }
        }
        Command::Rank { model, data, split, k, out } => {
            pipeline::cmd_rank(&model, &data, split.into(), k, &out)?;
            println!("ranks: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {}", s);
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

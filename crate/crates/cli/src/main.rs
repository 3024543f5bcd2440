//! `spectr`: data generation, training, evaluation, ablation, attention
//! export and gradient self-checks.
//!
//! Exit codes: 0 success, 1 numeric failure (non-finite values, gradient
//! check breach), 2 usage, configuration or input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "spectr", version, about = "Sparse spectral transformer segmentation on hyperspectral cubes")]
struct Cli {
    /// Fixed reduction order inside data-parallel kernels, so results do not
    /// depend on the worker count.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic phantom dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
        /// Discriminative band window, inclusive.
        #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
        window: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Phantom settings; flags override them.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model and save the checkpoint with the best test DSC.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also save the state after the last epoch here.
        #[arg(long)]
        last: Option<PathBuf>,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-epoch log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-image DSC, IoU and HD of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = commands::SplitPart::Test)]
        split: commands::SplitPart,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train and evaluate the eight design variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Attention sparsity statistics and heatmaps for one cube.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask for the lesion/background split.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Band window for the mass ratio, inclusive.
        #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
        window: Option<Vec<usize>>,
    },
    /// Finite-difference gradient checks of every differentiable piece.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("SPECTR_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("SPECTR_THREADS must be a number, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    spectr::parallel::set_deterministic(cli.deterministic);
    match cli.command {
        Command::Gen { out, n, width, height, bands, window, seed, config, force } => {
            commands::gen(commands::GenArgs { out, n, width, height, bands, window, seed, config, force })
        }
        Command::Train { config, data, out, last, resume, log, seed } => {
            commands::train(commands::TrainArgs { config, data, out, last, resume, log, seed })
        }
        Command::Eval { ckpt, data, report, split, threshold } => commands::eval(&ckpt, &data, &report, split, threshold),
        Command::Ablate { config, data, out, seed } => commands::ablate(&config, &data, &out, seed),
        Command::Attn { ckpt, cube, out, mask, window } => commands::attn(&ckpt, &cube, &out, mask.as_deref(), window),
        Command::Gradcheck { seed } => commands::gradcheck(seed),
    }
}

fn is_numeric(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<spectr::Error>().is_some_and(spectr::Error::is_numeric)
            || e.downcast_ref::<commands::NumericFailure>().is_some()
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_numeric(&e) { 1 } else { 2 })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wormhole_cli::{diag, run, table, CliError};
use wormhole_core::wormhole::WormholeKind;

#[derive(Parser)]
#[command(name = "wormhole", version, about = "Vanilla and Wormhole MAML experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes run.json and curves.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set epochs=10.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the method x step-count grid; writes table.csv, cells.csv and table.txt.
    Table {
        /// avg, wavelet, mnist or all.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override applied to every cell, e.g. --set epochs=10.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Numerical checks and analysis probes.
    Diag {
        #[command(subcommand)]
        which: Diag,
    },
}

#[derive(Subcommand)]
enum Diag {
    /// Finite-difference check of first and second derivatives.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        graphs: usize,
    },
    /// Median |c* - 1| per batch size as CSV.
    Cstar {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Allow batches dominated by one class.
        #[arg(long)]
        unbalanced: bool,
        /// Directory for cstar.csv; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cosine similarity between per-task meta-gradients.
    Conflict {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(long, default_value = "vanilla")]
        kind: WormholeKind,
        /// Use one task and its sign flip at theta = 0.
        #[arg(long)]
        flipped: bool,
    },
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run { config, set, out } => run::cmd_run(&config, &set, &out),
        Command::Table { task, seeds, out, set } => table::cmd_table(&task, seeds, &set, &out),
        Command::Diag { which } => match which {
            Diag::Gradcheck { seed, graphs } => diag::cmd_gradcheck(seed, graphs),
            Diag::Cstar { seed, sizes, trials, unbalanced, out } => {
                diag::cmd_cstar(seed, &sizes, trials, !unbalanced, out.as_deref())
            }
            Diag::Conflict { seed, episodes, kind, flipped } => diag::cmd_conflict(seed, episodes, kind, flipped),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

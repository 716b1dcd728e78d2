use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use equitab_harness::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "equitab", version, about = "Train, probe and benchmark equivariant tabular classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Pre-train on prior batches; writes train_log.tsv, state.ckpt, model.ckpt
    Train(Common),
    /// Class maps of the 3x3 nine-class lattice under several orderings
    Grid(Common),
    /// Accuracy and wall-clock against k-NN on a task suite
    Bench(Common),
    /// Equivariance gap, squared-loss identity and ensemble sweep
    Equigap(Common),
    /// Finite-difference check of every primitive and of tiny full losses
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; a previous manifest works too
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override one key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Sub::Train(c) => (Command::Train, c),
        Sub::Grid(c) => (Command::Grid, c),
        Sub::Bench(c) => (Command::Bench, c),
        Sub::Equigap(c) => (Command::Equigap, c),
        Sub::Gradcheck(c) => (Command::Gradcheck, c),
    };
    let result = RunConfig::resolve(command, c.config.as_deref(), c.seed, &c.out, &c.set).and_then(|r| run(&r));
    match result {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

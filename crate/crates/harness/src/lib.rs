//! Reproducible, file-emitting experiment runs around the `equitab` crate.
//!
//! Each subcommand resolves a flat configuration ([`config`]), writes its
//! result files into an output directory and finishes with a manifest
//! ([`manifest`]) that echoes the resolved configuration and checksums every
//! result. Feeding a manifest back in as `--config` repeats the run.

pub mod bench;
pub mod config;
pub mod equigap;
mod error;
pub mod gradcheck;
pub mod grid;
pub mod knn;
pub mod manifest;
pub mod models;
pub mod train;

pub use config::{Command, RunConfig};
pub use error::{HarnessError, Result};

/// Seed of item `i` in stream `stream` of a run seeded with `seed`.
pub fn stream_seed(seed: u64, stream: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (stream << 40) ^ i as u64
}

/// Runs one resolved command; returns a short human-readable summary.
pub fn run(run: &RunConfig) -> Result<String> {
    Ok(match run.command {
        Command::Train => {
            let o = train::cmd_train(run)?;
            match o.final_eval_loss() {
                Some(l) => format!("trained to step {}; final eval loss {l:.6}", o.step),
                None => format!("at step {}; no evaluation point reached", o.step),
            }
        }
        Command::Grid => {
            let results = grid::cmd_grid(run)?;
            let parts: Vec<String> = results.iter().map(|(l, g)| format!("{l}: {} differing cells", g.differing_cells())).collect();
            parts.join("; ")
        }
        Command::Bench => bench::render(&bench::cmd_bench(run)?),
        Command::Equigap => {
            let o = equigap::cmd_equigap(run)?;
            format!("{}identity {}", o.report, o.identity)
        }
        Command::Gradcheck => {
            let tol: f64 = run.get("tolerance")?;
            gradcheck::render(&gradcheck::cmd_gradcheck(run)?, tol)
        }
    })
}

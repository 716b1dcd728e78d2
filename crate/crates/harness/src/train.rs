//! `train`: pre-training with a resumable log and checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use equitab::checkpoint::{load_checkpoint, model_checkpoint, save_checkpoint};
use equitab::trainer::{LogRow, TrainConfig, Trainer};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{write_manifest, Artifact};

pub const LOG_FILE: &str = "train_log.tsv";
/// Parameters, optimiser state and progress; resumable.
pub const STATE_FILE: &str = "state.ckpt";
/// Parameters only.
pub const MODEL_FILE: &str = "model.ckpt";

pub fn train_config(run: &RunConfig) -> Result<TrainConfig> {
    let config = TrainConfig {
        total_batches: run.get("total_batches")?,
        batch_size: run.get("batch_size")?,
        lr_max: run.get("lr_max")?,
        warmup_batches: run.get("warmup_batches")?,
        beta1: run.get("beta1")?,
        beta2: run.get("beta2")?,
        eps: run.get("adam_eps")?,
        seed: run.seed,
        eval_every: run.get("eval_every")?,
        eval_episodes: run.get("eval_episodes")?,
        grad_clip: run.get_opt("grad_clip")?,
        prior: run.prior()?,
        model: run.model_kind("model")?,
        model_config: run.model_config()?,
        q_max: run.get("model.q_max")?,
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub step: u64,
    /// Rows written by this invocation.
    pub rows: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn final_eval_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.eval_loss)
    }
}

/// Trains up to `stop_at` (default: the full schedule). With `resume` set
/// the log is appended to, otherwise it is started afresh.
pub fn cmd_train(run: &RunConfig) -> Result<TrainOutcome> {
    let config = train_config(run)?;
    std::fs::create_dir_all(&run.out).map_err(HarnessError::io(&run.out))?;
    let log_path = run.out.join(LOG_FILE);
    let resume: Option<String> = run.get_opt("resume")?;
    let mut trainer = match &resume {
        Some(path) => Trainer::resume(config.clone(), &load_checkpoint(Path::new(path))?)?,
        None => Trainer::new(config.clone())?,
    };
    let mut log = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(HarnessError::io(&log_path))?;
    if resume.is_none() || log.metadata().map(|m| m.len() == 0).unwrap_or(true) {
        writeln!(log, "{}", LogRow::HEADER).map_err(HarnessError::io(&log_path))?;
    }

    let stop = run.get_opt::<u64>("stop_at")?.unwrap_or(config.total_batches).min(config.total_batches);
    let state_path = run.out.join(STATE_FILE);
    let mut rows = Vec::new();
    while trainer.step() < stop {
        let next = ((trainer.step() / config.eval_every + 1) * config.eval_every).min(stop);
        for row in trainer.run_until(next, |_| {})? {
            writeln!(log, "{row}").map_err(HarnessError::io(&log_path))?;
            rows.push(row);
        }
        log.flush().map_err(HarnessError::io(&log_path))?;
        save_checkpoint(&state_path, &trainer.checkpoint())?;
    }
    if !state_path.exists() {
        save_checkpoint(&state_path, &trainer.checkpoint())?;
    }
    save_checkpoint(&run.out.join(MODEL_FILE), &model_checkpoint(trainer.model()))?;
    write_manifest(
        run,
        &[Artifact::timed(LOG_FILE, "seconds"), Artifact::exact(STATE_FILE), Artifact::exact(MODEL_FILE)],
    )?;
    Ok(TrainOutcome { step: trainer.step(), rows })
}

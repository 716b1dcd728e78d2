//! `equigap`: equivariance audit of one predictor.

use std::fmt::Write as _;
use std::io::Write as _;

use equitab::lab::{gap_estimate, sq_identity_check, violation_rate, GapReport, IdentityCheck, Loss};
use equitab::predictor::{ensemble_forward, FnPredictor, PermSet};
use equitab::prior::{sample_episode, IntRange, PriorConfig};
use equitab::{Episode, Model, Predictor};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{write_manifest, Artifact};
use crate::models::load_model;
use crate::stream_seed;

pub const REPORT_FILE: &str = "gap_report.txt";
pub const IDENTITY_FILE: &str = "identity.txt";
pub const SWEEP_FILE: &str = "sweep.tsv";
/// Summary lines of successive runs, appended.
pub const RESULTS_LOG: &str = "results.log";
pub const SWEEP_HEADER: &str = "n_ens\tviolation_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct EquigapOutcome {
    pub report: GapReport,
    pub identity: IdentityCheck,
    pub sweep: Vec<(usize, f64)>,
}

/// Prior episodes with a fixed class count.
pub fn lab_episodes(prior: &PriorConfig, q: usize, count: usize, seed: u64) -> Result<Vec<Episode>> {
    let prior = PriorConfig {
        n_classes: IntRange::fixed(q),
        n_train: IntRange::new(prior.n_train.lo.max(q), prior.n_train.hi.max(q)),
        ..prior.clone()
    };
    prior.validate()?;
    Ok((0..count).map(|i| sample_episode(&prior, stream_seed(seed, 7, i))).collect::<Result<_, _>>()?)
}

/// Mean violation rate of `n_ens`-member ensembles of `f`.
pub fn ensemble_sweep<P: Predictor>(f: &P, episodes: &[Episode], sizes: &[usize], n_perms: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    sizes
        .iter()
        .map(|&n| {
            let ens = FnPredictor(|e: &Episode| ensemble_forward(e, f, n, seed));
            Ok((n, violation_rate(&ens, episodes, n_perms, seed)?))
        })
        .collect()
}

pub fn audit<P: Predictor>(f: &P, episodes: &[Episode], run: &RunConfig) -> Result<EquigapOutcome> {
    let loss = Loss::parse(run.raw("loss"))?;
    let mode = match run.raw("perms") {
        "exhaustive" => PermSet::Exhaustive { force: run.get("force_exhaustive")? },
        "sampled" => PermSet::Sampled { n: run.get("n_perms")?, seed: run.seed },
        _ => return Err(run.bad("perms", "expected exhaustive or sampled")),
    };
    let report = gap_estimate(f, episodes, loss, &mode)?;
    let identity = sq_identity_check(f, episodes, &mode)?;
    let sizes = run.get_list("sweep").iter().map(|s| s.parse::<usize>().map_err(|e| run.bad("sweep", e.to_string()))).collect::<Result<Vec<_>>>()?;
    let sweep = ensemble_sweep(f, episodes, &sizes, run.get("violation_perms")?, run.seed)?;
    Ok(EquigapOutcome { report, identity, sweep })
}

pub fn cmd_equigap(run: &RunConfig) -> Result<EquigapOutcome> {
    let named = load_model(run.raw("model"), run)?;
    let episodes = lab_episodes(&run.prior()?, run.get("n_classes")?, run.get("episodes")?, run.seed)?;
    let outcome = match run.raw("precision") {
        "f64" => audit(&named.model.cast::<f64>(), &episodes, run)?,
        "f32" => audit::<Model<f32>>(&named.model, &episodes, run)?,
        _ => return Err(run.bad("precision", "expected f32 or f64")),
    };
    std::fs::create_dir_all(&run.out).map_err(HarnessError::io(&run.out))?;
    let write = |name: &str, text: &str| {
        let path = run.out.join(name);
        std::fs::write(&path, text).map_err(HarnessError::io(&path))
    };
    write(REPORT_FILE, &outcome.report.to_string())?;
    write(IDENTITY_FILE, &format!("{}\n", outcome.identity))?;
    let mut sweep = format!("{SWEEP_HEADER}\n");
    for (n, v) in &outcome.sweep {
        let _ = writeln!(sweep, "{n}\t{v:.6}");
    }
    write(SWEEP_FILE, &sweep)?;
    let log_path = run.out.join(RESULTS_LOG);
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&log_path).map_err(HarnessError::io(&log_path))?;
    writeln!(log, "model={} {}", named.label, outcome.report.summary_line()).map_err(HarnessError::io(&log_path))?;
    write_manifest(run, &[Artifact::exact(REPORT_FILE), Artifact::exact(IDENTITY_FILE), Artifact::exact(SWEEP_FILE)])?;
    Ok(outcome)
}

//! `bench`: accuracy and wall-clock per task and model, relative to k-NN.

use std::fmt::Write as _;
use std::path::Path;

use equitab::csv_load::load_csv;
use equitab::ecoc::timed;
use equitab::prior::{sample_episode, Family, IntRange, PriorConfig};
use equitab::trainer::accuracy;
use equitab::{Episode, Error, Predictor};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::knn::Knn;
use crate::manifest::{write_manifest, Artifact};
use crate::models::{load_models, Routed};
use crate::stream_seed;

pub const RESULTS_FILE: &str = "bench.tsv";
pub const HEADER: &str = "task\tmodel\taccuracy\trel_acc_vs_knn\tseconds";
pub const KNN_LABEL: &str = "knn";
pub const MEDIAN_TASK: &str = "median";

pub struct Task {
    pub name: String,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub task: String,
    pub model: String,
    /// `None` when the model cannot handle the task.
    pub accuracy: Option<f64>,
    pub rel_acc_vs_knn: Option<f64>,
    pub seconds: Option<f64>,
}

impl BenchRow {
    pub fn line(&self) -> String {
        match (self.accuracy, self.rel_acc_vs_knn, self.seconds) {
            (Some(a), Some(r), Some(s)) => format!("{}\t{}\t{a:.6}\t{r:.4}\t{s:.4}", self.task, self.model),
            _ => format!("{}\t{}\tunsupported\tunsupported\t-", self.task, self.model),
        }
    }
}

pub fn render(rows: &[BenchRow]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.line());
    }
    s
}

fn generated(name: &str, prior: &PriorConfig, count: usize, seed: u64, idx: usize) -> Result<Task> {
    prior.validate()?;
    let episodes = (0..count).map(|i| sample_episode(prior, stream_seed(seed, idx as u64, i))).collect::<Result<_, _>>()?;
    Ok(Task { name: name.to_string(), episodes })
}

/// Materialises the suite once; every model sees the same episodes.
pub fn build_suite(run: &RunConfig) -> Result<Vec<Task>> {
    let count: usize = run.get("episodes")?;
    let base = run.prior()?;
    let mut tasks = Vec::new();
    for (idx, name) in run.get_list("tasks").iter().enumerate() {
        let task = match name.as_str() {
            "seen-q" => generated("blobs-seen-q", &base, count, run.seed, idx)?,
            "unseen-q" => {
                let q: usize = run.get("unseen_q")?;
                let prior = PriorConfig {
                    n_classes: IntRange::fixed(q),
                    n_train: IntRange::new(base.n_train.lo.max(q), base.n_train.hi.max(q)),
                    ..base.clone()
                };
                generated(&format!("blobs-unseen-q{q}"), &prior, count, run.seed, idx)?
            }
            "separable" => {
                let separation: f64 = run.get("separable_separation")?;
                let prior = PriorConfig { family: Family::Blobs { separation }, ..base.clone() };
                generated("blobs-separable", &prior, count, run.seed, idx)?
            }
            _ => return Err(run.bad("tasks", format!("unknown task `{name}`"))),
        };
        tasks.push(task);
    }
    let label: String = run.get("csv_label")?;
    let split: f64 = run.get("csv_split")?;
    for path in run.get_list("csv") {
        let path = Path::new(&path);
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let episodes = (0..count)
            .map(|i| load_csv(path, &label, split, stream_seed(run.seed, 0xC5, i)))
            .collect::<Result<_, _>>()?;
        tasks.push(Task { name: format!("csv-{stem}"), episodes });
    }
    Ok(tasks)
}

/// Mean accuracy and total seconds, or `None` on a capacity error.
pub fn evaluate<P: Predictor + ?Sized>(f: &P, episodes: &[Episode]) -> Result<Option<(f64, f64)>> {
    let mut acc = 0.0;
    let mut secs = 0.0;
    for e in episodes {
        let (p, dt) = timed(|| f.predict(e));
        match p {
            Ok(p) => acc += accuracy(&p, &e.test_labels()),
            Err(Error::Capacity(_)) => return Ok(None),
            Err(other) => return Err(other.into()),
        }
        secs += dt;
    }
    Ok(Some((acc / episodes.len().max(1) as f64, secs)))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn rel_vs_knn(acc: f64, knn: f64) -> f64 {
    100.0 * (acc - knn) / knn
}

/// Runs every predictor on every task; rows sorted by (task, model) with a
/// `median` task aggregating the supported rows of each model.
pub fn run_bench(tasks: &[Task], predictors: &[(String, &dyn Predictor)], knn: &dyn Predictor) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for task in tasks {
        let (knn_acc, knn_secs) =
            evaluate(knn, &task.episodes)?.ok_or_else(|| Error::Config("k-NN cannot fail on capacity".into()))?;
        rows.push(BenchRow {
            task: task.name.clone(),
            model: KNN_LABEL.into(),
            accuracy: Some(knn_acc),
            rel_acc_vs_knn: Some(0.0),
            seconds: Some(knn_secs),
        });
        for (label, f) in predictors {
            let r = evaluate(*f, &task.episodes)?;
            rows.push(BenchRow {
                task: task.name.clone(),
                model: label.clone(),
                accuracy: r.map(|x| x.0),
                rel_acc_vs_knn: r.map(|x| rel_vs_knn(x.0, knn_acc)),
                seconds: r.map(|x| x.1),
            });
        }
    }
    let labels: Vec<String> = std::iter::once(KNN_LABEL.to_string()).chain(predictors.iter().map(|p| p.0.clone())).collect();
    for label in labels {
        let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.model == label && r.accuracy.is_some()).collect();
        let col = |f: fn(&BenchRow) -> Option<f64>| median(mine.iter().filter_map(|r| f(r)).collect());
        rows.push(BenchRow {
            task: MEDIAN_TASK.into(),
            model: label,
            accuracy: col(|r| r.accuracy),
            rel_acc_vs_knn: col(|r| r.rel_acc_vs_knn),
            seconds: col(|r| r.seconds),
        });
    }
    rows.sort_by(|a, b| (&a.task, &a.model).cmp(&(&b.task, &b.model)));
    Ok(rows)
}

pub fn cmd_bench(run: &RunConfig) -> Result<Vec<BenchRow>> {
    let tasks = build_suite(run)?;
    let models = load_models(&run.get_list("models"), run)?;
    let ecoc_seed: u64 = run.get("ecoc_seed")?;
    let routed: Vec<Routed<f32>> = models.iter().map(|m| Routed { model: &m.model, ecoc_seed }).collect();
    let predictors: Vec<(String, &dyn Predictor)> =
        models.iter().zip(&routed).map(|(m, r)| (m.label.clone(), r as &dyn Predictor)).collect();
    let knn = Knn { k: run.get("knn_k")? };
    let rows = run_bench(&tasks, &predictors, &knn)?;
    std::fs::create_dir_all(&run.out).map_err(HarnessError::io(&run.out))?;
    let path = run.out.join(RESULTS_FILE);
    std::fs::write(&path, render(&rows)).map_err(HarnessError::io(&path))?;
    write_manifest(run, &[Artifact::timed(RESULTS_FILE, "seconds")])?;
    Ok(rows)
}

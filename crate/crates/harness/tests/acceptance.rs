//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line before asserting.
//!
//! Criteria 1, 4, 5, 7 and 8 read the desk checkpoints committed under
//! `artifacts/`. The tests hold a shared lock so wall-clock limits are
//! measured without other criteria competing for the CPU.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use equitab::checkpoint::{load_checkpoint, model_from_checkpoint, Checkpoint};
use equitab::ecoc::{build_codebook, ecoc_forward, timed};
use equitab::equitab::ModelConfig;
use equitab::lab::{gap_estimate, sq_identity_check, violation_rate, Loss};
use equitab::predictor::{argmax_rows, predict_relabeled, FnPredictor, PermSet, Symmetrized};
use equitab::prior::{sample_episode, sample_with_dims, Dims, IntRange, PriorConfig, TestRows};
use equitab::trainer::{accuracy, TrainConfig, Trainer};
use equitab::{Episode, Model, ModelKind, PermutationSpec, Predictor};
use equitab_harness::bench;
use equitab_harness::config::{Command, RunConfig};
use equitab_harness::equigap::ensemble_sweep;
use equitab_harness::gradcheck::{full_loss_check, primitive_checks};
use equitab_harness::knn::Knn;
use equitab_harness::manifest::without_column;
use equitab_harness::{grid, run, stream_seed, train};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn artifacts() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../artifacts")
}

fn desk_checkpoint(kind: &str) -> Result<Checkpoint, String> {
    let path = artifacts().join(format!("desk-{kind}")).join("model.ckpt");
    load_checkpoint(&path).map_err(|e| format!("desk {kind} checkpoint unavailable at {}: {e}", path.display()))
}

fn desk_model(kind: &str) -> Result<Model<f32>, String> {
    model_from_checkpoint(&desk_checkpoint(kind)?).map_err(|e| e.to_string())
}

/// Last logged step of a desk run.
fn desk_steps(kind: &str) -> String {
    let log = std::fs::read_to_string(artifacts().join(format!("desk-{kind}")).join("train_log.tsv")).unwrap_or_default();
    log.lines().last().and_then(|l| l.split('\t').next()).unwrap_or("?").to_string()
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn small_prior(q: IntRange, n: IntRange, rows: usize) -> PriorConfig {
    PriorConfig { n_train: n, n_test: TestRows::Total(rows), n_features: IntRange::new(2, 4), n_classes: q, ..PriorConfig::blobs(3.0) }
}

// ---- 1 --------------------------------------------------------------------

struct EquivStats {
    max_dev: f64,
    agree: usize,
    total: usize,
}

fn equivariance<P: Predictor>(f: &P, episodes: &[Episode], n_sigma: usize, seed: u64) -> EquivStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = EquivStats { max_dev: 0.0, agree: 0, total: 0 };
    for e in episodes {
        let base = f.predict(e).unwrap();
        let base_arg = argmax_rows(&base);
        for _ in 0..n_sigma {
            let sigma = PermutationSpec::random(e.n_classes(), &mut rng);
            let other = predict_relabeled(f, e, &sigma).unwrap();
            s.max_dev = s.max_dev.max(max_abs(&base, &other));
            s.agree += argmax_rows(&other).iter().zip(&base_arg).filter(|(a, b)| a == b).count();
            s.total += base_arg.len();
        }
    }
    s
}

#[test]
fn criterion_01_exact_target_equivariance() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let episodes: Vec<Episode> = (0..32)
        .map(|i| {
            let q = 2 + i % 15;
            sample_with_dims(&PriorConfig::blobs(3.0), Dims { n: q + 6, m: 8, p: 2 + i % 7, q }, 100 + i as u64).unwrap()
        })
        .collect();
    let init = Model::<f32>::new(ModelKind::EquiTab, ModelConfig::default(), 0, 1).unwrap();
    let mut models = vec![("init", init)];
    let mut notes = Vec::new();
    match desk_model("equitab") {
        Ok(m) => models.push(("desk", m)),
        Err(e) => notes.push(e),
    }
    let mut pass = notes.is_empty();
    let mut parts = Vec::new();
    for (name, m) in &models {
        let s32 = equivariance(m, &episodes, 20, 7);
        let s64 = equivariance(&m.cast::<f64>(), &episodes, 20, 7);
        let agreement = (s32.agree.min(s64.agree)) as f64 / s32.total as f64;
        pass &= s32.max_dev <= 1e-4 && s64.max_dev <= 1e-8 && agreement >= 0.999;
        parts.push(format!("{name}: f32 max dev {:.2e}, f64 max dev {:.2e}, argmax agreement {:.4}", s32.max_dev, s64.max_dev, agreement));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 120.0;
    verdict(1, pass, format!("q 2..16, 32 episodes x 20 sigma; {}; {secs:.1}s (limit 120s) {}", parts.join("; "), notes.join("; ")));
}

// ---- 2 --------------------------------------------------------------------

#[test]
fn criterion_02_squared_loss_identity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let prior = small_prior(IntRange::fixed(3), IntRange::new(12, 48), 64);
    let episodes: Vec<Episode> = (0..32).map(|i| sample_episode(&prior, 200 + i).unwrap()).collect();
    let baseline = Model::<f64>::new(ModelKind::Baseline, ModelConfig::default(), 5, 2).unwrap();
    let check = sq_identity_check(&baseline, &episodes, &PermSet::Exhaustive { force: false }).unwrap();
    let diff = check.margin();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        diff <= 1e-6 && secs <= 60.0,
        format!("L(f)-L(fbar) = {:.12}, E|f-fbar|^2 = {:.12}, |diff| {diff:.2e} (tol 1e-6); {secs:.1}s (limit 60s)", check.lhs, check.rhs),
    );
}

// ---- 3 --------------------------------------------------------------------

#[test]
fn criterion_03_gap_non_negativity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let prior = small_prior(IntRange::fixed(3), IntRange::new(8, 24), 32);
    let episodes: Vec<Episode> = (0..512).map(|i| sample_episode(&prior, 300 + i).unwrap()).collect();
    let mode = PermSet::Exhaustive { force: false };
    let baseline = Model::<f64>::new(ModelKind::Baseline, ModelConfig::default(), 5, 3).unwrap();
    let equitab = Model::<f64>::new(ModelKind::EquiTab, ModelConfig::default(), 0, 3).unwrap();
    let b = gap_estimate(&baseline, &episodes, Loss::CrossEntropy, &mode).unwrap();
    let e = gap_estimate(&equitab, &episodes, Loss::CrossEntropy, &mode).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = b.gap >= -2.0 * b.gap_stderr && e.gap.abs() <= 2.0 * e.gap_stderr && secs <= 600.0;
    verdict(
        3,
        pass,
        format!(
            "512 episodes, q=3 exhaustive; baseline gap {:.6} (stderr {:.2e}); equitab gap {:.3e} (stderr {:.2e}); {secs:.1}s (limit 600s)",
            b.gap, b.gap_stderr, e.gap, e.gap_stderr
        ),
    );
}

// ---- 4 --------------------------------------------------------------------

#[test]
fn criterion_04_ensembling_trend() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let baseline = match desk_model("baseline") {
        Ok(m) => m,
        Err(e) => return verdict(4, false, e),
    };
    let prior = small_prior(IntRange::fixed(5), IntRange::new(16, 64), 96);
    let episodes: Vec<Episode> = (0..64).map(|i| sample_episode(&prior, 400 + i).unwrap()).collect();
    let sweep = ensemble_sweep(&baseline, &episodes, &[1, 2, 4, 8], 8, 11).unwrap();
    let monotone = sweep.windows(2).all(|w| w[1].1 <= w[0].1);

    let prior3 = small_prior(IntRange::fixed(3), IntRange::new(16, 64), 96);
    let eps3: Vec<Episode> = (0..64).map(|i| sample_episode(&prior3, 500 + i).unwrap()).collect();
    let sym = Symmetrized::new(&baseline, PermSet::Exhaustive { force: false });
    let v_sym = violation_rate(&sym, &eps3, 8, 12).unwrap();
    let v_raw = violation_rate(&baseline, &eps3, 8, 12).unwrap();
    let table: Vec<String> = sweep.iter().map(|(n, v)| format!("n_ens={n}: {v:.4}")).collect();
    verdict(
        4,
        monotone && v_sym <= 1e-4,
        format!(
            "desk baseline ({} batches), 64 episodes q=5: {}; q=3 violation raw {v_raw:.4}, exhaustive-symmetrised {v_sym:.2e} (tol 1e-4)",
            desk_steps("baseline"),
            table.join(", ")
        ),
    );
}

// ---- 5 --------------------------------------------------------------------

#[test]
fn criterion_05_grid_experiment() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = artifacts().join("desk-equitab").join("model.ckpt");
    if !ckpt.exists() {
        return verdict(5, false, format!("missing {}", ckpt.display()));
    }
    let mut r = RunConfig::defaults(Command::Grid, dir.path());
    r.set("models", format!("{},init:equitab,init:baseline", ckpt.display()));
    let results = grid::cmd_grid(&r).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cells = |label: &str| results.iter().find(|(l, _)| l == label).map(|(_, g)| g.differing_cells()).unwrap();
    let rows = results[0].1.predictions.iter().map(Vec::len).sum::<usize>();
    let (trained, init_eq, init_bl) = (cells("equitab"), cells("equitab-init"), cells("baseline-init"));
    verdict(
        5,
        rows == 3 * 1600 && trained == 0 && init_eq == 0 && init_bl >= 1 && secs <= 60.0,
        format!(
            "40x40 grid, 3 orderings: differing cells desk equitab {trained}/1600, init equitab {init_eq}/1600, init baseline {init_bl}/1600; {secs:.1}s (limit 60s)"
        ),
    );
}

// ---- 6 --------------------------------------------------------------------

#[test]
fn criterion_06_gradient_correctness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rows = primitive_checks(1e-4, 6).unwrap();
    rows.push(full_loss_check(ModelKind::EquiTab, 1e-4, 6).unwrap());
    rows.push(full_loss_check(ModelKind::Baseline, 1e-4, 6).unwrap());
    let worst = rows.iter().max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err)).unwrap();
    let failing: Vec<&str> = rows.iter().filter(|r| !r.report.passes(1e-5)).map(|r| r.name.as_str()).collect();
    verdict(
        6,
        failing.is_empty(),
        format!(
            "{} checks (every primitive, tiny full losses d=8 2 layers N+M=8 q=3); worst {} at {:.2e} (tol 1e-5); failing {failing:?}",
            rows.len(),
            worst.name,
            worst.report.max_rel_err
        ),
    );
}

// ---- 7 --------------------------------------------------------------------

fn held_out(prior: &PriorConfig, count: usize, stream: u64) -> Vec<Episode> {
    (0..count).map(|i| sample_episode(prior, stream_seed(20_251, stream, i)).unwrap()).collect()
}

#[test]
fn criterion_07_desk_training() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    // smoke variant: a reduced model and batch so five seeds fit the budget
    let start = Instant::now();
    let mut drops = Vec::new();
    for seed in 0..5 {
        let config = TrainConfig {
            total_batches: 200,
            batch_size: 4,
            lr_max: 1e-3,
            warmup_batches: 20,
            eval_every: 200,
            eval_episodes: 4,
            seed,
            prior: small_prior(IntRange::new(2, 5), IntRange::new(16, 48), 64),
            model_config: ModelConfig { d: 32, n_layers: 2, n_heads: 4, hidden: 64, p_max: 8, decoder_hidden: 16 },
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(config).unwrap();
        let losses: Vec<f64> = (0..200).map(|_| t.train_step().unwrap()).collect();
        let first = losses[..40].iter().sum::<f64>() / 40.0;
        let last = losses[160..].iter().sum::<f64>() / 40.0;
        drops.push(first - last);
    }
    let smoke_secs = start.elapsed().as_secs_f64();
    let smoke_drop = median(drops.clone());
    let smoke_ok = smoke_drop > 0.0 && smoke_secs <= 300.0;

    let model = match desk_model("equitab") {
        Ok(m) => m,
        Err(e) => return verdict(7, false, e),
    };
    let episodes = held_out(&PriorConfig::blobs(3.0), 64, 7);
    let knn = Knn { k: 5 };
    let acc = |f: &dyn Predictor| -> Vec<f64> {
        episodes.iter().map(|e| accuracy(&f.predict(e).unwrap(), &e.test_labels())).collect()
    };
    let (eq, kn) = (median(acc(&model)), median(acc(&knn)));
    let desk_ok = eq >= 0.85 && eq > kn;
    verdict(
        7,
        desk_ok && smoke_ok,
        format!(
            "desk equitab trained {} batches of 16 (schedule shortened from 20000): median accuracy {eq:.4} vs k=5 KNN {kn:.4} on 64 held-out episodes; smoke 200 batches x 5 seeds: median first-vs-last-20% loss drop {smoke_drop:.4} (per seed {:?}), {smoke_secs:.1}s (limit 300s)",
            desk_steps("equitab"),
            drops.iter().map(|d| (d * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

// ---- 8 --------------------------------------------------------------------

#[test]
fn criterion_08_unseen_class_counts() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let model = match desk_model("equitab") {
        Ok(m) => m,
        Err(e) => return verdict(8, false, e),
    };
    let prior = PriorConfig { n_classes: IntRange::fixed(8), ..PriorConfig::blobs(3.0) };
    let episodes = held_out(&prior, 32, 8);
    let mut accs = Vec::new();
    let mut majority = Vec::new();
    for e in &episodes {
        accs.push(accuracy(&model.predict(e).unwrap(), &e.test_labels()));
        let counts = e.y.sum_axis(ndarray::Axis(0));
        let top = equitab::predictor::argmax(&counts.to_vec());
        majority.push(e.test_labels().iter().filter(|&&k| k == top).count() as f64 / e.n_test() as f64);
    }
    let (a, m) = (median(accs), median(majority));
    verdict(8, a >= m + 0.20, format!("q=8 blobs, 32 episodes: median accuracy {a:.4} vs majority class {m:.4} (need +0.20)"));
}

// ---- 9 --------------------------------------------------------------------

#[test]
fn criterion_09_ecoc_machinery() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut covered = true;
    for q_max in [2, 3, 5, 10] {
        for k in 2..=30 {
            let book = build_codebook(k, q_max, k as u64).unwrap();
            covered &= (0..k).all(|a| (a + 1..k).all(|b| book.partitions().iter().any(|p| p[a] != p[b])));
        }
    }
    let e12 = sample_with_dims(&PriorConfig::blobs(3.0), Dims { n: 48, m: 24, p: 4, q: 12 }, 900).unwrap();
    let book = build_codebook(12, 5, 0).unwrap();
    let oracle = FnPredictor(|g: &Episode| Ok(g.y_star.clone()));
    let decode_exact = argmax_rows(&ecoc_forward(&e12, &oracle, &book).unwrap()) == e12.test_labels();

    let config = ModelConfig::default();
    let baseline = Model::<f32>::new(ModelKind::Baseline, config, 5, 9).unwrap();
    let e4 = sample_with_dims(&PriorConfig::blobs(3.0), Dims { n: 20, m: 10, p: 3, q: 4 }, 901).unwrap();
    let identity = build_codebook(4, 5, 0).unwrap();
    let reduces = identity.is_identity() && ecoc_forward(&e4, &baseline, &identity).unwrap() == baseline.predict(&e4).unwrap();

    let equitab = Model::<f32>::new(ModelKind::EquiTab, config, 0, 9).unwrap();
    let episodes: Vec<Episode> = (0..4)
        .map(|i| sample_with_dims(&PriorConfig::blobs(3.0), Dims { n: 96, m: 96, p: 4, q: 12 }, 910 + i).unwrap())
        .collect();
    let best = |f: &dyn Fn(&Episode)| -> f64 {
        (0..3).map(|_| episodes.iter().map(|e| timed(|| f(e)).1).sum::<f64>()).fold(f64::INFINITY, f64::min)
    };
    let t_ecoc = best(&|e| {
        ecoc_forward(e, &baseline, &book).unwrap();
    });
    let t_native = best(&|e| {
        equitab.predict(e).unwrap();
    });
    verdict(
        9,
        covered && decode_exact && reduces && t_ecoc > t_native,
        format!(
            "coverage K<=30: {covered}; noiseless decode exact: {decode_exact}; identity path: {reduces}; q=12 wall-clock baseline+ECOC ({} partitions) {t_ecoc:.3}s vs native equitab {t_native:.3}s (need ECOC slower)",
            book.partitions().len()
        ),
    );
}

// ---- 10 -------------------------------------------------------------------

#[test]
fn criterion_10_exchangeability_and_independence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let config = ModelConfig::default();
    let models = [
        ("equitab", Model::<f32>::new(ModelKind::EquiTab, config, 0, 10).unwrap()),
        ("baseline", Model::<f32>::new(ModelKind::Baseline, config, 5, 10).unwrap()),
    ];
    let prior = small_prior(IntRange::new(2, 5), IntRange::new(8, 40), 56);
    let episodes: Vec<Episode> = (0..32).map(|i| sample_episode(&prior, 1000 + i).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = [(0.0f64, 0.0f64); 2];
    for (mi, (_, m)) in models.iter().enumerate() {
        for e in &episodes {
            let base = m.predict(e).unwrap();
            let mut order: Vec<usize> = (0..e.n_train()).collect();
            order.shuffle(&mut rng);
            worst[mi].0 = worst[mi].0.max(max_abs(&base, &m.predict(&e.reorder_train(&order)).unwrap()));
            let drop = (e.n_test() * 7 / 11) % e.n_test();
            let keep: Vec<usize> = (0..e.n_test()).filter(|&i| i != drop).collect();
            let sub = m.predict(&e.select_test(&keep).unwrap()).unwrap();
            worst[mi].1 = worst[mi].1.max(max_abs(&base.select(ndarray::Axis(0), &keep), &sub));
        }
    }
    let pass = worst.iter().all(|&(a, b)| a <= 1e-4 && b <= 1e-4);
    verdict(
        10,
        pass,
        format!(
            "32 episodes; train-row shuffle max dev equitab {:.2e} baseline {:.2e}; drop-one max dev equitab {:.2e} baseline {:.2e} (tol 1e-4)",
            worst[0].0, worst[1].0, worst[0].1, worst[1].1
        ),
    );
}

// ---- 11 -------------------------------------------------------------------

const TINY: &[(&str, &str)] = &[
    ("model.d", "16"),
    ("model.n_layers", "2"),
    ("model.n_heads", "2"),
    ("model.hidden", "32"),
    ("model.p_max", "8"),
    ("model.decoder_hidden", "8"),
];

fn tiny_run(command: Command, out: &Path) -> RunConfig {
    let mut r = RunConfig::defaults(command, out);
    r.set("seed", 11);
    for (k, v) in TINY {
        r.set(k, v);
    }
    let prior: &[(&str, &str)] = &[("prior.n_train_min", "16"), ("prior.n_train_max", "32"), ("prior.n_rows", "48")];
    let extra: &[(&str, &str)] = match command {
        Command::Train => &[("total_batches", "30"), ("warmup_batches", "3"), ("eval_every", "10"), ("eval_episodes", "4"), ("batch_size", "4")],
        Command::Bench => &[("models", "init:equitab,init:baseline"), ("episodes", "3")],
        Command::Equigap => &[("episodes", "6"), ("sweep", "1,2,4")],
        _ => &[("resolution", "12")],
    };
    let prior = if command == Command::Grid { &[][..] } else { prior };
    for (k, v) in prior.iter().chain(extra) {
        r.set(k, v);
    }
    r
}

/// Result files of a run directory, timing columns removed.
fn comparable(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(&p).unwrap();
            let text = match name.as_str() {
                n if n == train::LOG_FILE || n == bench::RESULTS_FILE => without_column(&String::from_utf8_lossy(&bytes), "seconds"),
                _ => bytes.iter().map(|b| format!("{b:02x}")).collect(),
            };
            (name, text)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_11_reproducibility() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let mut identical = Vec::new();
    for command in [Command::Train, Command::Bench, Command::Equigap, Command::Grid] {
        let a = dir.path().join(format!("{}-a", command.name()));
        let b = dir.path().join(format!("{}-b", command.name()));
        run(&tiny_run(command, &a)).unwrap();
        run(&tiny_run(command, &b)).unwrap();
        let (fa, fb) = (comparable(&a), comparable(&b));
        identical.push((command.name(), fa.len(), !fa.is_empty() && fa == fb));
    }
    assert!(comparable(&dir.path().join("bench-a")).iter().any(|(n, _)| n == bench::RESULTS_FILE));

    let config = TrainConfig {
        total_batches: 100,
        batch_size: 4,
        lr_max: 1e-3,
        warmup_batches: 10,
        eval_every: 1000,
        eval_episodes: 2,
        seed: 11,
        prior: small_prior(IntRange::new(2, 5), IntRange::new(16, 32), 48),
        model_config: ModelConfig { d: 16, n_layers: 2, n_heads: 2, hidden: 32, p_max: 8, decoder_hidden: 8 },
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(config.clone()).unwrap();
    straight.run_until(30, |_| {}).unwrap();
    let saved = dir.path().join("resume.ckpt");
    equitab::checkpoint::save_checkpoint(&saved, &straight.checkpoint()).unwrap();
    let expected: Vec<f64> = (0..50).map(|_| straight.train_step().unwrap()).collect();
    let mut resumed = Trainer::resume(config, &load_checkpoint(&saved).unwrap()).unwrap();
    let got: Vec<f64> = (0..50).map(|_| resumed.train_step().unwrap()).collect();
    let loss_dev = expected.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let param_dev = straight
        .model()
        .params()
        .tensors()
        .iter()
        .zip(resumed.model().params().tensors())
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64))
        .fold(0.0, f64::max);

    let all_same = identical.iter().all(|t| t.2);
    let summary: Vec<String> = identical.iter().map(|(c, n, same)| format!("{c} {n} files identical={same}")).collect();
    verdict(
        11,
        all_same && loss_dev <= 1e-6 && param_dev <= 1e-6,
        format!("{}; resume over 50 steps: max loss dev {loss_dev:.2e}, max param dev {param_dev:.2e} (tol 1e-6)", summary.join(", ")),
    );
}

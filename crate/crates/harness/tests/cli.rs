use std::path::Path;

use equitab::episode::one_hot;
use equitab::prior::{sample_with_dims, Dims, PriorConfig};
use equitab::Episode;
use equitab_harness::bench::{self, BenchRow};
use equitab_harness::config::{parse_config, Command, RunConfig};
use equitab_harness::grid::{self, run_grid, training_points};
use equitab_harness::knn::knn_predict;
use equitab_harness::manifest::{sha256_hex, without_column, MANIFEST_FILE};
use equitab_harness::{equigap, gradcheck, run, train, HarnessError};
use ndarray::{array, Array2};

const SMALL_MODEL: &[(&str, &str)] = &[
    ("model.d", "16"),
    ("model.n_layers", "2"),
    ("model.n_heads", "2"),
    ("model.hidden", "32"),
    ("model.p_max", "8"),
    ("model.decoder_hidden", "8"),
];

const SMALL_PRIOR: &[(&str, &str)] = &[("prior.n_train_min", "16"), ("prior.n_train_max", "32"), ("prior.n_rows", "48")];

fn small(command: Command, out: &Path, extra: &[(&str, &str)]) -> RunConfig {
    let mut run = RunConfig::defaults(command, out);
    let prior: &[(&str, &str)] = if command == Command::Grid { &[] } else { SMALL_PRIOR };
    for (k, v) in SMALL_MODEL.iter().chain(prior).chain(extra) {
        run.set(k, v);
    }
    run
}

fn tiny_train(out: &Path) -> RunConfig {
    small(
        Command::Train,
        out,
        &[("total_batches", "40"), ("warmup_batches", "4"), ("eval_every", "10"), ("eval_episodes", "4"), ("batch_size", "4")],
    )
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

// ---- config ---------------------------------------------------------------

#[test]
fn config_parses_comments_and_reports_line_numbers() {
    let entries = parse_config("# header\n\nseed = 4   # trailing\nmodel=baseline\n", "c").unwrap();
    assert_eq!(entries, vec![(3, "seed".into(), "4".into()), (4, "model".into(), "baseline".into())]);
    match parse_config("seed = 1\n\njust words\n", "c.cfg") {
        Err(HarnessError::Parse { line: 3, path, .. }) => assert_eq!(path, "c.cfg"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_config("a = 1\na = 2\n", "c"), Err(HarnessError::Parse { line: 2, .. })));
    assert!(matches!(parse_config("bad key = 1\n", "c"), Err(HarnessError::Parse { line: 1, .. })));
}

#[test]
fn config_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 3\nbatch_size = 8\n# comment\nlr_max = 0.5\n").unwrap();
    let run = RunConfig::resolve(Command::Train, Some(&cfg), None, dir.path(), &["lr_max=0.25".into()]).unwrap();
    assert_eq!(run.seed, 3);
    assert_eq!(run.get::<usize>("batch_size").unwrap(), 8);
    assert_eq!(run.get::<f64>("lr_max").unwrap(), 0.25);
    let run = RunConfig::resolve(Command::Train, Some(&cfg), Some(9), dir.path(), &[]).unwrap();
    assert_eq!((run.seed, run.raw("seed")), (9, "9"));

    std::fs::write(&cfg, "seed = 1\nresolution = 4\n").unwrap();
    match RunConfig::resolve(Command::Train, Some(&cfg), None, dir.path(), &[]) {
        Err(HarnessError::Parse { line: 2, detail, .. }) => assert!(detail.contains("resolution")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        RunConfig::resolve(Command::Grid, None, None, dir.path(), &["nope=1".into()]),
        Err(HarnessError::UnknownKey { .. })
    ));
    let run = RunConfig::resolve(Command::Train, None, None, dir.path(), &["batch_size=lots".into()]).unwrap();
    assert!(matches!(run.get::<usize>("batch_size"), Err(HarnessError::Value { .. })));
}

// ---- manifest -------------------------------------------------------------

#[test]
fn checksums_and_column_stripping() {
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    assert_eq!(without_column("a\tseconds\tb\n1\t9.5\t2\n", "seconds"), "a\tb\n1\t2\n");
    assert_eq!(without_column("a\tb\n1\t2\n", "seconds"), "a\tb\n1\t2\n");
}

#[test]
fn manifest_replays_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let mut a = small(Command::Equigap, &first, &[("episodes", "4"), ("sweep", "1,2")]);
    a.set("seed", 5);
    run(&a).unwrap();
    let manifest = read(first.join(MANIFEST_FILE));
    assert!(manifest.starts_with("# command equigap\n"));
    assert!(manifest.contains("seed = 5\n") && manifest.contains("# artifact sweep.tsv sha256="));

    let second = dir.path().join("second");
    let b = RunConfig::resolve(Command::Equigap, Some(&first.join(MANIFEST_FILE)), None, &second, &[]).unwrap();
    assert_eq!(b.values, a.values);
    run(&b).unwrap();
    for f in [equigap::REPORT_FILE, equigap::IDENTITY_FILE, equigap::SWEEP_FILE, MANIFEST_FILE] {
        assert_eq!(read(first.join(f)), read(second.join(f)), "{f}");
    }
}

// ---- knn ------------------------------------------------------------------

fn hand_built() -> Episode {
    let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0], [-1.0, -1.0]];
    let xs = array![[0.0, 0.0], [2.0, 2.0], [0.5, 0.0]];
    Episode::from_labels(x, &[0, 1, 1, 2, 0], xs, &[0, 2, 1], 3).unwrap()
}

#[test]
fn knn_single_neighbour_on_a_training_point() {
    let p = knn_predict(&hand_built(), 1).unwrap();
    assert_eq!(p.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
}

#[test]
fn knn_full_neighbourhood_gives_class_frequencies() {
    let p = knn_predict(&hand_built(), 5).unwrap();
    for row in p.rows() {
        assert_eq!(row.to_vec(), vec![0.4, 0.4, 0.2]);
    }
}

#[test]
fn knn_matches_a_brute_force_sort() {
    let e = hand_built();
    // z-score on the training rows, then sort every (distance, index) pair
    let n = e.n_train() as f64;
    let mean: Vec<f64> = (0..2).map(|j| e.x.column(j).sum() / n).collect();
    let sd: Vec<f64> =
        (0..2).map(|j| (e.x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    let z = |r: ndarray::ArrayView1<f64>| -> Vec<f64> { (0..2).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
    let labels = e.train_labels();
    let mut oracle = Array2::<f64>::zeros((3, 3));
    for (t, test) in e.x_star.rows().into_iter().enumerate() {
        let zt = z(test);
        let mut all: Vec<(f64, usize)> = e
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (z(r).iter().zip(&zt).map(|(a, b)| (a - b).powi(2)).sum(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, i) in &all[..3] {
            oracle[[t, labels[i]]] += 1.0 / 3.0;
        }
    }
    let got = knn_predict(&e, 3).unwrap();
    assert!(got.iter().zip(oracle.iter()).all(|(a, b)| (a - b).abs() < 1e-12), "{got} vs {oracle}");
}

#[test]
fn knn_breaks_distance_ties_by_training_index() {
    let x = array![[-1.0], [1.0], [3.0], [-3.0]];
    let e = Episode::from_labels(x, &[1, 0, 0, 1], array![[0.0]], &[0], 2).unwrap();
    assert_eq!(knn_predict(&e, 1).unwrap().row(0).to_vec(), vec![0.0, 1.0]);
    assert!(knn_predict(&e, 0).is_err() && knn_predict(&e, 5).is_err());
}

// ---- grid -----------------------------------------------------------------

#[test]
fn grid_layout_and_degenerate_resolution() {
    let train = training_points();
    assert_eq!(train.len(), 9);
    assert!(train.iter().all(|(p, _)| p.iter().all(|v| [-1.0, 0.0, 1.0].contains(v))));
    let dir = tempfile::tempdir().unwrap();
    let r = small(Command::Grid, dir.path(), &[("resolution", "1"), ("models", "init:equitab")]);
    let results = grid::cmd_grid(&r).unwrap();
    assert_eq!(results[0].1.to_csv().lines().count(), 1 + 3);
    let csv = read(dir.path().join("grid_equitab-init.csv"));
    assert_eq!(csv.lines().next().unwrap(), "ordering_id,x1,x2,pred_class");
    assert_eq!(csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect::<Vec<_>>(), ["0", "1", "2"]);
}

#[test]
fn grid_rows_follow_resolution_and_orderings() {
    let oracle = equitab::predictor::FnPredictor(|e: &Episode| {
        let mut p = Array2::zeros((e.n_test(), e.n_classes()));
        p.column_mut(0).fill(1.0);
        Ok(p)
    });
    let sigmas = grid::orderings(2, 1);
    let g = run_grid(&oracle, 5, 1.0, &sigmas).unwrap();
    assert_eq!(g.predictions.len() * g.points.len(), 2 * 25);
    // "always slot 0" is not equivariant, so mapped-back classes follow sigma
    assert_eq!(g.predictions[0][0], sigmas[0].sigma()[0]);
}

// ---- bench ----------------------------------------------------------------

#[test]
fn bench_schema_self_comparison_and_unsupported_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("wide.csv");
    let mut body = (0..10).map(|i| format!("f{i}")).collect::<Vec<_>>().join(",") + ",label\n";
    for r in 0..30 {
        body += &((0..10).map(|i| ((r * 7 + i * 3) % 11).to_string()).collect::<Vec<_>>().join(",") + &format!(",c{}\n", r % 3));
    }
    std::fs::write(&csv, body).unwrap();
    let r = small(
        Command::Bench,
        dir.path(),
        &[("models", "init:equitab,init:baseline"), ("episodes", "2"), ("csv", csv.to_str().unwrap())],
    );
    let rows = bench::cmd_bench(&r).unwrap();
    let text = read(dir.path().join(bench::RESULTS_FILE));
    assert_eq!(text.lines().next().unwrap(), "task\tmodel\taccuracy\trel_acc_vs_knn\tseconds");
    assert!(text.lines().all(|l| l.split('\t').count() == 5));
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r.task.clone(), r.model.clone())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(rows.len(), 5 * 3);
    for row in rows.iter().filter(|r| r.model == bench::KNN_LABEL) {
        assert_eq!(row.rel_acc_vs_knn, Some(0.0));
    }
    // p = 10 exceeds p_max = 8
    let wide: Vec<&BenchRow> = rows.iter().filter(|r| r.task == "csv-wide" && r.model != "knn").collect();
    assert_eq!(wide.len(), 2);
    assert!(wide.iter().all(|r| r.accuracy.is_none() && r.line().contains("unsupported")));
    assert!(rows.iter().any(|r| r.task == "blobs-unseen-q8" && r.model == "baseline-init" && r.accuracy.is_some()));
}

#[test]
fn bench_models_share_episode_realisations() {
    let dir = tempfile::tempdir().unwrap();
    let r = small(Command::Bench, dir.path(), &[("episodes", "3")]);
    let a = bench::build_suite(&r).unwrap();
    let b = bench::build_suite(&r).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.episodes, y.episodes);
    }
    assert!(a[1].episodes.iter().all(|e| e.n_classes() == 8));
}

// ---- equigap --------------------------------------------------------------

#[test]
fn equitab_audit_reports_zero_violation() {
    let dir = tempfile::tempdir().unwrap();
    let r = small(Command::Equigap, dir.path(), &[("model", "init:equitab"), ("episodes", "4"), ("sweep", "1,2")]);
    let o = equigap::cmd_equigap(&r).unwrap();
    assert_eq!(o.report.violation_rate, 0.0);
    assert!(o.identity.passed);
    assert!(o.sweep.iter().all(|&(_, v)| v == 0.0));
    let report = read(dir.path().join(equigap::REPORT_FILE));
    assert!(report.lines().all(|l| l.contains(": ")));
    assert!(report.contains("violation_rate: 0.000000"));
    assert_eq!(read(dir.path().join(equigap::SWEEP_FILE)).lines().next().unwrap(), "n_ens\tviolation_rate");
    run(&r).unwrap();
    assert_eq!(read(dir.path().join(equigap::RESULTS_LOG)).lines().count(), 2);
}

// ---- train ----------------------------------------------------------------

#[test]
fn train_log_schema_determinism_and_gapless_resume() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let o1 = train::cmd_train(&tiny_train(&straight)).unwrap();
    let o2 = train::cmd_train(&tiny_train(&dir.path().join("again"))).unwrap();
    assert_eq!(o1.final_eval_loss(), o2.final_eval_loss());
    let log = read(straight.join(train::LOG_FILE));
    assert_eq!(log.lines().next().unwrap(), "step\tlr\ttrain_loss\teval_loss\teval_acc\tseconds");

    let split = dir.path().join("split");
    let mut first = tiny_train(&split);
    first.set("stop_at", 20);
    assert_eq!(train::cmd_train(&first).unwrap().step, 20);
    let mut rest = tiny_train(&split);
    rest.set("resume", split.join(train::STATE_FILE).display());
    train::cmd_train(&rest).unwrap();
    let resumed = read(split.join(train::LOG_FILE));
    let steps: Vec<&str> = resumed.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(steps, ["10", "20", "30", "40"]);
    assert_eq!(without_column(&resumed, "seconds"), without_column(&log, "seconds"));
    assert_eq!(std::fs::read(split.join(train::MODEL_FILE)).unwrap(), std::fs::read(straight.join(train::MODEL_FILE)).unwrap());
}

#[test]
fn train_rejects_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = tiny_train(dir.path());
    r.set("model", "mystery");
    assert!(train::cmd_train(&r).is_err());
    let mut r = tiny_train(dir.path());
    r.set("warmup_batches", 100);
    assert!(matches!(train::cmd_train(&r), Err(HarnessError::Core(equitab::Error::Config(_)))));
}

// ---- gradcheck ------------------------------------------------------------

#[test]
fn gradcheck_table() {
    let dir = tempfile::tempdir().unwrap();
    let rows = gradcheck::cmd_gradcheck(&RunConfig::defaults(Command::Gradcheck, dir.path())).unwrap();
    assert!(rows.iter().all(|r| r.report.passes(1e-5)), "{rows:?}");
    let text = read(dir.path().join(gradcheck::RESULTS_FILE));
    assert_eq!(text.lines().next().unwrap(), "check\tchecked\tmax_rel_err\tpass");
    assert!(text.contains("full_loss_equitab\t") && text.contains("softmax_masked\t"));
}

#[test]
fn one_hot_fixture_sanity() {
    let e = sample_with_dims(&PriorConfig::blobs(3.0), Dims { n: 6, m: 2, p: 2, q: 3 }, 0).unwrap();
    assert_eq!(e.y, one_hot(&e.train_labels(), 3).unwrap());
}

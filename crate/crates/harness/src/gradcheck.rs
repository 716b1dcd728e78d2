//! `gradcheck`: finite-difference audit of every tape primitive and of the
//! full loss of tiny models, all in 64-bit.

use std::fmt::Write as _;

use autodiff::gradcheck::{check_gradients, GradCheckReport};
use autodiff::{Mask, Tape, Tensor, Var};
use equitab::equitab::ModelConfig;
use equitab::params::Bound;
use equitab::prior::{sample_with_dims, Dims, PriorConfig};
use equitab::{EpisodeBatch, Error, Model, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{write_manifest, Artifact};

pub const RESULTS_FILE: &str = "gradcheck.tsv";
pub const HEADER: &str = "check\tchecked\tmax_rel_err\tpass";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub report: GradCheckReport,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> autodiff::Result<Var>>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Contracts non-scalar outputs with fixed random weights.
fn scalarise(tape: &mut Tape<f64>, out: Var, seed: u64) -> autodiff::Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), tape.shape(out), 1.0);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Named primitive cases: inputs and the expression to differentiate.
fn primitive_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor<f64>>, Build)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random(&mut rng, shape, 1.0);
    let a = r(&[2, 3, 4]);
    let b = r(&[2, 3, 4]);
    let row = r(&[4]);
    let x4 = r(&[2, 3, 2, 4]);
    let y4 = r(&[2, 1, 2, 4]);
    let mut targets = vec![0.0; 24];
    for i in 0..6 {
        targets[i * 4 + (i * 3) % 4] = 1.0;
    }
    let targets = Tensor::new(vec![2, 3, 4], targets).expect("sized");
    let mask = Mask::from_fn(3, 4, |i, j| i == 0 || j < 2);
    let wide = {
        let t = r(&[3, 5]);
        Tensor::new(vec![3, 5], t.data().iter().map(|v| 3.0 * v).collect()).expect("sized")
    };
    vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.add(v[0], v[1])) as Build),
        ("add_broadcast", vec![a.clone(), row.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul_broadcast", vec![a.clone(), row.clone()], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![a.clone()], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("gelu", vec![wide], Box::new(|t, v| Ok(t.gelu(v[0])))),
        ("sum", vec![a.clone()], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", vec![a.clone()], Box::new(|t, v| Ok(t.mean(v[0])))),
        ("matmul", vec![r(&[3, 4]), r(&[4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_broadcast", vec![r(&[2, 1, 3, 4]), r(&[3, 4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_nt", vec![r(&[2, 3, 4]), r(&[2, 5, 4])], Box::new(|t, v| t.matmul_nt(v[0], v[1]))),
        ("reshape", vec![x4.clone()], Box::new(|t, v| t.reshape(v[0], &[6, 8]))),
        ("permute", vec![x4.clone()], Box::new(|t, v| t.permute(v[0], &[2, 0, 3, 1]))),
        ("slice", vec![x4.clone()], Box::new(|t, v| t.slice(v[0], 1, 1, 2))),
        ("concat", vec![x4, y4], Box::new(|t, v| t.concat(&[v[1], v[0], v[1]], 1))),
        ("softmax", vec![a.clone()], Box::new(|t, v| t.softmax(v[0]))),
        ("softmax_masked", vec![a.clone()], Box::new(move |t, v| t.softmax_masked(v[0], Some(&mask)))),
        ("layer_norm", vec![a.clone(), r(&[4]), r(&[4])], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("cross_entropy", vec![a], Box::new(move |t, v| t.cross_entropy_from_logits(v[0], &targets))),
    ]
}

/// Every tape primitive, each contracted to a scalar.
pub fn primitive_checks(step: f64, seed: u64) -> Result<Vec<CheckRow>> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, inputs, build)| {
            let report = check_gradients(&inputs, step, |tape, vars| {
                let out = build(tape, vars)?;
                scalarise(tape, out, seed ^ 0x5CA1)
            })
            .map_err(Error::from)?;
            Ok(CheckRow { name: name.to_string(), report })
        })
        .collect()
}

/// Tiny architecture for full-loss checks: d = 8, two layers.
pub fn tiny_config() -> ModelConfig {
    ModelConfig { d: 8, n_layers: 2, n_heads: 2, hidden: 8, p_max: 4, decoder_hidden: 4 }
}

/// Cross-entropy of a tiny model on one episode with `N + M = 8`, `q = 3`,
/// differentiated with respect to every parameter.
pub fn full_loss_check(kind: ModelKind, step: f64, seed: u64) -> Result<CheckRow> {
    let model = Model::<f64>::new(kind, tiny_config(), 3, seed)?;
    let episode = sample_with_dims(&PriorConfig::blobs(2.0), Dims { n: 5, m: 3, p: 2, q: 3 }, seed)?;
    let batch = EpisodeBatch::single(episode);
    // shape errors surface here, so the closure below only sees tensor errors
    model.forward(&batch)?;
    let e = &batch.episodes()[0];
    let targets = Tensor::new(vec![1, e.n_test(), e.n_classes()], e.y_star.iter().copied().collect()).map_err(Error::from)?;
    let inputs = model.params().tensors().to_vec();
    let report = check_gradients(&inputs, step, |tape, vars| {
        let p = Bound(vars.to_vec());
        let z = match &model {
            Model::EquiTab(m) => m.logits(tape, &p, &batch),
            Model::Baseline(m) => m.logits(tape, &p, &batch),
        };
        let z = z.map_err(|e| match e {
            Error::Tensor(t) => t,
            other => unreachable!("validated by the forward pass above: {other}"),
        })?;
        tape.cross_entropy_from_logits(z, &targets)
    })
    .map_err(Error::from)?;
    Ok(CheckRow { name: format!("full_loss_{}", kind.name()), report })
}

pub fn render(rows: &[CheckRow], tolerance: f64) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.3e}\t{}", r.name, r.report.checked, r.report.max_rel_err, r.report.passes(tolerance));
    }
    s
}

pub fn cmd_gradcheck(run: &RunConfig) -> Result<Vec<CheckRow>> {
    let step: f64 = run.get("step")?;
    let tolerance: f64 = run.get("tolerance")?;
    let mut rows = primitive_checks(step, run.seed)?;
    for kind in [ModelKind::EquiTab, ModelKind::Baseline] {
        rows.push(full_loss_check(kind, step, run.seed)?);
    }
    std::fs::create_dir_all(&run.out).map_err(HarnessError::io(&run.out))?;
    let path = run.out.join(RESULTS_FILE);
    std::fs::write(&path, render(&rows, tolerance)).map_err(HarnessError::io(&path))?;
    write_manifest(run, &[Artifact::exact(RESULTS_FILE)])?;
    Ok(rows)
}

//! `grid`: class maps of nine training points on a 3x3 lattice, predicted
//! under several class orderings and mapped back to the original labels.

use std::fmt::Write as _;

use equitab::episode::standardize;
use equitab::predictor::{argmax_rows, predict_relabeled};
use equitab::{Episode, PermutationSpec, Predictor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{write_manifest, Artifact};
use crate::models::{load_models, Routed};

pub const N_CLASSES: usize = 9;
pub const CSV_HEADER: &str = "ordering_id,x1,x2,pred_class";
pub const TRAIN_FILE: &str = "grid_train.csv";
pub const ORDERINGS_FILE: &str = "grid_orderings.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub resolution: usize,
    pub orderings: Vec<PermutationSpec>,
    /// Test coordinates, `x1` varying fastest.
    pub points: Vec<[f64; 2]>,
    /// Predicted original class per ordering and grid point.
    pub predictions: Vec<Vec<usize>>,
    pub train: Vec<([f64; 2], usize)>,
}

impl GridResult {
    /// Grid points whose prediction is not the same under every ordering.
    pub fn differing_cells(&self) -> usize {
        (0..self.points.len())
            .filter(|&i| self.predictions.iter().any(|p| p[i] != self.predictions[0][i]))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for (o, preds) in self.predictions.iter().enumerate() {
            for (pt, c) in self.points.iter().zip(preds) {
                let _ = writeln!(s, "{o},{},{},{c}", pt[0], pt[1]);
            }
        }
        s
    }
}

fn lin(i: usize, resolution: usize, extent: f64) -> f64 {
    if resolution == 1 {
        0.0
    } else {
        -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64
    }
}

/// Class `k` sits at `(k mod 3 - 1, k div 3 - 1)`.
pub fn training_points() -> Vec<([f64; 2], usize)> {
    (0..N_CLASSES).map(|k| ([(k % 3) as f64 - 1.0, (k / 3) as f64 - 1.0], k)).collect()
}

pub fn grid_points(resolution: usize, extent: f64) -> Vec<[f64; 2]> {
    (0..resolution)
        .flat_map(|r| (0..resolution).map(move |c| [lin(c, resolution, extent), lin(r, resolution, extent)]))
        .collect()
}

/// Episode over the lattice with the grid as test rows, z-scored on the
/// training points. Test labels are placeholders.
pub fn grid_episode(points: &[[f64; 2]]) -> Result<Episode> {
    let train = training_points();
    let x = Array2::from_shape_fn((train.len(), 2), |(i, j)| train[i].0[j]);
    let xs = Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j]);
    let (x, xs) = standardize(&x, &xs);
    let labels: Vec<usize> = train.iter().map(|t| t.1).collect();
    Ok(Episode::from_labels(x, &labels, xs, &vec![0; points.len()], N_CLASSES)?)
}

pub fn orderings(count: usize, seed: u64) -> Vec<PermutationSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| PermutationSpec::random(N_CLASSES, &mut rng)).collect()
}

pub fn run_grid<P: Predictor + ?Sized>(f: &P, resolution: usize, extent: f64, orderings: &[PermutationSpec]) -> Result<GridResult> {
    let points = grid_points(resolution, extent);
    let episode = grid_episode(&points)?;
    let predictions = orderings
        .iter()
        .map(|sigma| Ok(argmax_rows(&predict_relabeled(f, &episode, sigma)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridResult { resolution, orderings: orderings.to_vec(), points, predictions, train: training_points() })
}

/// One CSV per model, `grid_<label>.csv`, evaluated in 64-bit precision.
pub fn cmd_grid(run: &RunConfig) -> Result<Vec<(String, GridResult)>> {
    let resolution: usize = run.get("resolution")?;
    if resolution == 0 {
        return Err(run.bad("resolution", "must be at least 1"));
    }
    let extent: f64 = run.get("extent")?;
    let ecoc_seed: u64 = run.get("ecoc_seed")?;
    let sigmas = orderings(run.get("orderings")?, run.seed);
    let models = load_models(&run.get_list("models"), run)?;
    std::fs::create_dir_all(&run.out).map_err(HarnessError::io(&run.out))?;
    let write = |name: &str, text: &str| {
        let path = run.out.join(name);
        std::fs::write(&path, text).map_err(HarnessError::io(&path))
    };

    let mut train = String::from("x1,x2,class\n");
    for (pt, k) in training_points() {
        let _ = writeln!(train, "{},{},{k}", pt[0], pt[1]);
    }
    write(TRAIN_FILE, &train)?;
    let mut ords = String::from("ordering_id,sigma\n");
    for (o, s) in sigmas.iter().enumerate() {
        let body: Vec<String> = s.sigma().iter().map(usize::to_string).collect();
        let _ = writeln!(ords, "{o},{}", body.join(" "));
    }
    write(ORDERINGS_FILE, &ords)?;

    let mut artifacts = vec![Artifact::exact(TRAIN_FILE), Artifact::exact(ORDERINGS_FILE)];
    let mut out = Vec::new();
    for m in models {
        let wide = m.model.cast::<f64>();
        let result = run_grid(&Routed { model: &wide, ecoc_seed }, resolution, extent, &sigmas)?;
        let name = format!("grid_{}.csv", m.label);
        write(&name, &result.to_csv())?;
        artifacts.push(Artifact::exact(&name));
        out.push((m.label, result));
    }
    write_manifest(run, &artifacts)?;
    Ok(out)
}

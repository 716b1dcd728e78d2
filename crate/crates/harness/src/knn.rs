//! k-nearest-neighbour reference classifier.

use equitab::episode::standardize;
use equitab::{Episode, Error, Predictor};
use ndarray::Array2;

pub const DEFAULT_K: usize = 5;

/// Class frequencies among the `k` nearest training rows (Euclidean, on
/// covariates z-scored with training statistics). Equal distances go to the
/// lower training index.
pub fn knn_predict(episode: &Episode, k: usize) -> equitab::Result<Array2<f64>> {
    let n = episode.n_train();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must lie in 1..={n}")));
    }
    let (x, xs) = standardize(&episode.x, &episode.x_star);
    let labels = episode.train_labels();
    let q = episode.n_classes();
    let mut out = Array2::zeros((episode.n_test(), q));
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (t, test) in xs.rows().into_iter().enumerate() {
        order.clear();
        order.extend(x.rows().into_iter().enumerate().map(|(i, r)| {
            let d: f64 = r.iter().zip(test.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        }));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &order[..k] {
            out[[t, labels[i]]] += 1.0 / k as f64;
        }
    }
    Ok(out)
}

/// [`knn_predict`] with `k` capped at the training size.
#[derive(Debug, Clone, Copy)]
pub struct Knn {
    pub k: usize,
}

impl Predictor for Knn {
    fn predict(&self, episode: &Episode) -> equitab::Result<Array2<f64>> {
        knn_predict(episode, self.k.min(episode.n_train()))
    }
}

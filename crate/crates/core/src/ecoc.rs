//! Partition codebooks for running a fixed-width classifier on more classes
//! than it emits.
//!
//! Each partition maps the `K` classes onto `q_max` groups. A sub-predictor
//! solves the grouped task per partition and class `k` scores
//! `Σ_r log p_r(group_r(k))`; the output is the softmax of those scores.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::{one_hot, Episode};
use crate::error::{Error, Result};
use crate::predictor::Predictor;

const MAX_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBook {
    k: usize,
    q_max: usize,
    /// `partitions[r][k]` is the group of class `k` under partition `r`.
    partitions: Vec<Vec<usize>>,
}

impl CodeBook {
    pub fn new(k: usize, q_max: usize, partitions: Vec<Vec<usize>>) -> Result<Self> {
        let book = CodeBook { k, q_max, partitions };
        if k < 2 || q_max < 2 {
            return Err(Error::Codebook(format!("need K >= 2 and q_max >= 2, got K = {k}, q_max = {q_max}")));
        }
        for (r, part) in book.partitions.iter().enumerate() {
            if part.len() != k || part.iter().any(|&g| g >= q_max) {
                return Err(Error::Codebook(format!("partition {r} is not a map from {k} classes into {q_max} groups")));
            }
        }
        if let Some((a, b)) = book.uncovered_pair() {
            return Err(Error::Codebook(format!("classes {a} and {b} are never separated")));
        }
        Ok(book)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn partitions(&self) -> &[Vec<usize>] {
        &self.partitions
    }

    pub fn is_identity(&self) -> bool {
        self.partitions.len() == 1 && self.partitions[0].iter().enumerate().all(|(k, &g)| k == g)
    }

    /// First pair of classes no partition separates.
    pub fn uncovered_pair(&self) -> Option<(usize, usize)> {
        uncovered(self.k, &self.partitions)
    }

    /// Number of groups partition `r` actually uses.
    fn groups(&self, r: usize) -> usize {
        self.partitions[r].iter().max().map_or(0, |&g| g + 1)
    }
}

fn uncovered(k: usize, partitions: &[Vec<usize>]) -> Option<(usize, usize)> {
    (0..k)
        .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
        .find(|&(a, b)| partitions.iter().all(|p| p[a] == p[b]))
}

/// Random balanced partitions until every class pair is separated, then
/// greedy removal of partitions whose loss keeps coverage.
pub fn build_codebook(k: usize, q_max: usize, seed: u64) -> Result<CodeBook> {
    if k < 2 || q_max < 2 {
        return Err(Error::Codebook(format!("need K >= 2 and q_max >= 2, got K = {k}, q_max = {q_max}")));
    }
    if k <= q_max {
        return CodeBook::new(k, q_max, vec![(0..k).collect()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partitions = Vec::new();
    while uncovered(k, &partitions).is_some() {
        if partitions.len() >= MAX_DRAWS {
            return Err(Error::Codebook(format!("no covering codebook after {MAX_DRAWS} draws")));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut part = vec![0; k];
        for (pos, &class) in order.iter().enumerate() {
            part[class] = pos % q_max;
        }
        partitions.push(part);
    }
    let mut r = 0;
    while r < partitions.len() {
        let removed = partitions.remove(r);
        if uncovered(k, &partitions).is_some() {
            partitions.insert(r, removed);
            r += 1;
        }
    }
    CodeBook::new(k, q_max, partitions)
}

/// The episode with classes merged by partition `r`.
pub fn grouped_episode(episode: &Episode, book: &CodeBook, r: usize) -> Result<Episode> {
    let part = &book.partitions[r];
    let groups = book.groups(r);
    let map = |labels: Vec<usize>| labels.into_iter().map(|k| part[k]).collect::<Vec<_>>();
    Episode::probe(
        episode.x.clone(),
        one_hot(&map(episode.train_labels()), groups)?,
        episode.x_star.clone(),
        one_hot(&map(episode.test_labels()), groups)?,
    )
}

/// Aggregates per-partition group probabilities `(M, groups_r)` into class
/// probabilities `(M, K)`.
pub fn aggregate(book: &CodeBook, sub: &[Array2<f64>]) -> Result<Array2<f64>> {
    if sub.len() != book.partitions.len() {
        return Err(Error::Codebook(format!("{} sub-predictions for {} partitions", sub.len(), book.partitions.len())));
    }
    let m = sub.first().map_or(0, |s| s.nrows());
    let mut out = Array2::zeros((m, book.k));
    for i in 0..m {
        let mut scores = vec![0.0; book.k];
        for (part, probs) in book.partitions.iter().zip(sub) {
            for (k, s) in scores.iter_mut().enumerate() {
                *s += probs[[i, part[k]]].max(f64::MIN_POSITIVE).ln();
            }
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for (k, s) in scores.iter().enumerate() {
            out[[i, k]] = (s - max).exp() / denom;
        }
    }
    Ok(out)
}

/// Runs `inner` once per partition and aggregates.
pub fn ecoc_forward<P: Predictor + ?Sized>(episode: &Episode, inner: &P, book: &CodeBook) -> Result<Array2<f64>> {
    if episode.n_classes() != book.k {
        return Err(Error::Codebook(format!(
            "codebook built for K = {} applied to an episode with q = {}",
            book.k,
            episode.n_classes()
        )));
    }
    if let Some((a, b)) = book.uncovered_pair() {
        return Err(Error::Codebook(format!("classes {a} and {b} are never separated")));
    }
    if book.is_identity() {
        return inner.predict(episode);
    }
    let sub = (0..book.partitions.len())
        .map(|r| inner.predict(&grouped_episode(episode, book, r)?))
        .collect::<Result<Vec<_>>>()?;
    aggregate(book, &sub)
}

/// Predictor that routes episodes with more than `q_max` classes through a
/// codebook built per class count.
pub struct Ecoc<P> {
    pub inner: P,
    pub q_max: usize,
    pub seed: u64,
}

impl<P: Predictor> Predictor for Ecoc<P> {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>> {
        let book = build_codebook(episode.n_classes(), self.q_max, self.seed)?;
        ecoc_forward(episode, &self.inner, &book)
    }
}

/// Wall-clock seconds of one call.
pub fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

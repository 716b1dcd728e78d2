//! Synthetic episode generators.
//!
//! Two families are provided. `Blobs` draws Gaussian clusters with uniform
//! random means in `[-3, 3]^p` and a shared isotropic scale `3 / separation`.
//! `RandomMlp` draws `x ~ U[-1, 1]^p` and labels each row with the argmax of a
//! random two-layer tanh network plus Gumbel noise scaled by `temperature`.
//! Every episode is finally relabelled by a uniformly random class
//! permutation, so an episode and any of its relabelled twins are equally
//! likely.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal, StandardNormal, Uniform};

use crate::episode::{one_hot, standardize, Episode, EpisodeBatch};
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

impl IntRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        IntRange { lo, hi }
    }

    pub fn fixed(v: usize) -> Self {
        IntRange { lo: v, hi: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.lo..=self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Blobs { separation: f64 },
    RandomMlp { hidden: usize, temperature: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Blobs { .. } => "blobs",
            Family::RandomMlp { .. } => "random-mlp",
        }
    }
}

/// How many test rows an episode gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestRows {
    /// `M` drawn from the range.
    Range(IntRange),
    /// `M = total - N`.
    Total(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub n_train: IntRange,
    pub n_test: TestRows,
    pub n_features: IntRange,
    pub n_classes: IntRange,
    pub family: Family,
}

/// Sampled `(N, M, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

impl PriorConfig {
    pub fn blobs(separation: f64) -> Self {
        PriorConfig {
            n_train: IntRange::new(32, 224),
            n_test: TestRows::Total(256),
            n_features: IntRange::new(2, 8),
            n_classes: IntRange::new(2, 5),
            family: Family::Blobs { separation },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [("n_train", self.n_train), ("n_features", self.n_features), ("n_classes", self.n_classes)];
        for (name, r) in ranges {
            if r.lo > r.hi {
                return Err(Error::Config(format!("{name} range {}..={} is empty", r.lo, r.hi)));
            }
        }
        if self.n_classes.lo < 2 {
            return Err(Error::Config("episodes need at least 2 classes".into()));
        }
        if self.n_features.lo < 1 {
            return Err(Error::Config("episodes need at least 1 feature".into()));
        }
        if self.n_train.lo < self.n_classes.hi {
            return Err(Error::Config(format!(
                "N may be {} but q may be {}: every class must fit in the training split",
                self.n_train.lo, self.n_classes.hi
            )));
        }
        match self.n_test {
            TestRows::Range(r) if r.lo > r.hi || r.lo < 1 => {
                return Err(Error::Config(format!("n_test range {}..={} is invalid", r.lo, r.hi)));
            }
            TestRows::Total(t) if t <= self.n_train.hi => {
                return Err(Error::Config(format!("total rows {t} leave no test rows when N = {}", self.n_train.hi)));
            }
            _ => {}
        }
        match self.family {
            Family::Blobs { separation } if !(separation > 0.0) => {
                Err(Error::Config(format!("blob separation must be positive, got {separation}")))
            }
            Family::RandomMlp { hidden, temperature } if hidden == 0 || !(temperature >= 0.0) => {
                Err(Error::Config(format!("random-mlp needs hidden >= 1 and temperature >= 0, got {hidden}, {temperature}")))
            }
            _ => Ok(()),
        }
    }

    fn draw_dims<R: Rng + ?Sized>(&self, rng: &mut R) -> Dims {
        let n = self.n_train.sample(rng);
        let m = match self.n_test {
            TestRows::Range(r) => r.sample(rng),
            TestRows::Total(t) => t - n,
        };
        let p = self.n_features.sample(rng);
        let q = self.n_classes.sample(rng);
        Dims { n, m, p, q }
    }
}

/// An episode plus the generator's class map: `label_of_cluster[c]` is the
/// class id the raw generator class `c` ended up with.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedEpisode {
    pub episode: Episode,
    pub label_of_cluster: Vec<usize>,
}

pub fn sample_episode(config: &PriorConfig, seed: u64) -> Result<Episode> {
    Ok(sample_episode_traced(config, seed)?.episode)
}

pub fn sample_episode_traced(config: &PriorConfig, seed: u64) -> Result<TracedEpisode> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = config.draw_dims(&mut rng);
    generate(config, dims, &mut rng)
}

/// Samples `batch_size` episodes with shared dims. The dims come from `seed`;
/// episode `i` is generated from seed `seed + i`.
pub fn sample_batch(config: &PriorConfig, batch_size: usize, seed: u64) -> Result<EpisodeBatch> {
    config.validate()?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let dims = config.draw_dims(&mut ChaCha8Rng::seed_from_u64(seed));
    let episodes = (0..batch_size as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            // keep the stream aligned with sample_episode
            let _ = config.draw_dims(&mut rng);
            generate(config, dims, &mut rng).map(|t| t.episode)
        })
        .collect::<Result<Vec<_>>>()?;
    EpisodeBatch::new(episodes)
}

/// Generates an episode with the given dims, ignoring the config's ranges.
pub fn sample_with_dims(config: &PriorConfig, dims: Dims, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate(config, dims, &mut rng)?.episode)
}

fn generate<R: Rng>(config: &PriorConfig, dims: Dims, rng: &mut R) -> Result<TracedEpisode> {
    let Dims { n, m, p, q } = dims;
    if q < 2 || n < q || m < 1 || p < 1 {
        return Err(Error::Config(format!("infeasible dims N={n} M={m} p={p} q={q}")));
    }
    let total = n + m;
    for _ in 0..MAX_ATTEMPTS {
        let (x, raw) = match config.family {
            Family::Blobs { separation } => blobs(rng, total, p, q, 3.0 / separation),
            Family::RandomMlp { hidden, temperature } => random_mlp(rng, total, p, q, hidden, temperature),
        };
        let mut seen = vec![false; q];
        raw[..n].iter().for_each(|&c| seen[c] = true);
        if seen.iter().all(|&s| s) {
            let mut label_of_cluster: Vec<usize> = (0..q).collect();
            label_of_cluster.shuffle(rng);
            let labels: Vec<usize> = raw.iter().map(|&c| label_of_cluster[c]).collect();
            let (xs, xs_star) = standardize(
                &x.slice(ndarray::s![..n, ..]).to_owned(),
                &x.slice(ndarray::s![n.., ..]).to_owned(),
            );
            let episode = Episode::new(xs, one_hot(&labels[..n], q)?, xs_star, one_hot(&labels[n..], q)?)?;
            return Ok(TracedEpisode { episode, label_of_cluster });
        }
    }
    Err(Error::Config(format!(
        "could not cover all {q} classes in {n} training rows after {MAX_ATTEMPTS} attempts"
    )))
}

fn blobs<R: Rng>(rng: &mut R, rows: usize, p: usize, q: usize, scale: f64) -> (Array2<f64>, Vec<usize>) {
    let unit = Uniform::new_inclusive(-3.0, 3.0).expect("valid bounds");
    let means = Array2::from_shape_fn((q, p), |_| unit.sample(rng));
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..q)).collect();
    let x = Array2::from_shape_fn((rows, p), |(i, j)| {
        let z: f64 = StandardNormal.sample(rng);
        means[[labels[i], j]] + scale * z
    });
    (x, labels)
}

fn random_mlp<R: Rng>(rng: &mut R, rows: usize, p: usize, q: usize, hidden: usize, temperature: f64) -> (Array2<f64>, Vec<usize>) {
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let x = Array2::from_shape_fn((rows, p), |_| unit.sample(rng));
    let w1_dist = Normal::new(0.0, 1.0 / (p as f64).sqrt()).expect("positive std");
    let w2_dist = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std");
    let w1 = Array2::from_shape_fn((p, hidden), |_| w1_dist.sample(rng));
    let b1 = Array2::from_shape_fn((1, hidden), |_| unit.sample(rng));
    let w2 = Array2::from_shape_fn((hidden, q), |_| w2_dist.sample(rng));
    let h = (x.dot(&w1) + &b1).mapv(f64::tanh);
    let mut logits = h.dot(&w2);
    // center each class column so no class dominates by offset alone
    let mean = logits.mean_axis(ndarray::Axis(0)).expect("rows >= 1");
    logits -= &mean;
    let std = logits.std(0.0).max(1e-12);
    logits /= std;
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid");
    let labels = logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::NEG_INFINITY);
            for (k, &v) in row.iter().enumerate() {
                let noisy = v + temperature * gumbel.sample(rng);
                if noisy > best.1 {
                    best = (k, noisy);
                }
            }
            best.0
        })
        .collect();
    (x, labels)
}

//! Episode-level predictors and permutation averaging.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::{permute_targets, Episode, PermutationSpec};
use crate::error::{Error, Result};

/// Maps an episode to `(M, q)` class-probability rows.
pub trait Predictor {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>> {
        (**self).predict(episode)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>> {
        (**self).predict(episode)
    }
}

/// Adapts a closure.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&Episode) -> Result<Array2<f64>>> Predictor for FnPredictor<F> {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>> {
        (self.0)(episode)
    }
}

/// `σ⁻¹ ∘ f ∘ σ`: predicts on the relabelled episode and maps the prediction
/// back to the original class slots.
pub fn predict_relabeled<P: Predictor + ?Sized>(f: &P, episode: &Episode, sigma: &PermutationSpec) -> Result<Array2<f64>> {
    let out = f.predict(&permute_targets(episode, sigma)?)?;
    sigma.inverse().apply_rows(&out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn argmax_rows(a: &Array2<f64>) -> Vec<usize> {
    a.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
}

/// Largest `q` for which exhaustive averaging runs without an override.
pub const EXHAUSTIVE_Q_CAP: usize = 4;

/// Which permutations a [`Symmetrized`] predictor averages over.
#[derive(Debug, Clone, PartialEq)]
pub enum PermSet {
    /// All `q!` permutations; refused above [`EXHAUSTIVE_Q_CAP`] unless `force`.
    Exhaustive { force: bool },
    /// `n` i.i.d. uniform permutations drawn from `seed`, the same draws for every episode.
    Sampled { n: usize, seed: u64 },
    /// A fixed list; every entry must act on the episode's `q`.
    Explicit(Vec<PermutationSpec>),
}

impl PermSet {
    pub fn perms(&self, q: usize) -> Result<Vec<PermutationSpec>> {
        match self {
            PermSet::Exhaustive { force } => {
                if q > EXHAUSTIVE_Q_CAP && !force {
                    return Err(Error::CostGuard { q, max: EXHAUSTIVE_Q_CAP });
                }
                Ok(PermutationSpec::all(q))
            }
            PermSet::Sampled { n, seed } => {
                if *n == 0 {
                    return Err(Error::Config("need at least one sampled permutation".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*n).map(|_| PermutationSpec::random(q, &mut rng)).collect())
            }
            PermSet::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::Config("need at least one permutation".into()));
                }
                Ok(list.clone())
            }
        }
    }

    pub fn is_exhaustive(&self) -> bool {
        matches!(self, PermSet::Exhaustive { .. })
    }
}

/// Average of `σ⁻¹ ∘ f ∘ σ` over a permutation set.
pub struct Symmetrized<P> {
    pub inner: P,
    pub perms: PermSet,
}

impl<P: Predictor> Symmetrized<P> {
    pub fn new(inner: P, perms: PermSet) -> Self {
        Symmetrized { inner, perms }
    }

    /// Per-permutation predictions in original class slots, in draw order.
    pub fn members(&self, episode: &Episode) -> Result<Vec<Array2<f64>>> {
        self.perms
            .perms(episode.n_classes())?
            .iter()
            .map(|s| predict_relabeled(&self.inner, episode, s))
            .collect()
    }
}

impl<P: Predictor> Predictor for Symmetrized<P> {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>> {
        let members = self.members(episode)?;
        let n = members.len() as f64;
        let mut acc = Array2::zeros(members[0].dim());
        for m in &members {
            acc += m;
        }
        Ok(acc / n)
    }
}

/// Mean over `n_ens` i.i.d. uniform relabellings; deterministic in `seed`.
pub fn ensemble_forward<P: Predictor>(episode: &Episode, f: &P, n_ens: usize, seed: u64) -> Result<Array2<f64>> {
    Symmetrized::new(f, PermSet::Sampled { n: n_ens, seed }).predict(episode)
}

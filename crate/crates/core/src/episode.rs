//! Classification episodes and class-slot permutations.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One task: a labelled training split plus test points with held-out labels.
///
/// Targets are one-hot rows; `y.ncols()` is the class count `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub x_star: Array2<f64>,
    pub y_star: Array2<f64>,
}

impl Episode {
    /// Builds an episode and checks every invariant: consistent extents,
    /// one-hot targets, `q >= 2`, `N >= q`, `M >= 1`, `p >= 1`, and every
    /// class present in the training targets.
    pub fn new(x: Array2<f64>, y: Array2<f64>, x_star: Array2<f64>, y_star: Array2<f64>) -> Result<Self> {
        let e = Episode::probe(x, y, x_star, y_star)?;
        let (n, q) = (e.n_train(), e.n_classes());
        if q < 2 {
            return Err(Error::Episode(format!("need at least 2 classes, got {q}")));
        }
        if n < q {
            return Err(Error::Episode(format!("N = {n} training rows cannot cover q = {q} classes")));
        }
        let counts = e.y.sum_axis(Axis(0));
        if let Some(k) = counts.iter().position(|&c| c == 0.0) {
            return Err(Error::Episode(format!("class {k} never appears in the training targets")));
        }
        Ok(e)
    }

    /// Structural checks only: extents and one-hot rows, with `N, M, p, q >= 1`.
    ///
    /// Used to probe models on edge cases the prior never produces (a single
    /// training row, classes missing from the context).
    pub fn probe(x: Array2<f64>, y: Array2<f64>, x_star: Array2<f64>, y_star: Array2<f64>) -> Result<Self> {
        let (n, p, q, m) = (x.nrows(), x.ncols(), y.ncols(), x_star.nrows());
        if n == 0 || m == 0 || p == 0 || q == 0 {
            return Err(Error::Episode(format!("empty extent: N={n} M={m} p={p} q={q}")));
        }
        if y.nrows() != n || x_star.ncols() != p || y_star.nrows() != m || y_star.ncols() != q {
            return Err(Error::Episode(format!(
                "inconsistent extents: X {:?}, Y {:?}, X* {:?}, Y* {:?}",
                x.dim(),
                y.dim(),
                x_star.dim(),
                y_star.dim()
            )));
        }
        for (name, t) in [("Y", &y), ("Y*", &y_star)] {
            if let Some(r) = t.rows().into_iter().position(|row| one_hot_index(&row.to_vec()).is_none()) {
                return Err(Error::Episode(format!("{name} row {r} is not one-hot")));
            }
        }
        Ok(Episode { x, y, x_star, y_star })
    }

    /// Builds an episode from integer labels.
    pub fn from_labels(x: Array2<f64>, labels: &[usize], x_star: Array2<f64>, labels_star: &[usize], q: usize) -> Result<Self> {
        Episode::new(x, one_hot(labels, q)?, x_star, one_hot(labels_star, q)?)
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.x_star.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.y.ncols()
    }

    /// `(N, M, p, q)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n_train(), self.n_test(), self.n_features(), self.n_classes())
    }

    pub fn train_labels(&self) -> Vec<usize> {
        labels_of(&self.y)
    }

    pub fn test_labels(&self) -> Vec<usize> {
        labels_of(&self.y_star)
    }

    /// Keeps only the listed test rows.
    pub fn select_test(&self, rows: &[usize]) -> Result<Episode> {
        Episode::probe(
            self.x.clone(),
            self.y.clone(),
            self.x_star.select(Axis(0), rows),
            self.y_star.select(Axis(0), rows),
        )
    }

    /// Reorders the training rows; `order[i]` is the source row of row `i`.
    pub fn reorder_train(&self, order: &[usize]) -> Episode {
        Episode {
            x: self.x.select(Axis(0), order),
            y: self.y.select(Axis(0), order),
            x_star: self.x_star.clone(),
            y_star: self.y_star.clone(),
        }
    }

    /// Text dump: a header line `N M p q`, then X, Y, X*, Y* row by row.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (n, m, p, q) = self.dims();
        writeln!(w, "{n} {m} {p} {q}")?;
        for block in [&self.x, &self.y, &self.x_star, &self.y_star] {
            for row in block.rows() {
                let mut line = String::new();
                for (j, v) in row.iter().enumerate() {
                    if j > 0 {
                        line.push(' ');
                    }
                    write!(line, "{v:?}").expect("write to string");
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Episode> {
        let mut tokens = Vec::new();
        let mut header = None;
        for line in r.lines() {
            let line = line?;
            if header.is_none() {
                let h: Vec<usize> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::Episode(format!("bad dump header {line:?}"))))
                    .collect::<Result<_>>()?;
                if h.len() != 4 {
                    return Err(Error::Episode(format!("bad dump header {line:?}")));
                }
                header = Some((h[0], h[1], h[2], h[3]));
                continue;
            }
            for t in line.split_whitespace() {
                tokens.push(t.parse::<f64>().map_err(|_| Error::Episode(format!("bad value {t:?} in dump")))?);
            }
        }
        let (n, m, p, q) = header.ok_or_else(|| Error::Episode("empty dump".into()))?;
        let sizes = [n * p, n * q, m * p, m * q];
        if tokens.len() != sizes.iter().sum::<usize>() {
            return Err(Error::Episode(format!("dump holds {} values, header implies {}", tokens.len(), sizes.iter().sum::<usize>())));
        }
        let mut it = tokens.into_iter();
        let mut take = |rows: usize, cols: usize| {
            Array2::from_shape_vec((rows, cols), it.by_ref().take(rows * cols).collect()).expect("sized above")
        };
        let x = take(n, p);
        let y = take(n, q);
        let xs = take(m, p);
        let ys = take(m, q);
        Episode::probe(x, y, xs, ys)
    }
}

/// Z-scores both splits with the training split's column statistics.
///
/// Columns with zero training variance are only centered.
pub fn standardize(x: &Array2<f64>, x_star: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let mut std = x.map_axis(Axis(0), |c| {
        let mu = c.mean().unwrap_or(0.0);
        (c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt()
    });
    std.mapv_inplace(|s| if s > 1e-12 { s } else { 1.0 });
    ((x - &mean) / &std, (x_star - &mean) / &std)
}

pub(crate) fn one_hot_index(row: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (j, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.replace(j).is_some() {
                return None;
            }
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

fn labels_of(y: &Array2<f64>) -> Vec<usize> {
    y.rows()
        .into_iter()
        .map(|r| r.iter().position(|&v| v == 1.0).expect("one-hot row"))
        .collect()
}

pub fn one_hot(labels: &[usize], q: usize) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((labels.len(), q));
    for (i, &k) in labels.iter().enumerate() {
        if k >= q {
            return Err(Error::Episode(format!("label {k} out of range for q = {q}")));
        }
        y[[i, k]] = 1.0;
    }
    Ok(y)
}

/// Episodes sharing identical `(N, M, p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn new(episodes: Vec<Episode>) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| Error::Config("a batch needs at least one episode".into()))?;
        let dims = first.dims();
        if let Some(e) = episodes.iter().find(|e| e.dims() != dims) {
            return Err(Error::Episode(format!("batch mixes dims {:?} and {:?}", dims, e.dims())));
        }
        Ok(EpisodeBatch { episodes })
    }

    pub fn single(episode: Episode) -> Self {
        EpisodeBatch { episodes: vec![episode] }
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// `(N, M, p, q)` shared by every episode.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.episodes[0].dims()
    }

    /// Splits into consecutive sub-batches of at most `size` episodes.
    pub fn chunks(&self, size: usize) -> Vec<EpisodeBatch> {
        self.episodes
            .chunks(size.max(1))
            .map(|c| EpisodeBatch { episodes: c.to_vec() })
            .collect()
    }
}

/// A bijection on `q` class slots.
///
/// Applied to a vector, `σ(y)_j = y_{σ(j)}`; a one-hot row for class `k`
/// becomes a one-hot row for class `σ⁻¹(k)`. Indices are zero based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PermutationSpec {
    sigma: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationSpec {
    pub fn new(sigma: Vec<usize>) -> Result<Self> {
        let q = sigma.len();
        let mut inverse = vec![usize::MAX; q];
        for (j, &s) in sigma.iter().enumerate() {
            if s >= q || inverse[s] != usize::MAX {
                return Err(Error::Permutation(format!("{sigma:?} is not a bijection on 0..{q}")));
            }
            inverse[s] = j;
        }
        Ok(PermutationSpec { sigma, inverse })
    }

    /// From the one-based notation `(σ(1), …, σ(q))`.
    pub fn from_one_based(sigma: &[usize]) -> Result<Self> {
        if sigma.contains(&0) {
            return Err(Error::Permutation(format!("{sigma:?} is not one-based")));
        }
        PermutationSpec::new(sigma.iter().map(|s| s - 1).collect())
    }

    pub fn identity(q: usize) -> Self {
        let v: Vec<usize> = (0..q).collect();
        PermutationSpec { sigma: v.clone(), inverse: v }
    }

    /// Uniformly random permutation.
    pub fn random<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Self {
        let mut sigma: Vec<usize> = (0..q).collect();
        sigma.shuffle(rng);
        PermutationSpec::new(sigma).expect("shuffle of 0..q")
    }

    /// All `q!` permutations in lexicographic order of `σ`.
    pub fn all(q: usize) -> Vec<PermutationSpec> {
        let mut out = Vec::new();
        let mut current: Vec<usize> = (0..q).collect();
        loop {
            out.push(PermutationSpec::new(current.clone()).expect("valid"));
            // next lexicographic permutation
            let Some(i) = (1..q).rev().find(|&i| current[i - 1] < current[i]) else { break };
            let j = (i..q).rev().find(|&j| current[j] > current[i - 1]).expect("exists");
            current.swap(i - 1, j);
            current[i..].reverse();
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn inverse(&self) -> PermutationSpec {
        PermutationSpec { sigma: self.inverse.clone(), inverse: self.sigma.clone() }
    }

    /// `σ⁻¹(k)`: the new index of class `k`.
    pub fn relabel(&self, k: usize) -> usize {
        self.inverse[k]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.sigma.iter().map(|&s| v[s]).collect()
    }

    /// Applies the permutation to every row (column reindexing).
    pub fn apply_rows(&self, a: &Array2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != self.len() {
            return Err(Error::Permutation(format!(
                "permutation over {} slots applied to rows of width {}",
                self.len(),
                a.ncols()
            )));
        }
        Ok(a.select(Axis(1), &self.sigma))
    }
}

/// Relabels an episode's classes: `Y ↦ σ(Y)`, `Y* ↦ σ(Y*)`; covariates untouched.
pub fn permute_targets(episode: &Episode, perm: &PermutationSpec) -> Result<Episode> {
    Ok(Episode {
        x: episode.x.clone(),
        y: perm.apply_rows(&episode.y)?,
        x_star: episode.x_star.clone(),
        y_star: perm.apply_rows(&episode.y_star)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Episode {
        Episode::from_labels(
            array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]],
            &[0, 1, 2],
            array![[0.5, 0.5]],
            &[1],
            3,
        )
        .unwrap()
    }

    #[test]
    fn paper_indexing_convention() {
        let sigma = PermutationSpec::from_one_based(&[3, 1, 2]).unwrap();
        assert_eq!(sigma.apply(&[1.0, 0.0, 0.0]), vec![0.0, 1.0, 0.0]);
        assert_eq!(sigma.relabel(0), 1);
    }

    #[test]
    fn identity_and_inverse_round_trip() {
        let e = tiny();
        assert_eq!(permute_targets(&e, &PermutationSpec::identity(3)).unwrap(), e);
        let s = PermutationSpec::new(vec![2, 0, 1]).unwrap();
        let there = permute_targets(&e, &s).unwrap();
        assert_ne!(there, e);
        assert_eq!(permute_targets(&there, &s.inverse()).unwrap(), e);
    }

    #[test]
    fn size_mismatch_is_a_permutation_error() {
        let err = permute_targets(&tiny(), &PermutationSpec::identity(4)).unwrap_err();
        assert!(matches!(err, Error::Permutation(_)));
        assert!(PermutationSpec::new(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn enumerates_all_permutations() {
        let all = PermutationSpec::all(4);
        assert_eq!(all.len(), 24);
        let mut uniq: Vec<_> = all.iter().map(|p| p.sigma().to_vec()).collect();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 24);
        assert_eq!(PermutationSpec::all(1).len(), 1);
    }

    #[test]
    fn invariants_are_enforced() {
        // class 2 missing from training rows
        let err = Episode::from_labels(array![[0.0], [1.0], [2.0]], &[0, 1, 1], array![[0.0]], &[2], 3);
        assert!(err.is_err());
        // N < q
        assert!(Episode::from_labels(array![[0.0], [1.0]], &[0, 1], array![[0.0]], &[0], 3).is_err());
        // not one-hot
        assert!(Episode::new(array![[0.0], [1.0]], array![[0.5, 0.5], [0.0, 1.0]], array![[0.0]], array![[1.0, 0.0]]).is_err());
        // probe accepts a single training row
        assert!(Episode::probe(array![[0.0]], array![[1.0, 0.0]], array![[0.0]], array![[0.0, 1.0]]).is_ok());
    }

    #[test]
    fn dump_round_trip() {
        let e = tiny();
        let mut buf = Vec::new();
        e.write_dump(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("3 1 2 3\n"));
        assert_eq!(Episode::read_dump(&buf[..]).unwrap(), e);
    }
}

//! Equivariance measurements: violation rate, symmetrised predictors, the
//! equivariance gap and the squared-loss identity
//! `L(f) - L(f̄) = E‖f - f̄‖²`.
//!
//! With exhaustive permutations the expectation runs over the orbit-closed
//! episode set (every episode together with all of its relabelled twins);
//! the identity is then exact up to rounding. With sampled permutations
//! `L(f)` is measured on the episodes as given and the quadratic terms of
//! `f̄` use unbiased pairwise estimates, so both sides agree only in
//! expectation.

use std::fmt;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::{Episode, PermutationSpec};
use crate::error::{Error, Result};
use crate::predictor::{argmax_rows, predict_relabeled, PermSet, Predictor, Symmetrized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    CrossEntropy,
    /// Squared error summed over classes.
    Squared,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::CrossEntropy => "ce",
            Loss::Squared => "sq",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Loss::CrossEntropy),
            "sq" => Ok(Loss::Squared),
            other => Err(Error::Config(format!("unknown loss {other:?}; expected ce or sq"))),
        }
    }

    fn row(self, p: &[f64], y: &[f64]) -> f64 {
        match self {
            Loss::CrossEntropy => {
                let k = y.iter().position(|&v| v == 1.0).expect("one-hot");
                -p[k].max(f64::MIN_POSITIVE).ln()
            }
            Loss::Squared => p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        }
    }

    fn mean(self, probs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
        let rows = probs.rows().into_iter().zip(targets.rows());
        rows.map(|(p, y)| self.row(&p.to_vec(), &y.to_vec())).sum::<f64>() / probs.nrows() as f64
    }
}

/// Fraction of (episode, σ, test point) triples where the argmax of
/// `σ⁻¹ ∘ f ∘ σ` differs from that of `f`; ties go to the lowest index.
pub fn violation_rate<P: Predictor + ?Sized>(f: &P, episodes: &[Episode], n_perms: usize, seed: u64) -> Result<f64> {
    if n_perms == 0 {
        return Err(Error::Config("violation rate needs at least one permutation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diff = 0usize;
    let mut total = 0usize;
    for e in episodes {
        let base = argmax_rows(&f.predict(e)?);
        for _ in 0..n_perms {
            let sigma = PermutationSpec::random(e.n_classes(), &mut rng);
            let other = argmax_rows(&predict_relabeled(f, e, &sigma)?);
            diff += base.iter().zip(&other).filter(|(a, b)| a != b).count();
            total += base.len();
        }
    }
    Ok(if total == 0 { 0.0 } else { diff as f64 / total as f64 })
}

/// `f̄`: the average of `σ⁻¹ ∘ f ∘ σ` over the permutation set. Exhaustive
/// mode refuses `q` above the cap unless forced.
pub fn symmetrize<P: Predictor>(f: P, q: usize, mode: PermSet) -> Result<Symmetrized<P>> {
    mode.perms(q)?;
    Ok(Symmetrized::new(f, mode))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub loss: Loss,
    pub loss_f: f64,
    pub loss_fbar: f64,
    pub gap: f64,
    pub gap_stderr: f64,
    /// Gap under squared loss.
    pub sq_identity_lhs: f64,
    /// `E‖f - f̄‖²`.
    pub sq_identity_rhs: f64,
    /// Standard error of the per-episode difference of the two sides.
    pub sq_identity_stderr: f64,
    pub violation_rate: f64,
    pub n_episodes: usize,
    pub n_perms: usize,
    pub exhaustive: bool,
}

impl GapReport {
    /// One `key=value` line for appending to a results log.
    pub fn summary_line(&self) -> String {
        format!(
            "gap_report loss={} n_episodes={} n_perms={} exhaustive={} loss_f={:.9} loss_fbar={:.9} gap={:.9} gap_stderr={:.9} sq_lhs={:.9} sq_rhs={:.9} violation_rate={:.6}",
            self.loss.name(),
            self.n_episodes,
            self.n_perms,
            self.exhaustive,
            self.loss_f,
            self.loss_fbar,
            self.gap,
            self.gap_stderr,
            self.sq_identity_lhs,
            self.sq_identity_rhs,
            self.violation_rate
        )
    }
}

impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loss: {}", self.loss.name())?;
        writeln!(f, "loss_f: {:.9}", self.loss_f)?;
        writeln!(f, "loss_fbar: {:.9}", self.loss_fbar)?;
        writeln!(f, "gap: {:.9}", self.gap)?;
        writeln!(f, "gap_stderr: {:.9}", self.gap_stderr)?;
        writeln!(f, "sq_identity_lhs: {:.9}", self.sq_identity_lhs)?;
        writeln!(f, "sq_identity_rhs: {:.9}", self.sq_identity_rhs)?;
        writeln!(f, "sq_identity_stderr: {:.9}", self.sq_identity_stderr)?;
        writeln!(f, "violation_rate: {:.6}", self.violation_rate)?;
        writeln!(f, "n_episodes: {}", self.n_episodes)?;
        writeln!(f, "n_perms: {}", self.n_perms)?;
        writeln!(f, "exhaustive: {}", self.exhaustive)
    }
}

/// Per-episode contributions.
struct EpisodeTerms {
    loss_f: f64,
    loss_fbar: f64,
    sq_f: f64,
    sq_fbar: f64,
    sq_rhs: f64,
    violations: usize,
    comparisons: usize,
    n_perms: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn episode_terms<P: Predictor + ?Sized>(f: &P, e: &Episode, loss: Loss, mode: &PermSet) -> Result<EpisodeTerms> {
    let perms = mode.perms(e.n_classes())?;
    let n = perms.len();
    let base = f.predict(e)?;
    let members: Vec<Array2<f64>> = perms.iter().map(|s| predict_relabeled(f, e, s)).collect::<Result<_>>()?;
    let mut fbar = Array2::<f64>::zeros(base.dim());
    for g in &members {
        fbar += g;
    }
    fbar /= n as f64;

    let base_arg = argmax_rows(&base);
    let violations = members
        .iter()
        .map(|g| argmax_rows(g).iter().zip(&base_arg).filter(|(a, b)| a != b).count())
        .sum();
    let m = e.n_test() as f64;
    let ys = &e.y_star;

    let t = if mode.is_exhaustive() {
        let loss_f = members.iter().map(|g| loss.mean(g, ys)).sum::<f64>() / n as f64;
        let sq_f = members.iter().map(|g| Loss::Squared.mean(g, ys)).sum::<f64>() / n as f64;
        let sq_rhs = members.iter().map(|g| Loss::Squared.mean(g, &fbar)).sum::<f64>() / n as f64;
        (loss_f, loss.mean(&fbar, ys), sq_f, Loss::Squared.mean(&fbar, ys), sq_rhs)
    } else {
        // pairwise estimate of ‖f̄‖² per row, unbiased for n >= 2
        let mut sq_fbar = 0.0;
        let mut sq_rhs = 0.0;
        for i in 0..e.n_test() {
            let rows: Vec<Vec<f64>> = members.iter().map(|g| g.row(i).to_vec()).collect();
            let y = ys.row(i).to_vec();
            let mean: Vec<f64> = fbar.row(i).to_vec();
            let self_sq = rows.iter().map(|r| dot(r, r)).sum::<f64>();
            let norm_fbar = if n >= 2 {
                let s: Vec<f64> = (0..mean.len()).map(|j| mean[j] * n as f64).collect();
                (dot(&s, &s) - self_sq) / (n * (n - 1)) as f64
            } else {
                dot(&mean, &mean)
            };
            sq_fbar += dot(&y, &y) - 2.0 * dot(&mean, &y) + norm_fbar;
            sq_rhs += self_sq / n as f64 - norm_fbar;
        }
        (loss.mean(&base, ys), loss.mean(&fbar, ys), Loss::Squared.mean(&base, ys), sq_fbar / m, sq_rhs / m)
    };
    Ok(EpisodeTerms {
        loss_f: t.0,
        loss_fbar: t.1,
        sq_f: t.2,
        sq_fbar: t.3,
        sq_rhs: t.4,
        violations,
        comparisons: n * base_arg.len(),
        n_perms: n,
    })
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo (or exhaustive over σ) estimate of `L(f)`, `L(f̄)` and the gap.
pub fn gap_estimate<P: Predictor + ?Sized>(f: &P, episodes: &[Episode], loss: Loss, mode: &PermSet) -> Result<GapReport> {
    if episodes.is_empty() {
        return Err(Error::Config("gap estimate needs at least one episode".into()));
    }
    let terms = episodes.iter().map(|e| episode_terms(f, e, loss, mode)).collect::<Result<Vec<_>>>()?;
    let col = |get: fn(&EpisodeTerms) -> f64| terms.iter().map(get).collect::<Vec<_>>();
    let (loss_f, _) = mean_and_stderr(&col(|t| t.loss_f));
    let (loss_fbar, _) = mean_and_stderr(&col(|t| t.loss_fbar));
    let (_, gap_stderr) = mean_and_stderr(&col(|t| t.loss_f - t.loss_fbar));
    let (sq_f, _) = mean_and_stderr(&col(|t| t.sq_f));
    let (sq_fbar, _) = mean_and_stderr(&col(|t| t.sq_fbar));
    let (sq_rhs, _) = mean_and_stderr(&col(|t| t.sq_rhs));
    let (_, sq_identity_stderr) = mean_and_stderr(&col(|t| t.sq_f - t.sq_fbar - t.sq_rhs));
    let violations: usize = terms.iter().map(|t| t.violations).sum();
    let comparisons: usize = terms.iter().map(|t| t.comparisons).sum();
    Ok(GapReport {
        loss,
        loss_f,
        loss_fbar,
        gap: loss_f - loss_fbar,
        gap_stderr,
        sq_identity_lhs: sq_f - sq_fbar,
        sq_identity_rhs: sq_rhs,
        sq_identity_stderr,
        violation_rate: violations as f64 / comparisons.max(1) as f64,
        n_episodes: episodes.len(),
        n_perms: terms.iter().map(|t| t.n_perms).max().unwrap_or(0),
        exhaustive: mode.is_exhaustive(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    pub fn margin(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

impl fmt::Display for IdentityCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: lhs {:.12} rhs {:.12} |diff| {:.3e} tolerance {:.3e}",
            if self.passed { "pass" } else { "fail" },
            self.lhs,
            self.rhs,
            self.margin(),
            self.tolerance
        )
    }
}

/// Exhaustive tolerance of the squared-loss identity.
pub const EXACT_IDENTITY_TOL: f64 = 1e-6;

/// Compares the squared-loss gap with `E‖f - f̄‖²`: to 1e-6 when exhaustive,
/// to three standard errors otherwise.
pub fn sq_identity_check<P: Predictor + ?Sized>(f: &P, episodes: &[Episode], mode: &PermSet) -> Result<IdentityCheck> {
    let r = gap_estimate(f, episodes, Loss::Squared, mode)?;
    let tolerance = if r.exhaustive { EXACT_IDENTITY_TOL } else { 3.0 * r.sq_identity_stderr };
    let passed = (r.sq_identity_lhs - r.sq_identity_rhs).abs() <= tolerance;
    Ok(IdentityCheck { lhs: r.sq_identity_lhs, rhs: r.sq_identity_rhs, tolerance, passed })
}

//! Fixed-width baseline: one token per sample, `e = U x + V y` with targets
//! padded to `q_max`, row attention restricted to training rows, and an MLP
//! decoder emitting `q_max` logits.

use autodiff::{Scalar, Tape, Tensor, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::EpisodeBatch;
use crate::equitab::{batch_tensors, probability_rows, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{block, linear, BlockIds, Keys};
use crate::params::{fan_in_uniform, Bound, ParamId, ParamSet};

pub const DEFAULT_Q_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineConfig {
    /// Shared extents; `n_layers` row-attention blocks, decoder width `hidden`.
    pub model: ModelConfig,
    pub q_max: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { model: ModelConfig::default(), q_max: DEFAULT_Q_MAX }
    }
}

#[derive(Debug, Clone)]
struct BaselineIds {
    u: ParamId,
    v: ParamId,
    layers: Vec<BlockIds>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Baseline<T> {
    config: BaselineConfig,
    params: ParamSet<T>,
    ids: BaselineIds,
}

impl<T: Scalar> Baseline<T> {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        config.model.validate()?;
        if config.q_max < 2 {
            return Err(Error::Config(format!("q_max = {} must be at least 2", config.q_max)));
        }
        let ModelConfig { d, n_layers, hidden, p_max, .. } = config.model;
        let q_max = config.q_max;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::default();
        let u = ps.push("enc.u", fan_in_uniform(&mut rng, p_max, vec![p_max, d]));
        let v = ps.push("enc.v", fan_in_uniform(&mut rng, q_max, vec![q_max, d]));
        let layers = (0..n_layers)
            .map(|i| BlockIds::init(&mut ps, &mut rng, &format!("layer{i}.data"), d, hidden))
            .collect();
        let w1 = ps.push("dec.mlp1.w", fan_in_uniform(&mut rng, d, vec![d, hidden]));
        let b1 = ps.push("dec.mlp1.b", Tensor::zeros(vec![hidden]));
        let w2 = ps.push("dec.mlp2.w", fan_in_uniform(&mut rng, hidden, vec![hidden, q_max]));
        let b2 = ps.push("dec.mlp2.b", Tensor::zeros(vec![q_max]));
        let ids = BaselineIds { u, v, layers, w1, b1, w2, b2 };
        Ok(Baseline { config, params: ps, ids })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn q_max(&self) -> usize {
        self.config.q_max
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Baseline<U> {
        Baseline { config: self.config, params: self.params.cast(), ids: self.ids.clone() }
    }

    /// Logits `(B, M, q)`: the first `q` of the `q_max` decoder outputs.
    pub fn logits(&self, tape: &mut Tape<T>, p: &Bound, batch: &EpisodeBatch) -> Result<Var> {
        let (n, m, _, q) = batch.dims();
        let q_max = self.config.q_max;
        if q > q_max {
            return Err(Error::Capacity(format!(
                "episode has q = {q} classes but the baseline emits q_max = {q_max}; use the ECOC wrapper"
            )));
        }
        if n == 0 {
            return Err(Error::EmptyContext);
        }
        let bsz = batch.len();
        let s = n + m;
        let t = batch_tensors::<T>(batch, self.config.model.p_max)?;
        let mut ypad = vec![T::zero(); bsz * s * q_max];
        for (bi, row) in t.y_train.data().chunks(q).enumerate() {
            let (b, r) = (bi / n, bi % n);
            ypad[(b * s + r) * q_max..][..q].copy_from_slice(row);
        }
        let x = tape.constant(t.x);
        let y = tape.constant(Tensor::new(vec![bsz, s, q_max], ypad)?);
        let ex = tape.matmul(x, p.var(self.ids.u))?;
        let ey = tape.matmul(y, p.var(self.ids.v))?;
        let mut e = tape.add(ex, ey)?;
        for ids in &self.ids.layers {
            e = block(tape, p, ids, e, Keys::Prefix(n), self.config.model.n_heads)?;
        }
        let test = tape.slice(e, 1, n, m)?;
        let h = linear(tape, test, p.var(self.ids.w1), p.var(self.ids.b1))?;
        let h = tape.gelu(h);
        let z = linear(tape, h, p.var(self.ids.w2), p.var(self.ids.b2))?;
        Ok(tape.slice(z, 2, 0, q)?)
    }

    pub fn forward(&self, batch: &EpisodeBatch) -> Result<Vec<Array2<f64>>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let z = self.logits(&mut tape, &p, batch)?;
        let probs = tape.softmax(z)?;
        Ok(probability_rows(tape.value(probs), batch))
    }
}

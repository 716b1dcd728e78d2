//! Target-equivariant in-context classifier.
//!
//! Every sample becomes a row of `q + 1` tokens: one covariate token followed
//! by one token per class slot. Class tokens share a single embedding vector,
//! so no weight is tied to a particular class index, and the decoder reads
//! predictions off the training targets themselves.

use autodiff::{Mask, Scalar, Tape, Tensor, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::EpisodeBatch;
use crate::error::{Error, Result};
use crate::layers::{attention, block, linear, BlockIds, Keys};
use crate::params::{fan_in_uniform, gaussian, Bound, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden: usize,
    pub p_max: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: 64, n_layers: 6, n_heads: 4, hidden: 128, p_max: 16, decoder_hidden: 32 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let ModelConfig { d, n_layers, n_heads, hidden, p_max, decoder_hidden } = *self;
        if d == 0 || n_heads == 0 || hidden == 0 || p_max == 0 || decoder_hidden == 0 {
            return Err(Error::Config(format!("model extents must be positive: {self:?}")));
        }
        if d % n_heads != 0 {
            return Err(Error::Config(format!("d = {d} is not divisible by n_heads = {n_heads}")));
        }
        if n_layers == 0 || n_layers % 2 != 0 {
            return Err(Error::Config(format!("n_layers = {n_layers} must be a positive even number")));
        }
        Ok(())
    }
}

/// Constant inputs derived from a batch.
pub(crate) struct BatchTensors<T> {
    /// `(B, N+M, p_max)`, zero padded and rescaled by `p_max / p`.
    pub x: Tensor<T>,
    /// `(B, N, q)`
    pub y_train: Tensor<T>,
    /// `(B, M, q)`
    pub y_test: Tensor<T>,
}

pub(crate) fn batch_tensors<T: Scalar>(batch: &EpisodeBatch, p_max: usize) -> Result<BatchTensors<T>> {
    let (n, m, p, q) = batch.dims();
    if p > p_max {
        return Err(Error::Capacity(format!("episode has p = {p} features but the model pads to p_max = {p_max}")));
    }
    let b = batch.len();
    let s = n + m;
    let rescale = p_max as f64 / p as f64;
    let mut x = vec![T::zero(); b * s * p_max];
    let mut y_train = Vec::with_capacity(b * n * q);
    let mut y_test = Vec::with_capacity(b * m * q);
    for (bi, e) in batch.episodes().iter().enumerate() {
        for (r, src) in e.x.rows().into_iter().chain(e.x_star.rows()).enumerate() {
            let base = (bi * s + r) * p_max;
            for (j, &v) in src.iter().enumerate() {
                x[base + j] = T::from_f64_lossy(v * rescale);
            }
        }
        y_train.extend(e.y.iter().map(|&v| T::from_f64_lossy(v)));
        y_test.extend(e.y_star.iter().map(|&v| T::from_f64_lossy(v)));
    }
    Ok(BatchTensors {
        x: Tensor::new(vec![b, s, p_max], x)?,
        y_train: Tensor::new(vec![b, n, q], y_train)?,
        y_test: Tensor::new(vec![b, m, q], y_test)?,
    })
}

#[derive(Debug, Clone)]
struct EquiIds {
    u: ParamId,
    v: ParamId,
    w_pred: ParamId,
    layers: Vec<BlockIds>,
    g_w1: ParamId,
    g_b1: ParamId,
    g_w2: ParamId,
    g_b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct EquiTab<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    ids: EquiIds,
}

impl<T: Scalar> EquiTab<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ModelConfig { d, n_layers, hidden, p_max, decoder_hidden: dh, .. } = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::default();
        let u = ps.push("enc.u", fan_in_uniform(&mut rng, p_max, vec![p_max, d]));
        let v = ps.push("enc.v", gaussian(&mut rng, 0.02, vec![1, d]));
        let w_pred = ps.push("enc.w_pred", gaussian(&mut rng, 0.02, vec![1, d]));
        let layers = (0..n_layers)
            .map(|i| {
                let kind = if i % 2 == 0 { "comp" } else { "data" };
                BlockIds::init(&mut ps, &mut rng, &format!("layer{i}.{kind}"), d, hidden)
            })
            .collect();
        let g_w1 = ps.push("dec.g1.w", fan_in_uniform(&mut rng, 1, vec![1, dh]));
        let g_b1 = ps.push("dec.g1.b", Tensor::zeros(vec![dh]));
        let g_w2 = ps.push("dec.g2.w", fan_in_uniform(&mut rng, dh, vec![dh, 1]));
        let g_b2 = ps.push("dec.g2.b", Tensor::zeros(vec![1]));
        let ids = EquiIds { u, v, w_pred, layers, g_w1, g_b1, g_w2, g_b2 };
        Ok(EquiTab { config, params: ps, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> EquiTab<U> {
        EquiTab { config: self.config, params: self.params.cast(), ids: self.ids.clone() }
    }

    /// Zeroes the residual correction so logits equal the attention readout.
    pub fn zero_decoder_correction(&mut self) {
        for id in [self.ids.g_w2, self.ids.g_b2] {
            self.params.get_mut(id).data_mut().fill(T::zero());
        }
    }

    /// Zeroes the shared class-slot embedding and the prediction token.
    pub fn zero_target_encoder(&mut self) {
        for id in [self.ids.v, self.ids.w_pred] {
            self.params.get_mut(id).data_mut().fill(T::zero());
        }
    }

    /// Token grid `(B, N+M, q+1, d)`.
    pub fn encode(&self, tape: &mut Tape<T>, p: &Bound, batch: &EpisodeBatch) -> Result<Var> {
        let (n, m, _, q) = batch.dims();
        let bsz = batch.len();
        let d = self.config.d;
        let t = batch_tensors::<T>(batch, self.config.p_max)?;
        let x = tape.constant(t.x);
        let cov = tape.matmul(x, p.var(self.ids.u))?;
        let cov = tape.reshape(cov, &[bsz, n + m, 1, d])?;
        let y = t.y_train.reshaped(vec![bsz, n, q, 1])?;
        let y = tape.constant(y);
        let train = tape.matmul(y, p.var(self.ids.v))?;
        let ones = tape.constant(Tensor::full(vec![bsz, m, q, 1], T::one()));
        let test = tape.matmul(ones, p.var(self.ids.w_pred))?;
        let targets = tape.concat(&[train, test], 1)?;
        Ok(tape.concat(&[cov, targets], 2)?)
    }

    fn grid_dims(tape: &Tape<T>, e: Var) -> Result<[usize; 4]> {
        let s = tape.shape(e);
        match *s {
            [b, rows, slots, d] => Ok([b, rows, slots, d]),
            _ => Err(autodiff::TensorError::Rank { op: "token grid", expected: "rank 4", shape: s.to_vec() }.into()),
        }
    }

    fn component_mask(slots: usize) -> Mask {
        Mask::from_fn(slots, slots, |r, c| r == 0 || c == 0)
    }

    fn layer(&self, layer: usize) -> Result<&BlockIds> {
        self.ids
            .layers
            .get(layer)
            .ok_or_else(|| Error::Config(format!("layer {layer} out of range for {} layers", self.ids.layers.len())))
    }

    /// Attention output of a component layer before the residual, in grid shape.
    pub fn component_attention(&self, tape: &mut Tape<T>, p: &Bound, layer: usize, e: Var) -> Result<Var> {
        let [b, rows, slots, d] = Self::grid_dims(tape, e)?;
        let mask = Self::component_mask(slots);
        let x = tape.reshape(e, &[b * rows, slots, d])?;
        let a = attention(tape, p, self.layer(layer)?, x, Keys::Masked(&mask), self.config.n_heads)?;
        Ok(tape.reshape(a, &[b, rows, slots, d])?)
    }

    /// Attention among the `q + 1` tokens of each sample: the covariate token
    /// sees every slot, class tokens see only the covariate token.
    pub fn attend_components(&self, tape: &mut Tape<T>, p: &Bound, layer: usize, e: Var) -> Result<Var> {
        let [b, rows, slots, d] = Self::grid_dims(tape, e)?;
        let mask = Self::component_mask(slots);
        let x = tape.reshape(e, &[b * rows, slots, d])?;
        let y = block(tape, p, self.layer(layer)?, x, Keys::Masked(&mask), self.config.n_heads)?;
        Ok(tape.reshape(y, &[b, rows, slots, d])?)
    }

    /// Attention across samples within each token slot; only the first
    /// `n_train` rows serve as keys.
    pub fn attend_datapoints(&self, tape: &mut Tape<T>, p: &Bound, layer: usize, e: Var, n_train: usize) -> Result<Var> {
        let [b, rows, slots, d] = Self::grid_dims(tape, e)?;
        if n_train == 0 {
            return Err(Error::EmptyContext);
        }
        let x = tape.permute(e, &[0, 2, 1, 3])?;
        let x = tape.reshape(x, &[b * slots, rows, d])?;
        let y = block(tape, p, self.layer(layer)?, x, Keys::Prefix(n_train.min(rows)), self.config.n_heads)?;
        let y = tape.reshape(y, &[b, slots, rows, d])?;
        Ok(tape.permute(y, &[0, 2, 1, 3])?)
    }

    /// Component layers on even indices, datapoint layers on odd ones.
    pub fn backbone(&self, tape: &mut Tape<T>, p: &Bound, mut e: Var, n_train: usize) -> Result<Var> {
        for layer in 0..self.ids.layers.len() {
            e = if layer % 2 == 0 {
                self.attend_components(tape, p, layer, e)?
            } else {
                self.attend_datapoints(tape, p, layer, e, n_train)?
            };
        }
        Ok(e)
    }

    /// Attention readout whose values are the training targets, plus a shared
    /// scalar correction per class slot. `y_train: (B, N, q)`; returns
    /// logits `(B, M, q)`.
    pub fn decode(&self, tape: &mut Tape<T>, p: &Bound, e: Var, y_train: Var) -> Result<Var> {
        let [b, rows, slots, d] = Self::grid_dims(tape, e)?;
        let n = tape.shape(y_train)[1];
        if n == 0 {
            return Err(Error::EmptyContext);
        }
        let q = slots - 1;
        let m = rows - n;
        let flat = tape.reshape(e, &[b, rows, slots * d])?;
        let keys = tape.slice(flat, 1, 0, n)?;
        let queries = tape.slice(flat, 1, n, m)?;
        let scores = tape.matmul_nt(queries, keys)?;
        let scores = tape.scale(scores, 1.0 / ((slots * d) as f64).sqrt());
        let w = tape.softmax(scores)?;
        let y_tilde = tape.matmul(w, y_train)?;
        let col = tape.reshape(y_tilde, &[b, m, q, 1])?;
        let h = linear(tape, col, p.var(self.ids.g_w1), p.var(self.ids.g_b1))?;
        let h = tape.gelu(h);
        let g = linear(tape, h, p.var(self.ids.g_w2), p.var(self.ids.g_b2))?;
        let g = tape.reshape(g, &[b, m, q])?;
        Ok(tape.add(y_tilde, g)?)
    }

    /// Logits `(B, M, q)` for a batch.
    pub fn logits(&self, tape: &mut Tape<T>, p: &Bound, batch: &EpisodeBatch) -> Result<Var> {
        let (n, ..) = batch.dims();
        if n == 0 {
            return Err(Error::EmptyContext);
        }
        let e = self.encode(tape, p, batch)?;
        let e = self.backbone(tape, p, e, n)?;
        let y = batch_tensors::<T>(batch, self.config.p_max)?.y_train;
        let y = tape.constant(y);
        self.decode(tape, p, e, y)
    }

    /// Class probability rows, one `(M, q)` matrix per episode.
    pub fn forward(&self, batch: &EpisodeBatch) -> Result<Vec<Array2<f64>>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let z = self.logits(&mut tape, &p, batch)?;
        let probs = tape.softmax(z)?;
        Ok(probability_rows(tape.value(probs), batch))
    }
}

pub(crate) fn probability_rows<T: Scalar>(probs: &Tensor<T>, batch: &EpisodeBatch) -> Vec<Array2<f64>> {
    let (_, m, _, q) = batch.dims();
    probs
        .to_f64_vec()
        .chunks(m * q)
        .map(|c| Array2::from_shape_vec((m, q), c.to_vec()).expect("sized"))
        .collect()
}

//! Pre-training on prior batches with Adam and a warmup-cosine schedule.

use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use autodiff::Tensor;

use crate::checkpoint::{model_from_checkpoint, model_meta, Checkpoint};
use crate::episode::EpisodeBatch;
use crate::equitab::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::predictor::{argmax_rows, Predictor};
use crate::prior::{sample_batch, sample_episode, PriorConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_batches: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub warmup_batches: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
    pub prior: PriorConfig,
    pub model: ModelKind,
    pub model_config: ModelConfig,
    pub q_max: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_batches: 20_000,
            batch_size: 16,
            lr_max: 1e-4,
            warmup_batches: 1_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 500,
            eval_episodes: 64,
            grad_clip: None,
            prior: PriorConfig::blobs(3.0),
            model: ModelKind::EquiTab,
            model_config: ModelConfig::default(),
            q_max: crate::baseline::DEFAULT_Q_MAX,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_batches > self.total_batches {
            return Err(Error::Config(format!(
                "warmup_batches = {} exceeds total_batches = {}",
                self.warmup_batches, self.total_batches
            )));
        }
        if !(self.lr_max > 0.0) {
            return Err(Error::Config(format!("lr_max must be positive, got {}", self.lr_max)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and eps > 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.model_config.validate()?;
        self.prior.validate()
    }

    /// Learning rate at `step` in `[0, total_batches]`: linear from 0 to
    /// `lr_max` over the warmup, then cosine down to 0.
    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.warmup_batches, self.total_batches, self.lr_max)
    }

    /// First seed of the batch consumed at `step`; its episodes use
    /// consecutive seeds from there.
    pub fn batch_seed(&self, step: u64) -> u64 {
        mix(self.seed, step)
    }

    /// Seeds of the held-out evaluation episodes.
    pub fn eval_seed(&self, i: usize) -> u64 {
        mix(self.seed ^ 0x5EED_E7A1, u64::MAX - i as u64)
    }
}

pub fn lr_at(step: u64, warmup: u64, total: u64, lr_max: f64) -> f64 {
    let step = step.min(total);
    if step < warmup {
        return lr_max * step as f64 / warmup as f64;
    }
    let span = total - warmup;
    if span == 0 {
        return lr_max;
    }
    let frac = (step - warmup) as f64 / span as f64;
    (lr_max * 0.5 * (1.0 + (PI * frac).cos())).max(0.0)
}

fn mix(seed: u64, step: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adam first and second moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Any non-finite gradient aborts before
/// touching the parameters.
pub fn adam_step(
    params: &mut [Tensor<f32>],
    grads: &[Vec<f32>],
    state: &mut AdamState,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) -> Result<()> {
    if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence { step: state.t + 1, detail: format!("non-finite gradient in tensor {i}") });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (beta1 as f32, beta2 as f32);
    let c1 = (1.0 - beta1.powi(t)) as f32;
    let c2 = (1.0 - beta2.powi(t)) as f32;
    let (lr, eps) = (lr as f32, eps as f32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_acc: f64,
    pub seconds: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "step\tlr\ttrain_loss\teval_loss\teval_acc\tseconds";
}

impl fmt::Display for LogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.4}\t{:.1}",
            self.step, self.lr, self.train_loss, self.eval_loss, self.eval_acc, self.seconds
        )
    }
}

pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    adam: AdamState,
    step: u64,
    window: (f64, u64),
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model, config.model_config, config.q_max, config.seed)?;
        let adam = AdamState::new(model.params().tensors());
        Ok(Trainer { config, model, adam, step: 0, window: (0.0, 0), started: Instant::now() })
    }

    /// Restores parameters, optimizer moments and progress.
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut trainer = Trainer::new(config)?;
        let loaded = model_from_checkpoint(ckpt)?;
        if loaded.kind() != trainer.model.kind() || loaded.config() != trainer.model.config() {
            return Err(Error::Config("checkpoint architecture differs from the training config".into()));
        }
        trainer.model = loaded;
        let names = trainer.model.params().names().to_vec();
        for (i, name) in names.iter().enumerate() {
            for (prefix, buf) in [("adam.m.", &mut trainer.adam.m[i]), ("adam.v.", &mut trainer.adam.v[i])] {
                let key = format!("{prefix}{name}");
                let t = ckpt.tensor(&key).ok_or(crate::checkpoint::CheckpointError::MissingTensor(key))?;
                buf.copy_from_slice(t.data());
            }
        }
        trainer.adam.t = ckpt.require("adam_t")?;
        trainer.step = ckpt.require("step")?;
        let seed: u64 = ckpt.require("seed")?;
        if seed != trainer.config.seed {
            return Err(Error::Config(format!("checkpoint seed {seed} differs from config seed {}", trainer.config.seed)));
        }
        let bits: u64 = ckpt.require("window_sum_bits")?;
        trainer.window = (f64::from_bits(bits), ckpt.require("window_count")?);
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    /// Batches consumed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_batches
    }

    pub fn batch_at(&self, step: u64) -> Result<EpisodeBatch> {
        sample_batch(&self.config.prior, self.config.batch_size, self.config.batch_seed(step))
    }

    /// Consumes one batch; returns its mean loss before the update.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.batch_at(self.step)?;
        let b = batch.len() as f32;
        let mut total = 0.0;
        let mut acc: Option<Vec<Vec<f32>>> = None;
        for ep in batch.chunks(1) {
            let (loss, grads) = self.model.loss_and_grads(&ep)?;
            total += loss;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => {
                    for (dst, src) in a.iter_mut().zip(&grads) {
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        let mut grads = acc.expect("batch is non-empty");
        grads.iter_mut().flatten().for_each(|g| *g /= b);
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.step + 1, detail: format!("loss is {loss}") });
        }
        if let Some(clip) = self.config.grad_clip {
            let norm = grads.iter().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if norm > clip {
                let s = (clip / norm) as f32;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        let lr = self.config.lr_at(self.step + 1);
        let c = &self.config;
        adam_step(self.model.params_mut().tensors_mut(), &grads, &mut self.adam, lr, (c.beta1, c.beta2, c.eps))
            .map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step: self.step + 1, detail },
                other => other,
            })?;
        self.step += 1;
        self.window.0 += loss;
        self.window.1 += 1;
        Ok(loss)
    }

    /// Mean loss and accuracy over the held-out episodes.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        evaluate(&self.model, &self.config)
    }

    /// Trains until `until` batches (capped at the total), calling `on_eval`
    /// at every evaluation point.
    pub fn run_until(&mut self, until: u64, mut on_eval: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        let until = until.min(self.config.total_batches);
        let mut rows = Vec::new();
        while self.step < until {
            self.train_step()?;
            if self.step.is_multiple_of(self.config.eval_every) || self.step == self.config.total_batches {
                let (eval_loss, eval_acc) = self.evaluate()?;
                let row = LogRow {
                    step: self.step,
                    lr: self.config.lr_at(self.step),
                    train_loss: self.window.0 / self.window.1.max(1) as f64,
                    eval_loss,
                    eval_acc,
                    seconds: self.seconds(),
                };
                self.window = (0.0, 0);
                on_eval(&row);
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// Wall-clock seconds since this trainer was created or resumed.
    pub fn seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Parameters, Adam moments and progress.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = model_meta(&self.model);
        let c = &self.config;
        let mut put = |k: &str, v: String| meta.push((k.to_string(), v));
        put("step", self.step.to_string());
        put("seed", c.seed.to_string());
        put("adam_t", self.adam.t.to_string());
        put("total_batches", c.total_batches.to_string());
        put("batch_size", c.batch_size.to_string());
        put("lr_max", c.lr_max.to_string());
        put("warmup_batches", c.warmup_batches.to_string());
        put("window_sum_bits", self.window.0.to_bits().to_string());
        put("window_count", self.window.1.to_string());
        let params = self.model.params();
        let mut tensors: Vec<(String, Tensor<f32>)> =
            params.names().iter().cloned().zip(params.tensors().iter().cloned()).collect();
        for (prefix, bufs) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for ((name, t), buf) in params.names().iter().zip(params.tensors()).zip(bufs) {
                let moment = Tensor::new(t.shape().to_vec(), buf.clone()).expect("moment matches parameter");
                tensors.push((format!("{prefix}{name}"), moment));
            }
        }
        Checkpoint { meta, tensors }
    }
}

/// Mean cross-entropy and accuracy of `model` on the held-out episodes of `config`.
pub fn evaluate(model: &Model<f32>, config: &TrainConfig) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    for i in 0..config.eval_episodes {
        let e = sample_episode(&config.prior, config.eval_seed(i))?;
        loss += model.loss_on_batch(&EpisodeBatch::single(e.clone()))?;
        acc += accuracy(&model.predict(&e)?, &e.test_labels());
    }
    let n = config.eval_episodes.max(1) as f64;
    Ok((loss / n, acc / n))
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &ndarray::Array2<f64>, labels: &[usize]) -> f64 {
    let hits = argmax_rows(probs).iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

//! Either architecture behind one type, plus loss evaluation.

use autodiff::{Scalar, Tape, Tensor};
use ndarray::Array2;

use crate::baseline::{Baseline, BaselineConfig};
use crate::episode::{Episode, EpisodeBatch};
use crate::equitab::{batch_tensors, EquiTab, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::predictor::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    EquiTab,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::EquiTab => "equitab",
            ModelKind::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "equitab" => Ok(ModelKind::EquiTab),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::Config(format!("unknown model {other:?}; expected equitab or baseline"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model<T> {
    EquiTab(EquiTab<T>),
    Baseline(Baseline<T>),
}

impl<T: Scalar> Model<T> {
    /// `q_max` is only used by the baseline.
    pub fn new(kind: ModelKind, config: ModelConfig, q_max: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::EquiTab => Model::EquiTab(EquiTab::new(config, seed)?),
            ModelKind::Baseline => Model::Baseline(Baseline::new(BaselineConfig { model: config, q_max }, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::EquiTab(_) => ModelKind::EquiTab,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::EquiTab(m) => m.config(),
            Model::Baseline(m) => &m.config().model,
        }
    }

    /// Largest class count handled natively, if bounded.
    pub fn q_max(&self) -> Option<usize> {
        match self {
            Model::EquiTab(_) => None,
            Model::Baseline(m) => Some(m.q_max()),
        }
    }

    pub fn params(&self) -> &ParamSet<T> {
        match self {
            Model::EquiTab(m) => m.params(),
            Model::Baseline(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        match self {
            Model::EquiTab(m) => m.params_mut(),
            Model::Baseline(m) => m.params_mut(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        match self {
            Model::EquiTab(m) => Model::EquiTab(m.cast()),
            Model::Baseline(m) => Model::Baseline(m.cast()),
        }
    }

    pub fn forward(&self, batch: &EpisodeBatch) -> Result<Vec<Array2<f64>>> {
        match self {
            Model::EquiTab(m) => m.forward(batch),
            Model::Baseline(m) => m.forward(batch),
        }
    }

    fn record(&self, tape: &mut Tape<T>, batch: &EpisodeBatch, requires_grad: bool) -> Result<(crate::params::Bound, autodiff::Var)> {
        let p = self.params().bind(tape, requires_grad);
        let z = match self {
            Model::EquiTab(m) => m.logits(tape, &p, batch)?,
            Model::Baseline(m) => m.logits(tape, &p, batch)?,
        };
        let targets: Tensor<T> = batch_tensors(batch, self.config().p_max)?.y_test;
        let loss = tape.cross_entropy_from_logits(z, &targets)?;
        Ok((p, loss))
    }

    /// Mean cross-entropy over every test point of every episode.
    pub fn loss_on_batch(&self, batch: &EpisodeBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let (_, loss) = self.record(&mut tape, batch, false)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }

    /// Loss and its gradient with respect to every parameter tensor, in storage order.
    pub fn loss_and_grads(&self, batch: &EpisodeBatch) -> Result<(f64, Vec<Vec<T>>)> {
        let mut tape = Tape::new();
        let (p, loss) = self.record(&mut tape, batch, true)?;
        let mut grads = tape.backward(loss)?;
        let g = p
            .0
            .iter()
            .zip(self.params().tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![T::zero(); t.numel()]))
            .collect();
        Ok((tape.value(loss).data()[0].as_f64(), g))
    }
}

impl<T: Scalar> Predictor for Model<T> {
    fn predict(&self, episode: &Episode) -> Result<Array2<f64>> {
        let mut rows = self.forward(&EpisodeBatch::single(episode.clone()))?;
        Ok(rows.pop().expect("one episode"))
    }
}

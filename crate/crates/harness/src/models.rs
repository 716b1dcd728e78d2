//! Model references on the command line: `init:equitab`, `init:baseline`
//! (fresh initialisation from the run's `model.*` keys and seed) or a
//! checkpoint path.

use std::path::Path;

use equitab::checkpoint::{load_checkpoint, model_from_checkpoint};
use equitab::ecoc::Ecoc;
use equitab::{Episode, Model, ModelKind, Predictor};
use ndarray::Array2;

use crate::config::RunConfig;
use crate::error::Result;

pub struct NamedModel {
    pub label: String,
    pub model: Model<f32>,
}

pub fn load_model(spec: &str, run: &RunConfig) -> Result<NamedModel> {
    if let Some(kind) = spec.strip_prefix("init:") {
        let kind = ModelKind::parse(kind)?;
        let model = Model::new(kind, run.model_config()?, run.get("model.q_max")?, run.seed)?;
        return Ok(NamedModel { label: format!("{}-init", kind.name()), model });
    }
    let model = model_from_checkpoint(&load_checkpoint(Path::new(spec))?)?;
    Ok(NamedModel { label: model.kind().name().to_string(), model })
}

/// Loads every spec; repeated labels get a numeric suffix.
pub fn load_models(specs: &[String], run: &RunConfig) -> Result<Vec<NamedModel>> {
    let mut out: Vec<NamedModel> = Vec::new();
    for spec in specs {
        let mut m = load_model(spec, run)?;
        let base = m.label.clone();
        let mut i = 2;
        while out.iter().any(|o| o.label == m.label) {
            m.label = format!("{base}-{i}");
            i += 1;
        }
        out.push(m);
    }
    Ok(out)
}

/// The baseline goes through a codebook when the episode has more classes
/// than its output width; the equivariant model runs natively.
pub struct Routed<'a, T> {
    pub model: &'a Model<T>,
    pub ecoc_seed: u64,
}

impl<T: autodiff::Scalar> Predictor for Routed<'_, T> {
    fn predict(&self, episode: &Episode) -> equitab::Result<Array2<f64>> {
        match self.model.q_max() {
            Some(q_max) if episode.n_classes() > q_max => {
                Ecoc { inner: self.model, q_max, seed: self.ecoc_seed }.predict(episode)
            }
            _ => self.model.predict(episode),
        }
    }
}

//! Target-equivariant in-context classification for tabular episodes.
//!
//! Episodes come from synthetic priors ([`prior`]) or CSV files
//! ([`csv_load`]). Two architectures read them: [`equitab::EquiTab`], whose
//! predictions permute exactly with the class labels, and
//! [`baseline::Baseline`], a fixed-width model that does not. [`trainer`]
//! pre-trains either one and [`lab`] measures how far a predictor is from
//! equivariance.

pub mod baseline;
pub mod checkpoint;
pub mod csv_load;
pub mod ecoc;
pub mod episode;
pub mod equitab;
mod error;
pub mod lab;
pub mod layers;
pub mod model;
pub mod params;
pub mod predictor;
pub mod prior;
pub mod trainer;

pub use error::{Error, Result};
pub use episode::{permute_targets, Episode, EpisodeBatch, PermutationSpec};
pub use model::{Model, ModelKind};
pub use predictor::Predictor;

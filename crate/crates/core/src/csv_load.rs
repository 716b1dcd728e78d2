//! CSV ingestion into an [`Episode`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::episode::{one_hot, standardize, Episode};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: PathBuf, source: csv::Error },
    #[error("label column {0:?} not found in the header")]
    MissingLabelColumn(String),
    #[error("line {line}, column {column:?}: cannot parse {value:?} as a number")]
    Parse { line: u64, column: String, value: String },
    #[error("need at least 2 rows and 1 feature column, got {rows} rows and {features} features")]
    TooSmall { rows: usize, features: usize },
    #[error("the training split holds {0} class(es); at least 2 are required")]
    TooFewClasses(usize),
    #[error("class {0:?} appears only in the test split")]
    UnseenClass(String),
    #[error("split fraction must lie in (0, 1), got {0}")]
    SplitFraction(f64),
}

/// Loads a headed CSV file. Labels are one-hot encoded in order of first
/// appearance in the file; empty numeric cells are imputed with the training
/// split's column mean before z-scoring on the training split.
pub fn load_csv(path: &Path, label_column: &str, split_fraction: f64, seed: u64) -> Result<Episode, crate::Error> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(IngestError::SplitFraction(split_fraction).into());
    }
    let unreadable = |source| IngestError::Unreadable { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(unreadable)?;
    let headers = reader.headers().map_err(unreadable)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| IngestError::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|(i, _)| *i != label_idx).map(|(_, h)| h.trim().to_string()).collect();

    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(unreadable)?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let field = field.trim();
            row.push(if field.is_empty() {
                None
            } else {
                Some(field.parse::<f64>().map_err(|_| IngestError::Parse {
                    line,
                    column: headers.get(i).unwrap_or("").to_string(),
                    value: field.to_string(),
                })?)
            });
        }
        let label = record.get(label_idx).unwrap_or("").trim().to_string();
        let next = class_names.len();
        let id = *class_ids.entry(label.clone()).or_insert(next);
        if id == next {
            class_names.push(label);
        }
        labels.push(id);
        cells.push(row);
    }
    let rows = cells.len();
    if rows < 2 || feature_names.is_empty() {
        return Err(IngestError::TooSmall { rows, features: feature_names.len() }.into());
    }

    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ((split_fraction * rows as f64).round() as usize).clamp(1, rows - 1);
    let (train, test) = order.split_at(n);

    let q = class_names.len();
    let mut in_train = vec![false; q];
    train.iter().for_each(|&r| in_train[labels[r]] = true);
    if let Some(k) = test.iter().map(|&r| labels[r]).find(|&k| !in_train[k]) {
        return Err(IngestError::UnseenClass(class_names[k].clone()).into());
    }
    let present = in_train.iter().filter(|&&b| b).count();
    if present < 2 {
        return Err(IngestError::TooFewClasses(present).into());
    }

    let p = feature_names.len();
    let means: Vec<f64> = (0..p)
        .map(|j| {
            let vals: Vec<f64> = train.iter().filter_map(|&r| cells[r][j]).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    let matrix = |rows: &[usize]| Array2::from_shape_fn((rows.len(), p), |(i, j)| cells[rows[i]][j].unwrap_or(means[j]));
    let (x, x_star) = standardize(&matrix(train), &matrix(test));
    let pick = |rows: &[usize]| rows.iter().map(|&r| labels[r]).collect::<Vec<_>>();
    Episode::new(x, one_hot(&pick(train), q)?, x_star, one_hot(&pick(test), q)?)
}

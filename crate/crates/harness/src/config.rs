//! Flat `key = value` run configuration with per-command defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use equitab::equitab::ModelConfig;
use equitab::prior::{Family, IntRange, PriorConfig, TestRows};
use equitab::ModelKind;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Grid,
    Bench,
    Equigap,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Grid => "grid",
            Command::Bench => "bench",
            Command::Equigap => "equigap",
            Command::Gradcheck => "gradcheck",
        }
    }
}

const PRIOR_KEYS: &[(&str, &str)] = &[
    ("prior.family", "blobs"),
    ("prior.separation", "3"),
    ("prior.mlp_hidden", "16"),
    ("prior.temperature", "0.5"),
    ("prior.n_train_min", "32"),
    ("prior.n_train_max", "224"),
    ("prior.n_rows", "256"),
    ("prior.n_features_min", "2"),
    ("prior.n_features_max", "8"),
    ("prior.n_classes_min", "2"),
    ("prior.n_classes_max", "5"),
];

const MODEL_KEYS: &[(&str, &str)] = &[
    ("model.d", "64"),
    ("model.n_layers", "6"),
    ("model.n_heads", "4"),
    ("model.hidden", "128"),
    ("model.p_max", "16"),
    ("model.decoder_hidden", "32"),
    ("model.q_max", "5"),
];

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("model", "equitab"),
    ("total_batches", "20000"),
    ("batch_size", "16"),
    ("lr_max", "0.0001"),
    ("warmup_batches", "1000"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("adam_eps", "1e-8"),
    ("eval_every", "500"),
    ("eval_episodes", "64"),
    ("grad_clip", "none"),
    ("stop_at", "none"),
    ("resume", "none"),
];

const GRID_KEYS: &[(&str, &str)] = &[
    ("models", "init:equitab,init:baseline"),
    ("orderings", "3"),
    ("resolution", "40"),
    ("extent", "1"),
    ("ecoc_seed", "0"),
];

const BENCH_KEYS: &[(&str, &str)] = &[
    ("models", "none"),
    ("knn_k", "5"),
    ("episodes", "16"),
    ("tasks", "seen-q,unseen-q,separable"),
    ("unseen_q", "8"),
    ("separable_separation", "100"),
    ("csv", "none"),
    ("csv_label", "label"),
    ("csv_split", "0.7"),
    ("ecoc_seed", "0"),
];

const EQUIGAP_KEYS: &[(&str, &str)] = &[
    ("model", "init:baseline"),
    ("episodes", "64"),
    ("n_classes", "3"),
    ("loss", "ce"),
    ("perms", "exhaustive"),
    ("n_perms", "8"),
    ("force_exhaustive", "false"),
    ("violation_perms", "8"),
    ("sweep", "1,2,4,8"),
    ("precision", "f64"),
];

const GRADCHECK_KEYS: &[(&str, &str)] = &[("step", "1e-4"), ("tolerance", "1e-5")];

/// Every key `command` accepts, with its default value.
pub fn defaults(command: Command) -> BTreeMap<String, String> {
    let groups: &[&[(&str, &str)]] = match command {
        Command::Train => &[TRAIN_KEYS, MODEL_KEYS, PRIOR_KEYS],
        Command::Grid => &[GRID_KEYS, MODEL_KEYS],
        Command::Bench => &[BENCH_KEYS, MODEL_KEYS, PRIOR_KEYS],
        Command::Equigap => &[EQUIGAP_KEYS, MODEL_KEYS, PRIOR_KEYS],
        Command::Gradcheck => &[GRADCHECK_KEYS],
    };
    let mut map: BTreeMap<String, String> =
        groups.iter().flat_map(|g| g.iter()).map(|(k, v)| (k.to_string(), v.to_string())).collect();
    map.insert("seed".into(), "0".into());
    map
}

/// Parses config text into ordered `(line, key, value)` entries.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |detail: String| HarnessError::Parse { path: origin.to_string(), line, detail };
        let (key, value) = body.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(err(format!("invalid key `{key}`")));
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(err(format!("`{key}` already set on line {first}")));
        }
        out.push((line, key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// A fully resolved invocation: defaults, then the config file, then
/// `--set` overrides, then `--seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(
        command: Command,
        config_path: Option<&Path>,
        seed: Option<u64>,
        out: &Path,
        overrides: &[String],
    ) -> Result<Self> {
        let mut values = defaults(command);
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
            let origin = path.display().to_string();
            for (line, key, value) in parse_config(&text, &origin)? {
                if !values.contains_key(&key) {
                    return Err(HarnessError::Parse {
                        path: origin,
                        line,
                        detail: format!("unknown key `{key}` for `{}`", command.name()),
                    });
                }
                values.insert(key, value);
            }
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| HarnessError::Value {
                key: o.clone(),
                value: String::new(),
                detail: "--set expects key=value".into(),
            })?;
            let key = key.trim();
            if !values.contains_key(key) {
                return Err(HarnessError::UnknownKey { key: key.to_string(), origin: "--set".into() });
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        if let Some(s) = seed {
            values.insert("seed".into(), s.to_string());
        }
        let mut run = RunConfig {
            command,
            config_path: config_path.map(Path::to_path_buf),
            seed: 0,
            out: out.to_path_buf(),
            values,
        };
        run.seed = run.get("seed")?;
        Ok(run)
    }

    /// Resolution with defaults only.
    pub fn defaults(command: Command, out: &Path) -> Self {
        RunConfig::resolve(command, None, None, out, &[]).expect("defaults resolve")
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        assert!(self.values.contains_key(key), "unknown key {key}");
        self.values.insert(key.to_string(), value.to_string());
        if key == "seed" {
            self.seed = self.values["seed"].parse().expect("numeric seed");
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} has no default"))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: Display,
    {
        let value = self.raw(key);
        value.parse().map_err(|e: V::Err| self.bad(key, e.to_string()))
    }

    /// `none` maps to `None`.
    pub fn get_opt<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        if self.raw(key) == "none" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list; `none` is empty.
    pub fn get_list(&self, key: &str) -> Vec<String> {
        let value = self.raw(key);
        if value == "none" {
            return Vec::new();
        }
        value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    }

    pub fn bad(&self, key: &str, detail: impl Into<String>) -> HarnessError {
        HarnessError::Value { key: key.to_string(), value: self.raw(key).to_string(), detail: detail.into() }
    }

    pub fn prior(&self) -> Result<PriorConfig> {
        let range = |lo: &str, hi: &str| -> Result<IntRange> { Ok(IntRange::new(self.get(lo)?, self.get(hi)?)) };
        let family = match self.raw("prior.family") {
            "blobs" => Family::Blobs { separation: self.get("prior.separation")? },
            "random-mlp" => Family::RandomMlp { hidden: self.get("prior.mlp_hidden")?, temperature: self.get("prior.temperature")? },
            _ => return Err(self.bad("prior.family", "expected blobs or random-mlp")),
        };
        let config = PriorConfig {
            n_train: range("prior.n_train_min", "prior.n_train_max")?,
            n_test: TestRows::Total(self.get("prior.n_rows")?),
            n_features: range("prior.n_features_min", "prior.n_features_max")?,
            n_classes: range("prior.n_classes_min", "prior.n_classes_max")?,
            family,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let config = ModelConfig {
            d: self.get("model.d")?,
            n_layers: self.get("model.n_layers")?,
            n_heads: self.get("model.n_heads")?,
            hidden: self.get("model.hidden")?,
            p_max: self.get("model.p_max")?,
            decoder_hidden: self.get("model.decoder_hidden")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn model_kind(&self, key: &str) -> Result<ModelKind> {
        ModelKind::parse(self.raw(key)).map_err(|e| self.bad(key, e.to_string()))
    }
}

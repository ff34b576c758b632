//! Flat key=value run configuration.
//!
//! Precedence: built-in defaults, then a config file, then command-line
//! flags. Files hold one `key=value` pair per line; `#` starts a comment.
//! Unknown keys are rejected. Relative paths in a file resolve against the
//! file's directory.
//!
//! The built-in defaults are the full-scale profile (2-layer 512-unit
//! question LSTM, 1024-d common space, 200-d embeddings, learning rate 3e-4,
//! batch 500, evaluation every 1000 iterations with patience 5000).
//! `gen-toy` writes a desk-scale config next to its data.

use std::path::{Path, PathBuf};

use salatt_core::error::{Error, Result};
use salatt_core::model::{ModelConfig, Variant};
use salatt_core::params::RmspropConfig;
use salatt_core::region::RegionGrid;
use salatt_core::train::TrainProfile;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub question_layers: usize,
    pub question_hidden: usize,
    pub common_dim: usize,
    pub vocab_size: usize,
    pub answer_count: usize,
    pub dropout_rate: f64,
    pub grid_g: usize,
    pub grid_m: usize,
    pub grid_s: usize,
    pub normalize_features: bool,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub max_iterations: usize,
    pub features: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::SalAtt,
            seed: 42,
            feature_dim: 2048,
            embed_dim: 200,
            question_layers: 2,
            question_hidden: 512,
            common_dim: 1024,
            vocab_size: 10_000,
            answer_count: 1000,
            dropout_rate: 0.5,
            grid_g: 4,
            grid_m: 2,
            grid_s: 1,
            normalize_features: false,
            learning_rate: 3e-4,
            rms_decay: 0.95,
            rms_epsilon: 1e-8,
            batch_size: 500,
            eval_every: 1000,
            patience: 5000,
            max_iterations: 100_000,
            features: None,
            train_data: None,
            val_data: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!(
            "bad value `{value}` for key `{key}` (expected true/false)"
        ))),
    }
}

impl RunConfig {
    /// Apply one key=value pair. `base` resolves relative paths (the config
    /// file's directory, or none for command-line pairs).
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match (p.is_relative(), base) {
                (true, Some(dir)) => dir.join(p),
                _ => p,
            }
        };
        match key {
            "variant" => self.variant = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "question_layers" => self.question_layers = parse(key, value)?,
            "question_hidden" => self.question_hidden = parse(key, value)?,
            "common_dim" => self.common_dim = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "answer_count" => self.answer_count = parse(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "grid_g" => self.grid_g = parse(key, value)?,
            "grid_m" => self.grid_m = parse(key, value)?,
            "grid_s" => self.grid_s = parse(key, value)?,
            "normalize_features" => self.normalize_features = parse_bool(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "rms_decay" => self.rms_decay = parse(key, value)?,
            "rms_epsilon" => self.rms_epsilon = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_iterations" => self.max_iterations = parse(key, value)?,
            "features" => self.features = Some(resolve(value)),
            "train_data" => self.train_data = Some(resolve(value)),
            "val_data" => self.val_data = Some(resolve(value)),
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base = path.parent().map(Path::to_path_buf);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim(), base.as_deref())?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RegionGrid> {
        RegionGrid::new(self.grid_g, self.grid_m, self.grid_s)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            variant: self.variant,
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            question_layers: self.question_layers,
            question_hidden: self.question_hidden,
            common_dim: self.common_dim,
            vocab_size: self.vocab_size,
            answer_count: self.answer_count,
            dropout_rate: self.dropout_rate,
            grid: self.grid()?,
            normalize_features: self.normalize_features,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_profile(&self) -> TrainProfile {
        TrainProfile {
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            patience: self.patience,
            max_iterations: self.max_iterations,
            optimizer: RmspropConfig {
                learning_rate: self.learning_rate,
                decay: self.rms_decay,
                epsilon: self.rms_epsilon,
            },
        }
    }

    fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::config(format!("config key `{key}` is required")))?;
        if !p.exists() {
            return Err(Error::config(format!(
                "{key} path {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn features_path(&self) -> Result<PathBuf> {
        Self::require(&self.features, "features")
    }

    pub fn train_data_path(&self) -> Result<PathBuf> {
        Self::require(&self.train_data, "train_data")
    }

    pub fn val_data_path(&self) -> Result<PathBuf> {
        Self::require(&self.val_data, "val_data")
    }

    /// Serialize as a key=value file (paths written as given).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("variant", self.variant.to_string());
        push("seed", self.seed.to_string());
        push("feature_dim", self.feature_dim.to_string());
        push("embed_dim", self.embed_dim.to_string());
        push("question_layers", self.question_layers.to_string());
        push("question_hidden", self.question_hidden.to_string());
        push("common_dim", self.common_dim.to_string());
        push("vocab_size", self.vocab_size.to_string());
        push("answer_count", self.answer_count.to_string());
        push("dropout_rate", self.dropout_rate.to_string());
        push("grid_g", self.grid_g.to_string());
        push("grid_m", self.grid_m.to_string());
        push("grid_s", self.grid_s.to_string());
        push("normalize_features", self.normalize_features.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("rms_decay", self.rms_decay.to_string());
        push("rms_epsilon", self.rms_epsilon.to_string());
        push("batch_size", self.batch_size.to_string());
        push("eval_every", self.eval_every.to_string());
        push("patience", self.patience.to_string());
        push("max_iterations", self.max_iterations.to_string());
        if let Some(p) = &self.features {
            push("features", p.display().to_string());
        }
        if let Some(p) = &self.train_data {
            push("train_data", p.display().to_string());
        }
        if let Some(p) = &self.val_data {
            push("val_data", p.display().to_string());
        }
        out
    }
}

//! Plain-text `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use evire::evidence::{ErSupervision, Precision};
use evire::pipeline::{ModelSpec, TrainConfig};
use evire::rexmodel::ReLossKind;

use super::CliError;

/// Every accepted key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "random seed for data, initialization and shuffling"),
    ("out_dir", "directory receiving artifacts"),
    ("data_dir", "directory holding corpora (defaults to out_dir)"),
    ("train_file", "human-annotated training corpus"),
    ("dev_file", "development corpus"),
    ("distant_file", "distantly supervised corpus"),
    ("schema_file", "relation schema, one name per line after `Na`"),
    ("split", "corpus scored by predict, eval and inspect-attn: train, dev or distant"),
    ("teacher", "teacher checkpoint"),
    ("store", "silver evidence store"),
    ("init", "checkpoint finetuning starts from"),
    ("model", "checkpoint used by predict, fuse and inspect-attn"),
    ("predictions", "prediction file read by fuse and eval"),
    ("report", "evaluation report path"),
    ("precision", "silver store precision: f16, f32 or f64"),
    ("evi_threshold", "sentence importance threshold for evidence"),
    ("epochs", "training epochs"),
    ("lr_encoder", "encoder learning rate"),
    ("lr_classifier", "classifier learning rate"),
    ("lambda", "evidence loss weight"),
    ("batch_size", "documents per optimizer step"),
    ("clip_norm", "gradient norm clip"),
    ("warmup_frac", "fraction of steps with linear warmup"),
    ("weight_decay", "decoupled weight decay"),
    ("dropout", "encoder dropout during training"),
    ("re_loss", "relation loss: atl or bce"),
    ("er_supervision", "evidence supervision: gold, silver or none"),
    ("select_best_dev", "keep the epoch with the best dev RE F1"),
    ("dim", "model width"),
    ("layers", "encoder blocks"),
    ("heads", "attention heads"),
    ("ff_dim", "feed-forward width"),
    ("max_len", "maximum tokens per document"),
    ("average_last_k", "blocks averaged into H and A"),
    ("groups", "bilinear classifier groups"),
    ("train_docs", "synthetic training documents"),
    ("dev_docs", "synthetic development documents"),
    ("distant_docs", "synthetic distant documents"),
    ("doc", "document inspected by inspect-attn"),
    ("head", "subject entity inspected by inspect-attn"),
    ("tail", "object entity inspected by inspect-attn"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{pair}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get_or("seed", 0)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir").unwrap_or("."))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.raw("data_dir").map_or_else(|| self.out_dir(), PathBuf::from)
    }

    /// Path under `key`, or `default_name` inside `dir`.
    pub fn path_or(&self, key: &str, dir: &Path, default_name: &str) -> PathBuf {
        self.raw(key).map_or_else(|| dir.join(default_name), PathBuf::from)
    }

    /// Overrides stage defaults with any training keys present.
    pub fn train_config(&self, mut cfg: TrainConfig) -> Result<TrainConfig, CliError> {
        cfg.seed = self.seed()?;
        cfg.epochs = self.get_or("epochs", cfg.epochs)?;
        cfg.lr_encoder = self.get_or("lr_encoder", cfg.lr_encoder)?;
        cfg.lr_classifier = self.get_or("lr_classifier", cfg.lr_classifier)?;
        cfg.lambda = self.get_or("lambda", cfg.lambda)?;
        cfg.batch_size = self.get_or("batch_size", cfg.batch_size)?;
        cfg.clip_norm = self.get_or("clip_norm", cfg.clip_norm)?;
        cfg.warmup_frac = self.get_or("warmup_frac", cfg.warmup_frac)?;
        cfg.weight_decay = self.get_or("weight_decay", cfg.weight_decay)?;
        cfg.dropout = self.get_or("dropout", cfg.dropout)?;
        cfg.re_loss = self.get_or::<ReLossKind>("re_loss", cfg.re_loss)?;
        cfg.er_supervision = self.get_or::<ErSupervision>("er_supervision", cfg.er_supervision)?;
        cfg.select_best_dev = self.get_or("select_best_dev", cfg.select_best_dev)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let d = ModelSpec::default();
        Ok(ModelSpec {
            dim: self.get_or("dim", d.dim)?,
            layers: self.get_or("layers", d.layers)?,
            heads: self.get_or("heads", d.heads)?,
            ff_dim: self.get_or("ff_dim", d.ff_dim)?,
            max_len: self.get_or("max_len", d.max_len)?,
            average_last_k: self.get_or("average_last_k", d.average_last_k)?,
            groups: self.get_or("groups", d.groups)?,
        })
    }

    pub fn precision(&self) -> Result<Precision, CliError> {
        self.get_or("precision", Precision::F16)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.values).expect("string map serializes")
    }
}

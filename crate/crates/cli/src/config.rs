//! Experiment configuration: defaults, flat `key = value` files, the output
//! directory environment override, and command-line flags, in increasing
//! order of precedence.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flest_core::data::SplitRatios;
use flest_core::federation::{Mode, RunConfig};
use flest_core::model::Hyper;
use flest_core::synthetic::SyntheticSpec;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Overrides `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "FLEST_OUTPUT_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("cannot read config file {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// A triple file, or a directory holding `train.txt`.
    Path(PathBuf),
    /// Built-in generator, written `synthetic:ENTITIES:RELATIONS:TRIPLES:RANK[:SEED]`.
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    /// The triple file to read for a path source.
    pub fn triple_file(&self) -> Option<PathBuf> {
        match self {
            DatasetSource::Path(p) if p.is_dir() => Some(p.join("train.txt")),
            DatasetSource::Path(p) => Some(p.clone()),
            DatasetSource::Synthetic(_) => None,
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Path(p) => write!(f, "{}", p.display()),
            DatasetSource::Synthetic(s) => write!(
                f,
                "synthetic:{}:{}:{}:{}:{}",
                s.entities, s.relations, s.triples, s.planted_rank, s.seed
            ),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let Some(rest) = s.strip_prefix("synthetic:") else {
            return Ok(DatasetSource::Path(PathBuf::from(s)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        if !(4..=5).contains(&parts.len()) {
            return Err("expected synthetic:ENTITIES:RELATIONS:TRIPLES:RANK[:SEED]".into());
        }
        let num = |i: usize| parts[i].parse::<u64>().map_err(|e| format!("`{}`: {e}", parts[i]));
        Ok(DatasetSource::Synthetic(SyntheticSpec {
            entities: num(0)? as usize,
            relations: num(1)? as usize,
            triples: num(2)? as usize,
            planted_rank: num(3)? as usize,
            seed: if parts.len() == 5 { num(4)? } else { 0 },
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<DatasetSource>,
    pub num_clients: usize,
    pub rank: usize,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub rounds_max: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub partition_seed: u64,
    /// Initialisation, batch order and dropout.
    pub seed: u64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    pub mode: Mode,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            num_clients: 3,
            rank: 200,
            s: 0.5,
            alpha: 0.01,
            beta: 1e-5,
            lr: 0.0005,
            dropout: 0.3,
            batch_size: 128,
            local_epochs: 3,
            rounds_max: 300,
            patience: 15,
            eval_every: 5,
            partition_seed: 0,
            seed: 0,
            valid_ratio: 0.05,
            test_ratio: 0.05,
            mode: Mode::Federated,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Every key in rendering order.
pub const KEYS: [&str; 19] = [
    "dataset",
    "num_clients",
    "rank",
    "s",
    "alpha",
    "beta",
    "lr",
    "dropout",
    "batch_size",
    "local_epochs",
    "rounds_max",
    "patience",
    "eval_every",
    "partition_seed",
    "seed",
    "valid_ratio",
    "test_ratio",
    "mode",
    "output_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        reason: e.to_string(),
    })
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "num_clients" | "clients" => self.num_clients = parse(key, v)?,
            "rank" => self.rank = parse(key, v)?,
            "s" | "sparsity" => self.s = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "local_epochs" => self.local_epochs = parse(key, v)?,
            "rounds_max" | "rounds" => self.rounds_max = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "partition_seed" => self.partition_seed = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "valid_ratio" => self.valid_ratio = parse(key, v)?,
            "test_ratio" => self.test_ratio = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a flat config text: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text)
    }

    /// Applies the output directory environment override, if set.
    pub fn apply_env(&mut self, value: Option<String>) {
        if let Some(dir) = value.filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "dataset" => self.dataset.as_ref().map(|d| d.to_string()).unwrap_or_default(),
            "num_clients" => self.num_clients.to_string(),
            "rank" => self.rank.to_string(),
            "s" => self.s.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "lr" => self.lr.to_string(),
            "dropout" => self.dropout.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "rounds_max" => self.rounds_max.to_string(),
            "patience" => self.patience.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "partition_seed" => self.partition_seed.to_string(),
            "seed" => self.seed.to_string(),
            "valid_ratio" => self.valid_ratio.to_string(),
            "test_ratio" => self.test_ratio.to_string(),
            "mode" => self.mode.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => String::new(),
        }
    }

    /// `key = value` lines for every key; parses back to the same config.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    /// The rendering without `output_dir`, which names where results go and
    /// not what they are. Stored in checkpoints.
    pub fn identity_text(&self) -> String {
        KEYS.iter()
            .filter(|&&k| k != "output_dir")
            .map(|k| format!("{k} = {}\n", self.get(k)))
            .collect()
    }

    /// SHA-256 of the configuration, excluding the output directory.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.identity_text().as_bytes()).into()
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            alpha: self.alpha,
            beta: self.beta,
            lr: self.lr,
            dropout_rate: self.dropout,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            valid: self.valid_ratio,
            test: self.test_ratio,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            num_clients: self.num_clients,
            rounds_max: self.rounds_max,
            hyper: self.hyper(),
            rank: self.rank,
            s: self.s,
            seed: self.seed,
            mode: self.mode,
            eval_every: self.eval_every,
            patience: (self.patience > 0).then_some(self.patience),
        }
    }

    /// Range checks that do not need the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = self.ratios();
        let ok = |x: f64| (0.0..1.0).contains(&x);
        if !(ok(r.valid) && ok(r.test) && r.valid + r.test < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "split ratios valid = {}, test = {} must be in [0, 1) with sum < 1",
                r.valid, r.test
            )));
        }
        Ok(())
    }

    pub fn require_dataset(&self) -> Result<&DatasetSource, ConfigError> {
        self.dataset
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("no dataset configured (set `dataset` or pass --dataset)".into()))
    }
}

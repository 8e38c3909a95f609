//! Flat `key = value` training configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::optim::OptimizerKind;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SimilarityFeatures};
use crate::model::PoolingMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Published hyper-parameters: D=500, lr 0.1, batch 1000.
    Paper,
    /// Small CPU-friendly runs: D=32, batch 128.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile '{s}'"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub profile: Profile,
    /// Dataset name, used for loss-weight defaults and the statistics check.
    pub dataset: Option<String>,
    pub verify_stats: bool,
    pub dim: usize,
    pub pos_dim: usize,
    pub gru_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs between validation passes.
    pub eval_interval: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub pooling: PoolingMode,
    pub sim_features: SimilarityFeatures,
    pub cmd_order: usize,
    pub embedding_std: f64,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            profile: Profile::Paper,
            dataset: None,
            verify_stats: false,
            dim: 500,
            pos_dim: 32,
            gru_hidden: 16,
            lr: 0.1,
            batch_size: 1000,
            max_epochs: 500,
            eval_interval: 5,
            patience: 50,
            weights: LossWeights::ICEWS14,
            seed: 0,
            optimizer: OptimizerKind::Adagrad,
            pooling: PoolingMode::Adjustable,
            sim_features: SimilarityFeatures::Shared,
            cmd_order: 5,
            embedding_std: 1e-2,
            train: None,
            valid: None,
            test: None,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            profile: Profile::Desk,
            dim: 32,
            batch_size: 128,
            max_epochs: 200,
            eval_interval: 10,
            weights: LossWeights::DESK,
            ..Self::paper()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Published settings for a named benchmark.
    pub fn paper_for(dataset: &str) -> Result<Self> {
        let weights = LossWeights::for_dataset(dataset)
            .ok_or_else(|| Error::Config(format!("unknown dataset '{dataset}'")))?;
        Ok(TrainConfig {
            dataset: Some(dataset.to_string()),
            weights,
            ..Self::paper()
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_relative(text, None)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_relative(&text, path.parent())
    }

    /// Parses config text; relative data paths are resolved against `base`.
    pub fn parse_relative(text: &str, base: Option<&Path>) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let profile = match pairs.get("profile") {
            Some(v) => v.parse()?,
            None => Profile::Desk,
        };
        let mut c = Self::for_profile(profile);
        if let Some(d) = pairs.get("dataset") {
            c.dataset = Some(d.clone());
            if let Some(w) = LossWeights::for_dataset(d) {
                c.weights = w;
            }
        }
        let path = |v: &str| {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        for (k, v) in &pairs {
            let bad = |e: String| Error::Config(format!("{k}: {e}"));
            match k.as_str() {
                "profile" | "dataset" => {}
                "verify_stats" => c.verify_stats = v.parse().map_err(|e| bad(format!("{e}")))?,
                "dim" => c.dim = num(k, v)?,
                "pos_dim" => c.pos_dim = num(k, v)?,
                "gru_hidden" => c.gru_hidden = num(k, v)?,
                "lr" => c.lr = num(k, v)?,
                "batch_size" => c.batch_size = num(k, v)?,
                "max_epochs" => c.max_epochs = num(k, v)?,
                "eval_interval" => c.eval_interval = num(k, v)?,
                "patience" => c.patience = num(k, v)?,
                "alpha" => c.weights.alpha = num(k, v)?,
                "beta" => c.weights.beta = num(k, v)?,
                "gamma" => c.weights.gamma = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "optimizer" => c.optimizer = v.parse()?,
                "pooling" => c.pooling = v.parse().map_err(|e| bad(format!("{e}")))?,
                "sim_features" => c.sim_features = v.parse().map_err(|e| bad(format!("{e}")))?,
                "cmd_order" => c.cmd_order = num(k, v)?,
                "embedding_std" => c.embedding_std = num(k, v)?,
                "train" => c.train = Some(path(v)),
                "valid" => c.valid = Some(path(v)),
                "test" => c.test = Some(path(v)),
                _ => return Err(Error::Config(format!("unknown key '{k}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("eval_interval", self.eval_interval),
            ("cmd_order", self.cmd_order),
            ("gru_hidden", self.gru_hidden),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.pos_dim == 0 || !self.pos_dim.is_multiple_of(2) {
            return Err(Error::Config(
                "pos_dim must be a positive even number".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.embedding_std > 0.0 && self.embedding_std.is_finite()) {
            return Err(Error::Config("embedding_std must be positive".into()));
        }
        self.weights.validate()
    }

    /// Canonical `key = value` text; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("profile", &self.profile);
        if let Some(d) = &self.dataset {
            kv("dataset", d);
        }
        kv("verify_stats", &self.verify_stats);
        kv("dim", &self.dim);
        kv("pos_dim", &self.pos_dim);
        kv("gru_hidden", &self.gru_hidden);
        kv("lr", &self.lr);
        kv("batch_size", &self.batch_size);
        kv("max_epochs", &self.max_epochs);
        kv("eval_interval", &self.eval_interval);
        kv("patience", &self.patience);
        kv("alpha", &self.weights.alpha);
        kv("beta", &self.weights.beta);
        kv("gamma", &self.weights.gamma);
        kv("seed", &self.seed);
        kv("optimizer", &self.optimizer);
        kv("pooling", &self.pooling);
        kv("sim_features", &self.sim_features);
        kv("cmd_order", &self.cmd_order);
        kv("embedding_std", &self.embedding_std);
        for (k, p) in [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
        ] {
            if let Some(p) = p {
                kv(k, &p.display());
            }
        }
        s
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{v}': {e}")))
}

/// `key = value` lines; `#` starts a comment. Duplicate keys are errors.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key '{k}'")));
        }
    }
    Ok(out)
}

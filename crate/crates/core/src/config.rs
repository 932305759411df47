//! Flat `key = value` run configuration.
//!
//! One namespace covers data generation (`data.*`), the held-out evaluation
//! split (`eval.*`), policy shape (`policy.*`), and training (`train.*`).
//! Values resolve in order: built-in defaults, then a config file, then
//! repeated `--set key=value` overrides, then dedicated CLI flags. Unknown
//! keys are errors, so typos fail loudly instead of silently running with a
//! default. Every run directory receives a `config.txt` snapshot of the
//! fully resolved configuration, which can itself be passed back via
//! `--config` to reproduce the run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::env::DatasetSpec;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DatasetSpec,
    /// Held-out episodes generated separately from the training pool.
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DatasetSpec::default(),
            eval_episodes: 300,
            eval_seed: 1,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

impl RunConfig {
    /// Set one key. The key list is the same one `to_kv` emits.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.k_min" => self.data.k_min = parse(key, value)?,
            "data.k_max" => self.data.k_max = parse(key, value)?,
            "data.vocab_size" => {
                self.data.vocab_size = parse(key, value)?;
                // The policy scores exactly the symbols the data uses.
                self.train.policy.vocab_size = self.data.vocab_size;
            }
            "data.doc_len" => self.data.doc_len = parse(key, value)?,
            "data.distractor_pairs" => self.data.distractor_pairs = parse(key, value)?,
            "data.insufficiency_rate" => self.data.insufficiency_rate = parse(key, value)?,
            "data.two_hop_rate" => self.data.two_hop_rate = parse(key, value)?,
            "data.episodes" => self.data.episodes = parse(key, value)?,
            "data.seed" => self.data.seed = parse(key, value)?,
            "eval.episodes" => self.eval_episodes = parse(key, value)?,
            "eval.seed" => self.eval_seed = parse(key, value)?,
            "policy.window" => self.train.policy.window = parse(key, value)?,
            "policy.max_len" => self.train.policy.max_len = parse(key, value)?,
            "train.mode" => self.train.mode = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.sft_epochs" => self.train.sft_epochs = parse(key, value)?,
            "train.sft_batch" => self.train.sft_batch = parse(key, value)?,
            "train.sft_lr" => self.train.sft_lr = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.rollout_batch" => self.train.rollout_batch = parse(key, value)?,
            "train.group_size" => self.train.group_size = parse(key, value)?,
            "train.temperature" => self.train.temperature = parse(key, value)?,
            "train.eps_low" => self.train.eps_low = parse(key, value)?,
            "train.eps_high" => self.train.eps_high = parse(key, value)?,
            "train.rl_lr" => self.train.rl_lr = parse(key, value)?,
            "train.grad_clip" => self.train.grad_clip = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.k_pos" => self.train.k_pos = parse(key, value)?,
            "train.curriculum" => self.train.curriculum = parse(key, value)?,
            "train.dynamic_sampling" => self.train.dynamic_sampling = parse(key, value)?,
            "train.positional_norm" => self.train.positional_norm = parse(key, value)?,
            "train.workers" => self.train.workers = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The full resolved configuration as sorted key/value pairs.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("data.k_min", self.data.k_min.to_string());
        put("data.k_max", self.data.k_max.to_string());
        put("data.vocab_size", self.data.vocab_size.to_string());
        put("data.doc_len", self.data.doc_len.to_string());
        put("data.distractor_pairs", self.data.distractor_pairs.to_string());
        put("data.insufficiency_rate", self.data.insufficiency_rate.to_string());
        put("data.two_hop_rate", self.data.two_hop_rate.to_string());
        put("data.episodes", self.data.episodes.to_string());
        put("data.seed", self.data.seed.to_string());
        put("eval.episodes", self.eval_episodes.to_string());
        put("eval.seed", self.eval_seed.to_string());
        put("policy.window", self.train.policy.window.to_string());
        put("policy.max_len", self.train.policy.max_len.to_string());
        put("train.mode", self.train.mode.to_string());
        put("train.seed", self.train.seed.to_string());
        put("train.sft_epochs", self.train.sft_epochs.to_string());
        put("train.sft_batch", self.train.sft_batch.to_string());
        put("train.sft_lr", self.train.sft_lr.to_string());
        put("train.epochs", self.train.epochs.to_string());
        put("train.rollout_batch", self.train.rollout_batch.to_string());
        put("train.group_size", self.train.group_size.to_string());
        put("train.temperature", self.train.temperature.to_string());
        put("train.eps_low", self.train.eps_low.to_string());
        put("train.eps_high", self.train.eps_high.to_string());
        put("train.rl_lr", self.train.rl_lr.to_string());
        put("train.grad_clip", self.train.grad_clip.to_string());
        put("train.weight_decay", self.train.weight_decay.to_string());
        put("train.k_pos", self.train.k_pos.to_string());
        put("train.curriculum", self.train.curriculum.to_string());
        put("train.dynamic_sampling", self.train.dynamic_sampling.to_string());
        put("train.positional_norm", self.train.positional_norm.to_string());
        put("train.workers", self.train.workers.to_string());
        kv
    }

    /// Apply a config file: `key = value` lines, `#` comments, blank lines.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply `--set key=value` overrides.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set wants key=value, got {s:?}")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Resolve from all sources in precedence order.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(sets)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval.episodes must be positive".into()));
        }
        if self.data.vocab_size != self.train.policy.vocab_size {
            return Err(Error::Config(format!(
                "data vocabulary {} differs from policy vocabulary {}",
                self.data.vocab_size, self.train.policy.vocab_size
            )));
        }
        Ok(())
    }

    /// Snapshot the resolved configuration as `key = value` lines.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in self.to_kv() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Spec for the held-out evaluation split.
    pub fn eval_spec(&self) -> DatasetSpec {
        DatasetSpec {
            episodes: self.eval_episodes,
            seed: self.eval_seed,
            ..self.data.clone()
        }
    }
}

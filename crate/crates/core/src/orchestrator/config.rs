use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::OrchestratorError;
use crate::attention::{TrainConfig, DEFAULT_MAX_PER_CLASS};
use crate::coverage::DEFAULT_MAP_SIZE;
use crate::guidance::DEFAULT_P_HOT;
use crate::markov::{DEFAULT_K_PERCENT, DEFAULT_K_PRIME};
use crate::target::{DEFAULT_INPUT_LEN_MAX, DEFAULT_STEP_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Carrier fuzzer plus the reward / attention / guidance pipeline.
    #[default]
    Attuzz,
    /// Carrier fuzzer only.
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Attuzz => "attuzz",
            Mode::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "attuzz" => Ok(Mode::Attuzz),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(format!("unknown mode {s:?} (expected attuzz or baseline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzerConfig {
    pub rng_seed: u64,
    pub map_size: usize,
    pub max_input_len: usize,
    /// Mutations per seed per scheduling round.
    pub iter_limit: u64,
    /// Executions between bottleneck checks.
    pub window_execs: u64,
    pub bottleneck_delta: f64,
    pub k_percent: f64,
    pub k_prime: f64,
    pub p_hot: f64,
    pub train: TrainConfig,
    pub mode: Mode,
    pub step_limit: usize,
    pub dict: Option<PathBuf>,
    /// Execution budget, not counting the initial corpus dry run.
    pub max_execs: u64,
    /// Per-class cap on training samples after undersampling.
    pub max_per_class: usize,
    /// Cap on forward passes averaged into one heat map.
    pub heatmap_samples: usize,
}

impl Default for FuzzerConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            map_size: DEFAULT_MAP_SIZE,
            max_input_len: DEFAULT_INPUT_LEN_MAX,
            iter_limit: 50_000,
            window_execs: 100_000,
            bottleneck_delta: 0.05,
            k_percent: DEFAULT_K_PERCENT,
            k_prime: DEFAULT_K_PRIME,
            p_hot: DEFAULT_P_HOT,
            train: TrainConfig::default(),
            mode: Mode::Attuzz,
            step_limit: DEFAULT_STEP_LIMIT,
            dict: None,
            max_execs: 1_000_000,
            max_per_class: DEFAULT_MAX_PER_CLASS,
            heatmap_samples: 1000,
        }
    }
}

impl FuzzerConfig {
    /// Known keys, in the order [`to_text`](Self::to_text) writes them.
    pub const KEYS: &'static [&'static str] = &[
        "rng_seed",
        "map_size",
        "max_input_len",
        "iter_limit",
        "window_execs",
        "bottleneck_delta",
        "k_percent",
        "k_prime",
        "p_hot",
        "mode",
        "step_limit",
        "dict",
        "max_execs",
        "max_per_class",
        "heatmap_samples",
        "learning_rate",
        "epochs",
        "batch_size",
        "holdout",
        "train_seed",
        "embed_dim",
        "feature_dim",
    ];

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?}"))
        }
        match key {
            "rng_seed" => self.rng_seed = p(value)?,
            "map_size" => self.map_size = p(value)?,
            "max_input_len" => self.max_input_len = p(value)?,
            "iter_limit" => self.iter_limit = p(value)?,
            "window_execs" => self.window_execs = p(value)?,
            "bottleneck_delta" => self.bottleneck_delta = p(value)?,
            "k_percent" => self.k_percent = p(value)?,
            "k_prime" => self.k_prime = p(value)?,
            "p_hot" => self.p_hot = p(value)?,
            "mode" => self.mode = value.parse()?,
            "step_limit" => self.step_limit = p(value)?,
            "dict" => self.dict = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "max_execs" => self.max_execs = p(value)?,
            "max_per_class" => self.max_per_class = p(value)?,
            "heatmap_samples" => self.heatmap_samples = p(value)?,
            "learning_rate" => self.train.learning_rate = p(value)?,
            "epochs" => self.train.epochs = p(value)?,
            "batch_size" => self.train.batch_size = p(value)?,
            "holdout" => self.train.holdout = p(value)?,
            "train_seed" => self.train.seed = p(value)?,
            "embed_dim" => self.train.d = p(value)?,
            "feature_dim" => self.train.d_prime = p(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), OrchestratorError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| OrchestratorError::Config { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, OrchestratorError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let dict = self.dict.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let vals: Vec<String> = vec![
            self.rng_seed.to_string(),
            self.map_size.to_string(),
            self.max_input_len.to_string(),
            self.iter_limit.to_string(),
            self.window_execs.to_string(),
            self.bottleneck_delta.to_string(),
            self.k_percent.to_string(),
            self.k_prime.to_string(),
            self.p_hot.to_string(),
            self.mode.to_string(),
            self.step_limit.to_string(),
            dict,
            self.max_execs.to_string(),
            self.max_per_class.to_string(),
            self.heatmap_samples.to_string(),
            t.learning_rate.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.holdout.to_string(),
            t.seed.to_string(),
            t.d.to_string(),
            t.d_prime.to_string(),
        ];
        Self::KEYS.iter().zip(vals).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |msg: &str| Err(OrchestratorError::Config { line: 0, msg: msg.into() });
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !self.map_size.is_power_of_two() {
            return bad("map_size must be a power of two");
        }
        if self.window_execs == 0 {
            return bad("window_execs must be at least 1");
        }
        if self.iter_limit == 0 {
            return bad("iter_limit must be at least 1");
        }
        if self.step_limit == 0 || self.max_input_len == 0 {
            return bad("step_limit and max_input_len must be at least 1");
        }
        if !unit(self.bottleneck_delta) || !unit(self.p_hot) {
            return bad("bottleneck_delta and p_hot must be in [0, 1]");
        }
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return bad("k_percent must be in (0, 100]");
        }
        if !(self.k_prime > 0.0 && self.k_prime <= 1.0) {
            return bad("k_prime must be in (0, 1]");
        }
        if self.max_per_class == 0 || self.heatmap_samples == 0 {
            return bad("max_per_class and heatmap_samples must be at least 1");
        }
        self.train.validate().map_err(|e| OrchestratorError::Config { line: 0, msg: e.to_string() })
    }
}

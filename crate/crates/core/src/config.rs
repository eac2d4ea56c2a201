//! Flat `key: value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys follow the published
//! hyperparameter listing where one exists (`depth`, `breadth`, `num_sim`,
//! `prune_per`, `beta`, `loss_type`, `value_head_type`). Unknown or repeated
//! keys are errors.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::env::{GridSpec, ParaphraseSpec, PlantedTreeSpec};
use crate::grpo::{FilterPolicy, DEFAULT_CLIP_EPSILON, DEFAULT_KL_BETA};
use crate::mcts::SearchConfig;
use crate::shaping::RewardScheme;
use crate::value_head::{DEFAULT_VALUE_LOSS_WEIGHT, DEFAULT_VALUE_LR};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("line {line}: expected `key: value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Planted,
    Paraphrase,
    Gridworld,
}

impl FromStr for EnvKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "planted" => Ok(Self::Planted),
            "paraphrase" => Ok(Self::Paraphrase),
            "gridworld" => Ok(Self::Gridworld),
            _ => Err(()),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Planted => "planted",
            Self::Paraphrase => "paraphrase",
            Self::Gridworld => "gridworld",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub hidden_dim: usize,
    /// Planted: log-probability noise.
    pub noise: f64,
    /// Planted: fixed path, or drawn per prompt from the seed when absent.
    pub planted_path: Option<Vec<usize>>,
    /// Paraphrase: number of semantic groups per expansion.
    pub dup_groups: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub goal: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub filter: FilterPolicy,
    pub env: EnvConfig,
    pub seed: u64,
    pub prompts: usize,
    pub scheme: RewardScheme,
    pub epsilon: f64,
    pub beta: f64,
    pub lambda: f64,
    pub value_lr: f64,
    pub train_steps: usize,
    pub group_size: usize,
    pub format_bonus: f64,
    /// Optional value-head checkpoint used to score nodes during rollout.
    pub value_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        Self {
            env: EnvConfig {
                kind: EnvKind::Planted,
                hidden_dim: 16,
                noise: 0.3,
                planted_path: None,
                dup_groups: 2,
                grid_width: 4,
                grid_height: 4,
                goal: (3, 3),
            },
            search,
            filter: FilterPolicy::default(),
            seed: 0,
            prompts: 1,
            scheme: RewardScheme::Poincare,
            epsilon: DEFAULT_CLIP_EPSILON,
            beta: DEFAULT_KL_BETA,
            lambda: DEFAULT_VALUE_LOSS_WEIGHT,
            value_lr: DEFAULT_VALUE_LR,
            train_steps: 10,
            group_size: 8,
            format_bonus: 0.0,
            value_checkpoint: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "depth",
    "breadth",
    "num_sim",
    "prune_per",
    "prune_ratio",
    "cluster_tau",
    "c_puct",
    "eta",
    "max_action_length",
    "stability_delta",
    "projection_margin",
    "beta",
    "epsilon",
    "lambda",
    "loss_type",
    "value_head_type",
    "value_lr",
    "value_checkpoint",
    "train_steps",
    "group_size",
    "format_bonus",
    "scheme",
    "min_success_rate",
    "max_success_rate",
    "min_reward_range",
    "max_groups",
    "env",
    "hidden_dim",
    "noise",
    "planted_path",
    "dup_groups",
    "grid_width",
    "grid_height",
    "goal",
    "seed",
    "prompts",
];

fn parse_pair(v: &str) -> Option<(usize, usize)> {
    let (a, b) = v.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_list(v: &str) -> Option<Vec<usize>> {
    v.split(',').map(|x| x.trim().parse().ok()).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        text.parse()
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue { line, key: key.into(), value: value.into() };
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "depth" => self.search.max_depth = num!(),
            "breadth" => self.search.branching = num!(),
            "num_sim" => self.search.num_sim = num!(),
            "prune_per" => self.search.prune_interval = num!(),
            "prune_ratio" => self.search.prune_ratio = num!(),
            "cluster_tau" => self.search.cluster_threshold = num!(),
            "c_puct" => self.search.exploration_c = num!(),
            "eta" => self.search.mix_eta = num!(),
            "max_action_length" => self.search.max_action_length = num!(),
            "stability_delta" => self.search.geo.stability_delta = num!(),
            "projection_margin" => self.search.geo.projection_margin = num!(),
            "beta" => self.beta = num!(),
            "epsilon" => self.epsilon = num!(),
            "lambda" => self.lambda = num!(),
            "loss_type" if value == "dr_grpo" => {}
            "value_head_type" if value == "linear" => {}
            "loss_type" | "value_head_type" => return Err(bad()),
            "value_lr" => self.value_lr = num!(),
            "value_checkpoint" => self.value_checkpoint = Some(PathBuf::from(value)),
            "train_steps" => self.train_steps = num!(),
            "group_size" => self.group_size = num!(),
            "format_bonus" => self.format_bonus = num!(),
            "scheme" => self.scheme = num!(),
            "min_success_rate" => self.filter.min_success_rate = num!(),
            "max_success_rate" => self.filter.max_success_rate = num!(),
            "min_reward_range" => self.filter.min_reward_range = num!(),
            "max_groups" => self.filter.max_groups_per_step = num!(),
            "env" => self.env.kind = num!(),
            "hidden_dim" => self.env.hidden_dim = num!(),
            "noise" => self.env.noise = num!(),
            "planted_path" => self.env.planted_path = Some(parse_list(value).ok_or_else(bad)?),
            "dup_groups" => self.env.dup_groups = num!(),
            "grid_width" => self.env.grid_width = num!(),
            "grid_height" => self.env.grid_height = num!(),
            "goal" => self.env.goal = parse_pair(value).ok_or_else(bad)?,
            "seed" => self.seed = num!(),
            "prompts" => self.prompts = num!(),
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.prompts == 0 {
            return invalid("prompts must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda), ("value_lr", self.value_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.format_bonus.is_finite() {
            return invalid("format_bonus must be finite".into());
        }
        if self.group_size < 2 {
            return invalid("group_size must be at least 2".into());
        }
        let f = &self.filter;
        if !(0.0..=1.0).contains(&f.min_success_rate)
            || !(0.0..=1.0).contains(&f.max_success_rate)
            || f.min_success_rate >= f.max_success_rate
        {
            return invalid("success-rate bounds must satisfy 0 <= min < max <= 1".into());
        }
        if f.min_reward_range.is_nan() || f.min_reward_range < 0.0 || f.max_groups_per_step == 0 {
            return invalid("min_reward_range must be non-negative and max_groups positive".into());
        }
        match self.env.kind {
            EnvKind::Planted => self.planted_spec(self.seed).validate(),
            EnvKind::Paraphrase => self.paraphrase_spec().validate(),
            EnvKind::Gridworld if self.search.branching != 4 => {
                return invalid(format!("gridworld has 4 moves; breadth must be 4, got {}", self.search.branching))
            }
            EnvKind::Gridworld => crate::env::GridWorld::new(self.grid_spec()).map(|_| ()),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Planted environment spec for one prompt; the path is drawn from
    /// `prompt_seed` unless fixed in the config.
    pub fn planted_spec(&self, prompt_seed: u64) -> PlantedTreeSpec {
        use rand::SeedableRng;
        let b = self.search.branching;
        let d = self.search.max_depth;
        let mut spec = match &self.env.planted_path {
            Some(p) => PlantedTreeSpec::new(b, d, p.clone(), self.env.noise),
            None => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(prompt_seed);
                PlantedTreeSpec::random(b, d, self.env.noise, &mut rng)
            }
        };
        spec.hidden_dim = self.env.hidden_dim;
        spec
    }

    pub fn paraphrase_spec(&self) -> ParaphraseSpec {
        let mut spec = ParaphraseSpec::new(self.search.branching, self.env.dup_groups, self.search.max_depth);
        spec.hidden_dim = self.env.hidden_dim;
        spec.tau = self.search.cluster_threshold;
        spec
    }

    pub fn grid_spec(&self) -> GridSpec {
        let mut spec = GridSpec::new(self.env.grid_width, self.env.grid_height, self.env.goal);
        spec.hidden_dim = self.env.hidden_dim;
        spec
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once(':').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey { line, key: key.into() });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

//! Command-line entry points.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, EnvKind, RunConfig};
use crate::env::{GridWorld, ParaphraseCluster, PlantedTree, PolicyProvider, Verifier};
use crate::geometry::GeoConfig;
use crate::grpo::{batch_policy_loss, build_group, filter_indices, kl_penalty, RolloutGroup, ScoredTree};
use crate::mcts::run_search;
use crate::persist::{self, PersistError};
use crate::shaping::{shape_tree, RewardScheme, ShapingError};
use crate::tree::SearchTree;
use crate::value_head::{joint_loss, ValueBatch, ValueHead};

#[derive(Debug, Parser)]
#[command(name = "hyperlatent", version, about = "Hyperbolic latent search, shaping and training on synthetic environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one search per configured prompt and write a tree file for each.
    Rollout {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Annotate a tree with potentials and per-edge step rewards.
    Shape {
        tree: PathBuf,
        #[arg(long, default_value = "poincare")]
        scheme: RewardScheme,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter trees, build groups, and fit the value head.
    Train {
        /// Glob pattern selecting tree files.
        trees: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Value-head checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the rollout groups as line-delimited records.
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Export latents and the pairwise geodesic distance matrix.
    ExportDisk {
        tree: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("tree cannot be shaped: {0}")]
    Unshapeable(ShapingError),
    #[error("no tree survived filtering ({0} loaded)")]
    NothingSurvived(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Unshapeable(_) => 3,
            CliError::NothingSurvived(_) => 4,
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn emit(line: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(runtime),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Rollout { config, out, seed } => cmd_rollout(&load_config(config.as_deref(), seed)?, &out),
        Command::Shape { tree, scheme, out } => cmd_shape(&tree, scheme, &out),
        Command::Train { trees, config, out, seed, groups } => {
            cmd_train(&load_config(config.as_deref(), seed)?, &trees, &out, groups.as_deref())
        }
        Command::ExportDisk { tree, out } => cmd_export_disk(&tree, &out),
    }
}

type Environment = (Box<dyn PolicyProvider>, Box<dyn Verifier>);

fn environment(cfg: &RunConfig, prompt_seed: u64) -> Result<Environment, CliError> {
    Ok(match cfg.env.kind {
        EnvKind::Planted => {
            let env = PlantedTree::new(cfg.planted_spec(prompt_seed), prompt_seed).map_err(runtime)?;
            (Box::new(env.clone()), Box::new(env))
        }
        EnvKind::Paraphrase => {
            let env = ParaphraseCluster::new(cfg.paraphrase_spec(), prompt_seed).map_err(runtime)?;
            (Box::new(env.clone()), Box::new(env))
        }
        EnvKind::Gridworld => {
            let env = GridWorld::new(cfg.grid_spec()).map_err(runtime)?;
            (Box::new(env.clone()), Box::new(env))
        }
    })
}

fn tree_summary(tree: &SearchTree) -> (usize, usize, f64) {
    (tree.len(), tree.terminal_leaves().len(), tree.success_rate().unwrap_or(0.0))
}

pub fn cmd_rollout(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let head = match &cfg.value_checkpoint {
        Some(p) => persist::load_value_head(p)?,
        None => ValueHead::zeros(cfg.env.hidden_dim),
    };
    if head.dim() != cfg.env.hidden_dim {
        return Err(ConfigError::Invalid(format!(
            "value head width {} differs from hidden_dim {}",
            head.dim(),
            cfg.env.hidden_dim
        ))
        .into());
    }
    fs::create_dir_all(out_dir).map_err(runtime)?;
    for i in 0..cfg.prompts {
        let prompt_seed = cfg.seed.wrapping_add(i as u64);
        let (provider, verifier) = environment(cfg, prompt_seed)?;
        let mut search = cfg.search.clone();
        search.rng_seed = prompt_seed;
        let tree = run_search(provider.as_ref(), &head, verifier.as_ref(), &search).map_err(runtime)?;
        let name = format!("tree_{i:04}.jsonl");
        persist::dump_tree(&tree, &out_dir.join(&name))?;
        let (nodes, terminals, rate) = tree_summary(&tree);
        emit(&format!("{name}\tnodes={nodes}\tterminals={terminals}\tsuccess_rate={rate:.4}"))?;
        log::info!("prompt {i}: seed {prompt_seed}, {nodes} nodes");
    }
    Ok(())
}

pub fn cmd_shape(tree_path: &Path, scheme: RewardScheme, out: &Path) -> Result<(), CliError> {
    let mut tree = persist::load_tree(tree_path)?;
    let shaping = match shape_tree(&tree, scheme, &[]) {
        Ok(s) => s,
        Err(e @ ShapingError::EmptyGoalSet) => return Err(CliError::Unshapeable(e)),
        Err(e) => return Err(runtime(e)),
    };
    shaping.annotate(&mut tree);
    persist::dump_tree(&tree, out)?;
    let (nodes, terminals, rate) = tree_summary(&tree);
    emit(&format!("scheme={scheme}\tnodes={nodes}\tterminals={terminals}\tsuccess_rate={rate:.4}"))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct StepRecord {
    step: usize,
    groups: usize,
    policy_loss: f64,
    kl: f64,
    value_loss: f64,
    joint_loss: f64,
}

/// Potentials of every node of every kept tree, as value-head targets.
fn value_batch(trees: &[ScoredTree]) -> Result<Option<ValueBatch>, CliError> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for t in trees {
        let shaping = match shape_tree(&t.tree, RewardScheme::Poincare, &[]) {
            Ok(s) => s,
            Err(ShapingError::EmptyGoalSet) => continue,
            Err(e) => return Err(runtime(e)),
        };
        for n in t.tree.nodes() {
            inputs.push(n.pooled.clone());
            targets.push(shaping.potential(n.id).map(|p| p.value()).unwrap_or(0.0));
        }
    }
    if inputs.is_empty() {
        return Ok(None);
    }
    ValueBatch::new(inputs, targets).map(Some).map_err(runtime)
}

pub fn cmd_train(cfg: &RunConfig, pattern: &str, out: &Path, groups_out: Option<&Path>) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| ConfigError::Invalid(format!("bad tree pattern: {e}")))?
        .collect::<Result<_, _>>()
        .map_err(runtime)?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Runtime(format!("no tree files match `{pattern}`")));
    }
    let mut scored = Vec::with_capacity(paths.len());
    for p in &paths {
        let tree = persist::load_tree(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        scored.push((stem, ScoredTree::score(tree, cfg.scheme, cfg.format_bonus).map_err(runtime)?));
    }
    let loaded = scored.len();
    let (ids, trees): (Vec<String>, Vec<ScoredTree>) = scored.into_iter().unzip();
    let survivors: Vec<(String, ScoredTree)> = {
        let keep = filter_indices(&trees, &cfg.filter);
        let mut slots: Vec<Option<(String, ScoredTree)>> = ids.into_iter().zip(trees).map(Some).collect();
        keep.into_iter().map(|i| slots[i].take().expect("indices are distinct")).collect()
    };
    if survivors.is_empty() {
        return Err(CliError::NothingSurvived(loaded));
    }
    log::info!("{} of {loaded} trees kept", survivors.len());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups: Vec<RolloutGroup> = survivors
        .iter()
        .filter_map(|(id, t)| build_group(t, id, cfg.group_size, &mut rng))
        .collect();
    if let Some(p) = groups_out {
        persist::write_atomic(p, persist::groups_string(&groups).as_bytes())?;
    }
    let kept: Vec<ScoredTree> = survivors.into_iter().map(|(_, t)| t).collect();
    let batch = value_batch(&kept)?;
    let dim = kept[0].tree.hidden_dim();
    let mut head = match &cfg.value_checkpoint {
        Some(p) => persist::load_value_head(p)?,
        None => ValueHead::zeros(dim),
    };

    let policy_loss = batch_policy_loss(&groups, cfg.epsilon).map_err(runtime)?;
    let mut kl = 0.0;
    let mut n_traj = 0usize;
    for g in &groups {
        for t in &g.trajectories {
            kl += kl_penalty(&t.token_logprobs_new, &t.token_logprobs_old, cfg.beta).map_err(runtime)?;
            n_traj += 1;
        }
    }
    if n_traj > 0 {
        kl /= n_traj as f64;
    }
    for step in 0..cfg.train_steps.max(1) {
        let value_loss = match &batch {
            Some(b) => head.value_loss(b).map_err(runtime)?,
            None => 0.0,
        };
        let rec = StepRecord {
            step,
            groups: groups.len(),
            policy_loss,
            kl,
            value_loss,
            joint_loss: joint_loss(policy_loss + kl, value_loss, cfg.lambda),
        };
        emit(&serde_json::to_string(&rec).expect("record serializes"))?;
        if let Some(b) = &batch {
            let grad = head.value_grad(b).map_err(runtime)?;
            head = head.sgd_step(&grad, cfg.value_lr).map_err(runtime)?;
        }
    }
    persist::save_value_head(&head, out)?;
    Ok(())
}

pub fn cmd_export_disk(tree_path: &Path, out: &Path) -> Result<(), CliError> {
    let tree = persist::load_tree(tree_path)?;
    let text = persist::disk_string(&tree, &GeoConfig::default())?;
    persist::write_atomic(out, text.as_bytes())?;
    emit(&format!("nodes={}", tree.len()))?;
    Ok(())
}

//! Group-relative policy optimization (Dr. GRPO form).
//!
//! Advantages are mean-centered returns with no standard-deviation or length
//! normalization. The clipped objective sums over tokens and averages over
//! the group; batches average per group.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shaping::{shape_tree, Potential, RewardScheme, ShapingError};
use crate::tree::{NodeId, SearchTree};

pub const DEFAULT_CLIP_EPSILON: f64 = 0.2;
pub const DEFAULT_KL_BETA: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("group has {0} trajectories; at least 2 are required")]
    GroupTooSmall(usize),
    #[error("node {0} is not terminal")]
    NotTerminal(NodeId),
    #[error("no potential recorded for node {0}")]
    MissingPotential(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("log-probability sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("trajectory has no tokens")]
    EmptyTrajectory,
    #[error("clip epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub node_path: Vec<NodeId>,
    pub token_logprobs_new: Vec<f64>,
    pub token_logprobs_old: Vec<f64>,
    #[serde(rename = "return")]
    pub ret: f64,
}

impl Trajectory {
    pub fn new(node_path: Vec<NodeId>, new: Vec<f64>, old: Vec<f64>, ret: f64) -> Result<Self, GrpoError> {
        if new.len() != old.len() {
            return Err(GrpoError::LengthMismatch(new.len(), old.len()));
        }
        if new.is_empty() {
            return Err(GrpoError::EmptyTrajectory);
        }
        Ok(Self { node_path, token_logprobs_new: new, token_logprobs_old: old, ret })
    }

    pub fn len(&self) -> usize {
        self.token_logprobs_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_logprobs_new.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutGroup {
    pub fn new(prompt_id: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self, GrpoError> {
        if trajectories.len() < 2 {
            return Err(GrpoError::GroupTooSmall(trajectories.len()));
        }
        Ok(Self { prompt_id: prompt_id.into(), trajectories })
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.ret).collect()
    }
}

pub fn token_ratio(new_lp: f64, old_lp: f64) -> f64 {
    (new_lp - old_lp).exp()
}

/// `A_i = R_i - mean(R)`.
pub fn group_advantages(returns: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if returns.len() < 2 {
        return Err(GrpoError::GroupTooSmall(returns.len()));
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(returns.iter().map(|r| r - mean).collect())
}

fn check_epsilon(eps: f64) -> Result<(), GrpoError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GrpoError::InvalidEpsilon(eps));
    }
    Ok(())
}

/// `-(1/G) sum_i sum_t min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_policy_loss(group: &RolloutGroup, eps: f64) -> Result<f64, GrpoError> {
    check_epsilon(eps)?;
    let adv = group_advantages(&group.returns())?;
    let mut total = 0.0;
    for (traj, a) in group.trajectories.iter().zip(&adv) {
        for (new, old) in traj.token_logprobs_new.iter().zip(&traj.token_logprobs_old) {
            let r = token_ratio(*new, *old);
            total += (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a);
        }
    }
    Ok(-total / group.trajectories.len() as f64)
}

/// Derivative of [`clipped_policy_loss`] with respect to every new-policy
/// token log-probability. Zero wherever the clipped branch is active.
pub fn clipped_policy_loss_grad(group: &RolloutGroup, eps: f64) -> Result<Vec<Vec<f64>>, GrpoError> {
    check_epsilon(eps)?;
    let adv = group_advantages(&group.returns())?;
    let g = group.trajectories.len() as f64;
    Ok(group
        .trajectories
        .iter()
        .zip(&adv)
        .map(|(traj, &a)| {
            traj.token_logprobs_new
                .iter()
                .zip(&traj.token_logprobs_old)
                .map(|(new, old)| {
                    let r = token_ratio(*new, *old);
                    let unclipped_active = (a >= 0.0 && r <= 1.0 + eps) || (a < 0.0 && r >= 1.0 - eps);
                    if unclipped_active {
                        -a * r / g
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// Mean of per-group losses, in input order.
pub fn batch_policy_loss(groups: &[RolloutGroup], eps: f64) -> Result<f64, GrpoError> {
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for g in groups {
        sum += clipped_policy_loss(g, eps)?;
    }
    Ok(sum / groups.len() as f64)
}

/// `beta * mean_t(exp(ref - new) - (ref - new) - 1)`.
pub fn kl_penalty(new_lp: &[f64], ref_lp: &[f64], beta: f64) -> Result<f64, GrpoError> {
    if new_lp.len() != ref_lp.len() {
        return Err(GrpoError::LengthMismatch(new_lp.len(), ref_lp.len()));
    }
    if new_lp.is_empty() || beta == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = new_lp
        .iter()
        .zip(ref_lp)
        .map(|(n, r)| {
            let d = r - n;
            // exp(d) - d - 1 via expm1 keeps tiny gaps non-negative
            (d.exp_m1() - d).max(0.0)
        })
        .sum();
    Ok(beta * sum / new_lp.len() as f64)
}

/// Telescoped shaped return `V(leaf) - V(root) + format_bonus`.
pub fn trajectory_return(
    tree: &SearchTree,
    leaf: NodeId,
    potentials: &HashMap<NodeId, Potential>,
    format_bonus: f64,
) -> Result<f64, GrpoError> {
    let node = tree.get(leaf).ok_or(GrpoError::UnknownNode(leaf))?;
    if !node.is_terminal() {
        return Err(GrpoError::NotTerminal(leaf));
    }
    let path = tree.path_from_root(leaf);
    let mut total = 0.0;
    for w in path.windows(2) {
        let vi = potentials.get(&w[0]).ok_or(GrpoError::MissingPotential(w[0]))?;
        let vj = potentials.get(&w[1]).ok_or(GrpoError::MissingPotential(w[1]))?;
        total += vj.value() - vi.value();
    }
    Ok(total + format_bonus)
}

/// Thresholds for keeping a rollout tree as a training group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    /// Exclusive lower bound on the success rate.
    pub min_success_rate: f64,
    /// Inclusive upper bound on the success rate.
    pub max_success_rate: f64,
    /// Shaped returns must spread by strictly more than this.
    pub min_reward_range: f64,
    pub max_groups_per_step: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self { min_success_rate: 0.0, max_success_rate: 0.8, min_reward_range: 1e-2, max_groups_per_step: 8 }
    }
}

/// A tree together with its success rate and shaped per-leaf returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTree {
    pub tree: SearchTree,
    pub success_rate: f64,
    /// `(terminal leaf, shaped return)` in node order; empty when the tree
    /// could not be shaped.
    pub returns: Vec<(NodeId, f64)>,
}

impl ScoredTree {
    pub fn score(tree: SearchTree, scheme: RewardScheme, format_bonus: f64) -> Result<Self, GrpoError> {
        let success_rate = tree.success_rate().unwrap_or(0.0);
        let returns = match shape_tree(&tree, scheme, &[]) {
            Ok(shaping) => tree
                .terminal_leaves()
                .into_iter()
                .map(|leaf| (leaf, shaping.path_return(&tree, leaf) + format_bonus))
                .collect(),
            Err(ShapingError::EmptyGoalSet) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { tree, success_rate, returns })
    }

    pub fn reward_range(&self) -> f64 {
        let mut it = self.returns.iter().map(|&(_, r)| r);
        let Some(first) = it.next() else { return 0.0 };
        let (lo, hi) = it.fold((first, first), |(lo, hi), r| (lo.min(r), hi.max(r)));
        hi - lo
    }
}

/// Whether a tree passes the success-rate and reward-range filters.
pub fn passes_filter(tree: &ScoredTree, policy: &FilterPolicy) -> bool {
    tree.success_rate > policy.min_success_rate
        && tree.success_rate <= policy.max_success_rate
        && tree.reward_range() > policy.min_reward_range
}

/// Indices of the trees [`filter_trees`] keeps.
pub fn filter_indices(trees: &[ScoredTree], policy: &FilterPolicy) -> Vec<usize> {
    trees
        .iter()
        .enumerate()
        .filter(|(_, t)| passes_filter(t, policy))
        .map(|(i, _)| i)
        .take(policy.max_groups_per_step)
        .collect()
}

/// Keeps trees with success rate in `(min, max]` and reward range above the
/// threshold, truncated to the first `max_groups_per_step` survivors.
pub fn filter_trees(trees: Vec<ScoredTree>, policy: &FilterPolicy) -> Vec<ScoredTree> {
    trees
        .into_iter()
        .filter(|t| passes_filter(t, policy))
        .take(policy.max_groups_per_step)
        .collect()
}

/// Builds one group from a scored tree: each terminal leaf is a trajectory;
/// more than `group_size` leaves are subsampled without replacement. Returns
/// `None` when fewer than two usable leaves exist.
pub fn build_group(
    scored: &ScoredTree,
    prompt_id: &str,
    group_size: usize,
    rng: &mut impl Rng,
) -> Option<RolloutGroup> {
    let usable: Vec<(NodeId, f64)> = scored
        .returns
        .iter()
        .copied()
        .filter(|(leaf, _)| *leaf != NodeId::ROOT)
        .collect();
    if usable.len() < 2 || group_size < 2 {
        return None;
    }
    let chosen: Vec<(NodeId, f64)> = if usable.len() > group_size {
        let mut idx = rand::seq::index::sample(rng, usable.len(), group_size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| usable[i]).collect()
    } else {
        usable
    };
    let trajectories = chosen
        .into_iter()
        .map(|(leaf, ret)| {
            let path = scored.tree.path_from_root(leaf);
            let lps: Vec<f64> = path
                .iter()
                .skip(1)
                .flat_map(|n| scored.tree.node(*n).token_logprobs.iter().copied())
                .collect();
            Trajectory::new(path, lps.clone(), lps, ret)
        })
        .collect::<Result<Vec<_>, _>>()
        .ok()?;
    RolloutGroup::new(prompt_id, trajectories).ok()
}

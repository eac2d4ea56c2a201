//! Tabular per-depth softmax policy over planted-tree choices, trained with
//! the group-relative clipped objective. Stands in for a language model when
//! comparing reward schemes at desk scale.

use rand::Rng;

use crate::env::{Candidate, PlantedTree, PolicyProvider};
use crate::geometry::{to_latent, GeoConfig};
use crate::grpo::{clipped_policy_loss, clipped_policy_loss_grad, GrpoError, RolloutGroup, Trajectory};
use crate::mcts::candidate_priors;
use crate::shaping::{shape_tree, RewardScheme, ShapingError};
use crate::tree::{EdgeStats, NodeId, SearchNode, SearchTree, Terminal, TerminalReason};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPolicy {
    logits: Vec<Vec<f64>>,
}

impl FactorizedPolicy {
    pub fn uniform(depth: usize, branching: usize) -> Self {
        Self { logits: vec![vec![0.0; branching]; depth] }
    }

    /// # Panics
    /// If `logits` is empty or its rows differ in length.
    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        assert!(!logits.is_empty() && logits.iter().all(|r| !r.is_empty() && r.len() == logits[0].len()));
        Self { logits }
    }

    /// Logits taken from the environment's own candidate log-probabilities
    /// along the planted path, one row per depth.
    pub fn from_provider_priors(env: &PlantedTree) -> Result<Self, crate::env::EnvError> {
        let spec = env.spec();
        let mut rows = Vec::with_capacity(spec.depth);
        let mut prefix = Vec::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        for d in 0..spec.depth {
            let cands: Vec<Candidate> = env.sample(&PlantedTree::state_for(&prefix), spec.branching, &mut rng)?;
            rows.push(cands.iter().map(Candidate::cumulative_logprob).collect());
            prefix.push(spec.planted_path[d]);
        }
        Ok(Self { logits: rows })
    }

    pub fn depth(&self) -> usize {
        self.logits.len()
    }

    pub fn branching(&self) -> usize {
        self.logits[0].len()
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn probs(&self, depth: usize) -> Vec<f64> {
        candidate_priors(&self.logits[depth])
    }

    pub fn log_prob(&self, depth: usize, action: usize) -> f64 {
        let row = &self.logits[depth];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[action] - lse
    }

    pub fn path_probability(&self, path: &[usize]) -> f64 {
        path.iter().enumerate().map(|(d, &a)| self.log_prob(d, a)).sum::<f64>().exp()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<usize> {
        (0..self.depth())
            .map(|d| {
                let p = self.probs(d);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return k;
                    }
                }
                p.len() - 1
            })
            .collect()
    }

    /// One descent step on the clipped group loss. Each depth contributes a
    /// single token whose old log-probability is the current one, so every
    /// ratio starts at 1. Returns the loss before the step.
    pub fn grpo_update(&mut self, paths: &[Vec<usize>], returns: &[f64], eps: f64, lr: f64) -> Result<f64, GrpoError> {
        let trajectories = paths
            .iter()
            .zip(returns)
            .map(|(p, &r)| {
                let lps: Vec<f64> = p.iter().enumerate().map(|(d, &a)| self.log_prob(d, a)).collect();
                Trajectory::new(Vec::new(), lps.clone(), lps, r)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let group = RolloutGroup::new("bandit", trajectories)?;
        let loss = clipped_policy_loss(&group, eps)?;
        let grad = clipped_policy_loss_grad(&group, eps)?;
        let mut dlogits = vec![vec![0.0; self.branching()]; self.depth()];
        for (path, g) in paths.iter().zip(&grad) {
            for (d, (&a, &gt)) in path.iter().zip(g).enumerate() {
                // d log pi(a) / d logit_k = [k == a] - pi(k)
                let p = self.probs(d);
                for (k, pk) in p.iter().enumerate() {
                    let ind = if k == a { 1.0 } else { 0.0 };
                    dlogits[d][k] += gt * (ind - pk);
                }
            }
        }
        for (row, drow) in self.logits.iter_mut().zip(dlogits) {
            for (l, dl) in row.iter_mut().zip(drow) {
                *l -= lr * dl;
            }
        }
        Ok(loss)
    }
}

/// Prefix tree spanned by sampled index paths on a planted environment, with
/// latents from the environment's embedding. Returns the tree and the leaf
/// reached by each path.
pub fn rollout_tree(env: &PlantedTree, paths: &[Vec<usize>], geo: &GeoConfig) -> (SearchTree, Vec<NodeId>) {
    let root_pooled = env.root_pooled();
    let mut tree = SearchTree::new(root_pooled.clone(), 0.5);
    let mut leaves = Vec::with_capacity(paths.len());
    for path in paths {
        let mut cur = NodeId::ROOT;
        for d in 0..path.len() {
            let action = PlantedTree::action_for(d, path[d]);
            let existing = tree.node(cur).children.iter().copied().find(|&c| tree.node(c).action == action);
            cur = match existing {
                Some(c) => c,
                None => {
                    let pooled = env.pooled_for(&path[..=d]);
                    let latent = to_latent(&pooled, &root_pooled, geo).expect("planted embedding stays finite");
                    let terminal = (d + 1 == path.len()).then(|| {
                        let correct = path[..] == env.spec().planted_path[..];
                        Terminal { reward: if correct { 1.0 } else { 0.0 }, reason: TerminalReason::Answer }
                    });
                    tree.push_child(SearchNode {
                        id: NodeId(0),
                        parent: Some(cur),
                        child_index: 0,
                        depth: d + 1,
                        action,
                        token_logprobs: vec![0.0],
                        pooled,
                        latent,
                        value_pred: 0.5,
                        terminal,
                        enabled: true,
                        children: Vec::new(),
                        edge: EdgeStats::default(),
                        potential: None,
                        step_reward: None,
                    })
                }
            };
        }
        leaves.push(cur);
    }
    (tree, leaves)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditConfig {
    pub group_size: usize,
    pub lr: f64,
    pub eps: f64,
    pub scheme: RewardScheme,
}

/// Samples a group, shapes its prefix tree under `cfg.scheme` and applies
/// one update. Groups without a verified-correct leaf carry no goal and are
/// skipped; returns whether an update happened.
pub fn train_step(
    env: &PlantedTree,
    policy: &mut FactorizedPolicy,
    cfg: &BanditConfig,
    geo: &GeoConfig,
    rng: &mut impl Rng,
) -> Result<bool, GrpoError> {
    let paths: Vec<Vec<usize>> = (0..cfg.group_size).map(|_| policy.sample(rng)).collect();
    let (tree, leaves) = rollout_tree(env, &paths, geo);
    let shaping = match shape_tree(&tree, cfg.scheme, &[]) {
        Ok(s) => s,
        Err(ShapingError::EmptyGoalSet) => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    if tree.correct_leaves().is_empty() {
        return Ok(false);
    }
    let returns: Vec<f64> = leaves.iter().map(|&l| shaping.path_return(&tree, l)).collect();
    policy.grpo_update(&paths, &returns, cfg.eps, cfg.lr)?;
    Ok(true)
}

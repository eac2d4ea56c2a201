//! Value-guided Monte Carlo Tree Search over dialogue states.
//!
//! Selection uses PUCT with `sqrt(N(s))` taken literally, so a node whose
//! children are all unvisited picks the child with the largest `Q0`. Only
//! verified terminal returns are backed up; value-head predictions enter the
//! search solely through `Q0`. Every `prune_interval` iterations the tree is
//! pruned in latent space (see [`prune`]).

mod prune;

pub use prune::{cluster_single_linkage, frontier, prune, PruneReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{DialogueState, EnvError, PolicyProvider, Verifier};
use crate::geometry::{to_latent, GeoConfig, GeoError};
use crate::tree::{EdgeStats, NodeId, SearchNode, SearchTree, Terminal, TerminalReason};
use crate::value_head::{ValueError, ValueModel};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("root node is disabled")]
    RootDisabled,
    #[error("node {node} has children but none are enabled")]
    NoEnabledChildren { node: NodeId, path: Vec<(NodeId, usize)> },
    #[error("node {0} is already expanded")]
    AlreadyExpanded(NodeId),
    #[error("node {0} is terminal")]
    TerminalLeaf(NodeId),
    #[error("node {0} is disabled")]
    Disabled(NodeId),
    #[error("node {0} is at the depth limit")]
    AtDepthLimit(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("provider failure{}: {source}", candidate.map(|c| format!(" at candidate {c}")).unwrap_or_default())]
    Provider { candidate: Option<usize>, source: EnvError },
    #[error("verifier failure at node {node}: {source}")]
    Verifier { node: NodeId, source: EnvError },
    #[error("verifier returned {0}, outside [0, 1]")]
    InvalidReturn(f64),
    #[error("path edge ({0}, {1}) does not exist")]
    InvalidPath(NodeId, usize),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Geometry(#[from] GeoError),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration { iteration: usize, source: Box<SearchError> },
}

/// Search hyperparameters. Defaults follow the published RL configuration
/// (depth 6, breadth 6, 24 simulations, prune every 8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub num_sim: usize,
    pub branching: usize,
    pub max_depth: usize,
    pub exploration_c: f64,
    pub mix_eta: f64,
    pub prune_interval: usize,
    pub prune_ratio: f64,
    pub cluster_threshold: f64,
    pub rng_seed: u64,
    /// Cumulative action-token cap before a state is length-terminal.
    pub max_action_length: usize,
    pub geo: GeoConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_sim: 24,
            branching: 6,
            max_depth: 6,
            exploration_c: 1.25,
            mix_eta: 0.5,
            prune_interval: 8,
            prune_ratio: 0.3,
            cluster_threshold: 0.1,
            rng_seed: 0,
            max_action_length: 4096,
            geo: GeoConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.num_sim == 0 || self.branching == 0 || self.max_depth == 0 || self.prune_interval == 0 {
            return bad("num_sim, branching, max_depth and prune_interval must be positive".into());
        }
        if !(self.exploration_c > 0.0 && self.exploration_c.is_finite()) {
            return bad(format!("exploration_c must be positive, got {}", self.exploration_c));
        }
        if !(0.0..=1.0).contains(&self.mix_eta) {
            return bad(format!("mix_eta must lie in [0, 1], got {}", self.mix_eta));
        }
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return bad(format!("prune_ratio must lie in [0, 1), got {}", self.prune_ratio));
        }
        if !(self.cluster_threshold > 0.0 && self.cluster_threshold.is_finite()) {
            return bad(format!("cluster_threshold must be positive, got {}", self.cluster_threshold));
        }
        self.geo.validate()?;
        Ok(())
    }
}

/// Edges traversed by one selection, as `(parent, child index)` pairs.
pub type EdgePath = Vec<(NodeId, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub path: EdgePath,
    pub leaf: NodeId,
}

/// PUCT score of one edge given the parent's total child visits.
pub fn puct_score(edge: &EdgeStats, parent_visits: u64, c: f64) -> f64 {
    edge.effective_value() + c * edge.prior * (parent_visits as f64).sqrt() / (1.0 + edge.visits as f64)
}

/// Descends from the root by PUCT over enabled children until reaching a
/// terminal or unexpanded node. Ties go to the lowest child index.
pub fn puct_select(tree: &SearchTree, cfg: &SearchConfig) -> Result<Selection, SearchError> {
    if !tree.root().enabled {
        return Err(SearchError::RootDisabled);
    }
    let mut path = Vec::new();
    let mut cur = NodeId::ROOT;
    loop {
        let node = tree.node(cur);
        if node.is_terminal() || !node.is_expanded() {
            return Ok(Selection { path, leaf: cur });
        }
        let parent_visits = tree.total_child_visits(cur);
        let mut best: Option<(usize, f64)> = None;
        for (idx, &child) in node.children.iter().enumerate() {
            let c = tree.node(child);
            if !c.enabled {
                continue;
            }
            let score = puct_score(&c.edge, parent_visits, cfg.exploration_c);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((idx, score));
            }
        }
        let Some((idx, _)) = best else {
            return Err(SearchError::NoEnabledChildren { node: cur, path });
        };
        path.push((cur, idx));
        cur = node.children[idx];
    }
}

/// Softmax over cumulative log-probabilities, with max subtraction.
pub fn candidate_priors(cum_logprobs: &[f64]) -> Vec<f64> {
    let max = cum_logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cum_logprobs.iter().map(|lp| (lp - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `Q0 = eta * f + (1 - eta) * P`.
pub fn init_edge_value(value_pred: f64, prior: f64, eta: f64) -> f64 {
    eta * value_pred + (1.0 - eta) * prior
}

/// Terminal predicate with precedence answer > length > echo > depth.
pub fn is_terminal(
    state: &DialogueState,
    depth: usize,
    provider: &dyn PolicyProvider,
    cfg: &SearchConfig,
) -> Option<TerminalReason> {
    if provider.answer_extracted(state) {
        Some(TerminalReason::Answer)
    } else if state.action_length() > cfg.max_action_length {
        Some(TerminalReason::Length)
    } else if state.last_two_identical() {
        Some(TerminalReason::Echo)
    } else if depth >= cfg.max_depth {
        Some(TerminalReason::Depth)
    } else {
        None
    }
}

fn verify_reward(verifier: &dyn Verifier, state: &DialogueState, node: NodeId) -> Result<f64, SearchError> {
    let r = verifier.verify(state).map_err(|source| SearchError::Verifier { node, source })?;
    if !(0.0..=1.0).contains(&r) {
        return Err(SearchError::InvalidReturn(r));
    }
    Ok(r)
}

/// Samples `branching` candidates at `leaf` and attaches them as children in
/// sampling order. Terminal children are labelled and verified immediately.
pub fn expand(
    tree: &mut SearchTree,
    leaf: NodeId,
    provider: &dyn PolicyProvider,
    valuer: &dyn ValueModel,
    verifier: &dyn Verifier,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>, SearchError> {
    let node = tree.get(leaf).ok_or(SearchError::UnknownNode(leaf))?;
    if node.is_terminal() {
        return Err(SearchError::TerminalLeaf(leaf));
    }
    if node.is_expanded() {
        return Err(SearchError::AlreadyExpanded(leaf));
    }
    if !tree.is_reachable(leaf) {
        return Err(SearchError::Disabled(leaf));
    }
    let depth = node.depth;
    if depth >= cfg.max_depth {
        return Err(SearchError::AtDepthLimit(leaf));
    }
    let state = tree.state_of(leaf);
    let candidates = provider
        .sample(&state, cfg.branching, rng)
        .map_err(|source| SearchError::Provider { candidate: None, source })?;
    if candidates.len() != cfg.branching {
        return Err(SearchError::Provider {
            candidate: None,
            source: EnvError::Branching { requested: cfg.branching, branching: candidates.len() },
        });
    }
    for (k, c) in candidates.iter().enumerate() {
        let bad = |m: String| SearchError::Provider { candidate: Some(k), source: EnvError::InvalidSpec(m) };
        if c.token_logprobs.is_empty() || c.token_logprobs.iter().any(|lp| !lp.is_finite()) {
            return Err(bad("candidate needs at least one finite token log-probability".into()));
        }
        if c.pooled.dim() != tree.hidden_dim() {
            return Err(bad(format!("pooled width {} != {}", c.pooled.dim(), tree.hidden_dim())));
        }
    }
    let cum: Vec<f64> = candidates.iter().map(|c| c.cumulative_logprob()).collect();
    let priors = candidate_priors(&cum);
    let root_pooled = tree.root_pooled().clone();

    let mut created = Vec::with_capacity(candidates.len());
    for (cand, prior) in candidates.into_iter().zip(priors) {
        let latent = to_latent(&cand.pooled, &root_pooled, &cfg.geo)?;
        let value_pred = valuer.predict_value(&cand.pooled)?;
        let child_state = state.child(cand.action.clone());
        let reason = is_terminal(&child_state, depth + 1, provider, cfg);
        let id = tree.push_child(SearchNode {
            id: NodeId(0),
            parent: Some(leaf),
            child_index: 0,
            depth: depth + 1,
            action: cand.action,
            token_logprobs: cand.token_logprobs,
            pooled: cand.pooled,
            latent,
            value_pred,
            terminal: None,
            enabled: true,
            children: Vec::new(),
            edge: EdgeStats {
                visits: 0,
                mean_value: 0.0,
                init_value: init_edge_value(value_pred, prior, cfg.mix_eta),
                prior,
            },
            potential: None,
            step_reward: None,
        });
        if let Some(reason) = reason {
            let reward = verify_reward(verifier, &child_state, id)?;
            tree.node_mut(id).terminal = Some(Terminal { reward, reason });
        }
        created.push(id);
    }
    Ok(created)
}

/// Running-mean update of every edge on `path` with terminal return `reward`.
pub fn backup(tree: &mut SearchTree, path: &[(NodeId, usize)], reward: f64) -> Result<(), SearchError> {
    if !(0.0..=1.0).contains(&reward) {
        return Err(SearchError::InvalidReturn(reward));
    }
    let children = path
        .iter()
        .map(|&(p, i)| {
            tree.get(p)
                .and_then(|_| tree.child(p, i))
                .ok_or(SearchError::InvalidPath(p, i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for child in children {
        let e = &mut tree.node_mut(child).edge;
        e.visits += 1;
        e.mean_value += (reward - e.mean_value) / e.visits as f64;
    }
    Ok(())
}

/// Hooks for instrumenting a search run. All methods default to no-ops.
pub trait SearchObserver {
    fn on_select(&mut self, _iteration: usize, _selection: &Selection) {}
    fn on_backup(&mut self, _iteration: usize, _path: &[(NodeId, usize)], _reward: f64) {}
    fn on_prune(&mut self, _iteration: usize, _report: &PruneReport) {}
}

pub struct NoopObserver;

impl SearchObserver for NoopObserver {}

/// Runs `num_sim` select / expand-or-backup iterations from a fresh root.
pub fn run_search(
    provider: &dyn PolicyProvider,
    valuer: &dyn ValueModel,
    verifier: &dyn Verifier,
    cfg: &SearchConfig,
) -> Result<SearchTree, SearchError> {
    run_search_observed(provider, valuer, verifier, cfg, &mut NoopObserver)
}

pub fn run_search_observed(
    provider: &dyn PolicyProvider,
    valuer: &dyn ValueModel,
    verifier: &dyn Verifier,
    cfg: &SearchConfig,
    observer: &mut dyn SearchObserver,
) -> Result<SearchTree, SearchError> {
    cfg.validate()?;
    let root_pooled = provider.root_pooled();
    if root_pooled.dim() != provider.hidden_dim() {
        return Err(SearchError::Provider {
            candidate: None,
            source: EnvError::InvalidSpec("root pooled width differs from hidden_dim".into()),
        });
    }
    let root_value = valuer.predict_value(&root_pooled)?;
    let mut tree = SearchTree::new(root_pooled, root_value);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    for n in 1..=cfg.num_sim {
        iterate(&mut tree, n, provider, valuer, verifier, cfg, &mut rng, observer)
            .map_err(|e| SearchError::AtIteration { iteration: n, source: Box::new(e) })?;
        if n % cfg.prune_interval == 0 {
            let report = prune(&mut tree, cfg)?;
            observer.on_prune(n, &report);
        }
    }
    Ok(tree)
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    tree: &mut SearchTree,
    n: usize,
    provider: &dyn PolicyProvider,
    valuer: &dyn ValueModel,
    verifier: &dyn Verifier,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
    observer: &mut dyn SearchObserver,
) -> Result<(), SearchError> {
    let selection = match puct_select(tree, cfg) {
        Ok(s) => s,
        Err(SearchError::NoEnabledChildren { node, path }) => {
            // every child was pruned away: the node becomes a zero-reward terminal
            tree.node_mut(node).terminal = Some(Terminal { reward: 0.0, reason: TerminalReason::PrunedDeadEnd });
            let selection = Selection { path, leaf: node };
            observer.on_select(n, &selection);
            backup(tree, &selection.path, 0.0)?;
            observer.on_backup(n, &selection.path, 0.0);
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    observer.on_select(n, &selection);
    let leaf = selection.leaf;

    if let Some(t) = tree.node(leaf).terminal {
        backup(tree, &selection.path, t.reward)?;
        observer.on_backup(n, &selection.path, t.reward);
        return Ok(());
    }
    if tree.node(leaf).depth >= cfg.max_depth {
        // only reachable when the root itself sits at the limit
        return Ok(());
    }
    let children = expand(tree, leaf, provider, valuer, verifier, cfg, rng)?;
    for (idx, child) in children.into_iter().enumerate() {
        if let Some(t) = tree.node(child).terminal {
            let mut path = selection.path.clone();
            path.push((leaf, idx));
            backup(tree, &path, t.reward)?;
            observer.on_backup(n, &path, t.reward);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;

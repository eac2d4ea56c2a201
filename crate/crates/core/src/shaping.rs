//! Potential-based reward shaping over a finished search tree.
//!
//! A node's potential is `d_root / (d_root + d_goal)` where `d_goal` is the
//! distance to the closest goal latent (verified-correct leaves, optionally
//! augmented with annotation anchors). Edge rewards are potential
//! differences, so rewards along any root-to-leaf path telescope to
//! `V(leaf) - V(root)`.
//!
//! The `sparse01` scheme has no potential: an edge earns 1 exactly when its
//! child lies on some verified-correct path.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{euclidean_distance, geodesic_distance, BallPoint, GeoError};
use crate::tree::{NodeId, SearchTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapingError {
    #[error("goal set is empty; refusing to shape a tree without verified-correct leaves")]
    EmptyGoalSet,
    #[error("scheme `{0}` defines no distance")]
    NoMetric(RewardScheme),
    #[error("node {0} is not a terminal leaf of this tree")]
    UnknownLeaf(NodeId),
    #[error(transparent)]
    Geometry(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardScheme {
    Poincare,
    Euclidean,
    Sparse01,
}

impl RewardScheme {
    pub const ALL: [RewardScheme; 3] = [RewardScheme::Poincare, RewardScheme::Euclidean, RewardScheme::Sparse01];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardScheme::Poincare => "poincare",
            RewardScheme::Euclidean => "euclidean",
            RewardScheme::Sparse01 => "sparse01",
        }
    }

    pub fn has_potential(self) -> bool {
        !matches!(self, RewardScheme::Sparse01)
    }

    fn distance(self, u: &BallPoint, v: &BallPoint) -> Result<f64, ShapingError> {
        match self {
            RewardScheme::Poincare => Ok(geodesic_distance(u, v)?),
            RewardScheme::Euclidean => Ok(euclidean_distance(u, v)?),
            RewardScheme::Sparse01 => Err(ShapingError::NoMetric(self)),
        }
    }
}

impl fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "poincare" => Ok(RewardScheme::Poincare),
            "euclidean" => Ok(RewardScheme::Euclidean),
            "sparse01" => Ok(RewardScheme::Sparse01),
            other => Err(format!("unknown reward scheme `{other}` (expected poincare, euclidean or sparse01)")),
        }
    }
}

/// Bounded progress score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Potential(f64);

impl Potential {
    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoalSet {
    latents: Vec<BallPoint>,
}

impl GoalSet {
    pub fn new(latents: Vec<BallPoint>) -> Self {
        Self { latents }
    }

    /// Latents of the tree's verified-correct terminal leaves.
    pub fn from_tree(tree: &SearchTree) -> Self {
        Self::new(tree.correct_leaves().into_iter().map(|id| tree.node(id).latent.clone()).collect())
    }

    pub fn latents(&self) -> &[BallPoint] {
        &self.latents
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Union of verified goals and annotation anchors.
pub fn extend_goal_anchors(goals: &GoalSet, anchors: &[BallPoint]) -> GoalSet {
    let mut latents = goals.latents.clone();
    latents.extend(anchors.iter().cloned());
    GoalSet { latents }
}

pub fn goal_distance(y: &BallPoint, goals: &GoalSet, scheme: RewardScheme) -> Result<f64, ShapingError> {
    if goals.is_empty() {
        return Err(ShapingError::EmptyGoalSet);
    }
    let mut best = f64::INFINITY;
    for g in &goals.latents {
        best = best.min(scheme.distance(y, g)?);
    }
    Ok(best)
}

pub fn root_distance(y: &BallPoint, scheme: RewardScheme) -> Result<f64, ShapingError> {
    scheme.distance(y, &BallPoint::origin(y.dim()))
}

pub fn potential(y: &BallPoint, goals: &GoalSet, scheme: RewardScheme) -> Result<Potential, ShapingError> {
    let d_goal = goal_distance(y, goals, scheme)?;
    let d_root = root_distance(y, scheme)?;
    potential_from_distances(d_root, d_goal)
}

fn potential_from_distances(d_root: f64, d_goal: f64) -> Result<Potential, ShapingError> {
    let total = d_root + d_goal;
    if total == 0.0 {
        warn!("root latent coincides with a goal latent; potential set to 1");
        return Ok(Potential(1.0));
    }
    // goal latents are hit exactly (d_goal == 0) so the ratio is exactly 1 there
    Ok(Potential((d_root / total).clamp(0.0, 1.0)))
}

pub fn step_reward(v_i: Potential, v_j: Potential) -> f64 {
    v_j.0 - v_i.0
}

/// Non-root nodes lying on at least one root-to-correct-leaf path.
pub fn success_path_set(tree: &SearchTree, correct_leaves: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>, ShapingError> {
    let mut out = BTreeSet::new();
    for &leaf in correct_leaves {
        if !tree.get(leaf).is_some_and(|n| n.is_terminal()) {
            return Err(ShapingError::UnknownLeaf(leaf));
        }
        out.extend(tree.path_from_root(leaf).into_iter().skip(1));
    }
    Ok(out)
}

pub fn sparse_step_reward(j: NodeId, p_plus: &BTreeSet<NodeId>) -> f64 {
    if p_plus.contains(&j) {
        1.0
    } else {
        0.0
    }
}

/// Result of one shaping pass, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Shaping {
    pub scheme: RewardScheme,
    /// `None` for the sparse scheme.
    pub potentials: Option<Vec<Potential>>,
    /// Reward on each node's incoming edge; `None` at the root.
    pub edge_rewards: Vec<Option<f64>>,
    pub success_path: BTreeSet<NodeId>,
}

impl Shaping {
    pub fn potential(&self, id: NodeId) -> Option<Potential> {
        self.potentials.as_ref().map(|p| p[id.0])
    }

    /// Sum of edge rewards from the root down to `id`.
    pub fn path_return(&self, tree: &SearchTree, id: NodeId) -> f64 {
        tree.path_from_root(id).iter().skip(1).map(|n| self.edge_rewards[n.0].unwrap_or(0.0)).sum()
    }

    /// Writes potentials and step rewards onto the tree's nodes.
    pub fn annotate(&self, tree: &mut SearchTree) {
        for node in tree.nodes_mut() {
            node.potential = self.potentials.as_ref().map(|p| p[node.id.0].0);
            node.step_reward = self.edge_rewards[node.id.0];
        }
    }
}

/// Shapes every node of `tree` in one pass. Goal latents are the tree's
/// verified-correct leaves plus `anchors`.
pub fn shape_tree(tree: &SearchTree, scheme: RewardScheme, anchors: &[BallPoint]) -> Result<Shaping, ShapingError> {
    let correct = tree.correct_leaves();
    let success_path = success_path_set(tree, &correct)?;
    let (potentials, edge_rewards) = if scheme.has_potential() {
        let goals = extend_goal_anchors(&GoalSet::from_tree(tree), anchors);
        if goals.is_empty() {
            return Err(ShapingError::EmptyGoalSet);
        }
        let pots = tree
            .nodes()
            .map(|n| potential(&n.latent, &goals, scheme))
            .collect::<Result<Vec<_>, _>>()?;
        let rewards = tree
            .nodes()
            .map(|n| n.parent.map(|p| step_reward(pots[p.0], pots[n.id.0])))
            .collect();
        (Some(pots), rewards)
    } else {
        let rewards = tree
            .nodes()
            .map(|n| n.parent.map(|_| sparse_step_reward(n.id, &success_path)))
            .collect();
        (None, rewards)
    };
    Ok(Shaping { scheme, potentials, edge_rewards, success_path })
}

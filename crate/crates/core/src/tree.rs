//! Search tree storage: nodes live in a dense arena indexed by [`NodeId`].
//!
//! Every non-root node owns the statistics of its incoming edge, so the
//! `(parent, child_index)` pair and the child node address the same edge.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{ActionLabel, DialogueState};
use crate::geometry::{AmbientVector, BallPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Statistics of the edge entering a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub visits: u64,
    /// Running mean of terminal returns; 0 until the first backup.
    pub mean_value: f64,
    /// Selection value used while `visits == 0`.
    pub init_value: f64,
    pub prior: f64,
}

impl Default for EdgeStats {
    fn default() -> Self {
        Self { visits: 0, mean_value: 0.0, init_value: 0.0, prior: 1.0 }
    }
}

impl EdgeStats {
    /// `Q` once visited, `Q0` before.
    pub fn effective_value(&self) -> f64 {
        if self.visits > 0 {
            self.mean_value
        } else {
            self.init_value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Answer,
    Depth,
    Echo,
    Length,
    /// Every child was disabled by pruning.
    PrunedDeadEnd,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::Answer => "answer",
            TerminalReason::Depth => "depth",
            TerminalReason::Echo => "echo",
            TerminalReason::Length => "length",
            TerminalReason::PrunedDeadEnd => "pruned_dead_end",
        }
    }
}

impl fmt::Display for TerminalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerminalReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "answer" => TerminalReason::Answer,
            "depth" => TerminalReason::Depth,
            "echo" => TerminalReason::Echo,
            "length" => TerminalReason::Length,
            "pruned_dead_end" => TerminalReason::PrunedDeadEnd,
            other => return Err(format!("unknown terminal reason `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub reward: f64,
    pub reason: TerminalReason,
}

impl Terminal {
    pub fn is_correct(&self) -> bool {
        self.reward >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Position among the parent's children (candidate sampling order).
    pub child_index: usize,
    pub depth: usize,
    pub action: ActionLabel,
    pub token_logprobs: Vec<f64>,
    pub pooled: AmbientVector,
    pub latent: BallPoint,
    pub value_pred: f64,
    pub terminal: Option<Terminal>,
    pub enabled: bool,
    pub children: Vec<NodeId>,
    pub edge: EdgeStats,
    /// Filled in by a shaping pass.
    pub potential: Option<f64>,
    /// Reward on the incoming edge, filled in by a shaping pass.
    pub step_reward: Option<f64>,
}

impl SearchNode {
    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }

    pub fn is_expanded(&self) -> bool {
        !self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    root_pooled: AmbientVector,
}

impl SearchTree {
    pub fn new(root_pooled: AmbientVector, root_value_pred: f64) -> Self {
        let dim = root_pooled.dim();
        let root = SearchNode {
            id: NodeId::ROOT,
            parent: None,
            child_index: 0,
            depth: 0,
            action: ActionLabel::default(),
            token_logprobs: Vec::new(),
            pooled: root_pooled.clone(),
            latent: BallPoint::origin(dim),
            value_pred: root_value_pred,
            terminal: None,
            enabled: true,
            children: Vec::new(),
            edge: EdgeStats::default(),
            potential: None,
            step_reward: None,
        };
        Self { nodes: vec![root], root_pooled }
    }

    /// Rebuilds a tree from nodes that are already in id order.
    pub(crate) fn from_parts(nodes: Vec<SearchNode>, root_pooled: AmbientVector) -> Self {
        Self { nodes, root_pooled }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn root_pooled(&self) -> &AmbientVector {
        &self.root_pooled
    }

    pub fn hidden_dim(&self) -> usize {
        self.root_pooled.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&SearchNode> {
        self.nodes.get(id.0)
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter()
    }

    pub(crate) fn nodes_mut(&mut self) -> impl Iterator<Item = &mut SearchNode> {
        self.nodes.iter_mut()
    }

    pub(crate) fn push_child(&mut self, mut node: SearchNode) -> NodeId {
        let parent = node.parent.expect("children always have a parent");
        let id = NodeId(self.nodes.len());
        node.id = id;
        node.child_index = self.nodes[parent.0].children.len();
        self.nodes[parent.0].children.push(id);
        self.nodes.push(node);
        id
    }

    /// Child at `index` of `parent`.
    pub fn child(&self, parent: NodeId, index: usize) -> Option<NodeId> {
        self.nodes[parent.0].children.get(index).copied()
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Action history leading to `id`.
    pub fn state_of(&self, id: NodeId) -> DialogueState {
        let actions = self
            .path_from_root(id)
            .into_iter()
            .skip(1)
            .map(|n| self.nodes[n.0].action.clone())
            .collect();
        DialogueState::new(actions)
    }

    /// True when the node and all of its ancestors are enabled.
    pub fn is_reachable(&self, id: NodeId) -> bool {
        self.path_from_root(id).iter().all(|n| self.nodes[n.0].enabled)
    }

    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.nodes[id.0].children.iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n.0].children.iter().rev().copied());
        }
        out
    }

    pub fn terminal_leaves(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.is_terminal()).map(|n| n.id).collect()
    }

    pub fn correct_leaves(&self) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.terminal.is_some_and(|t| t.is_correct()))
            .map(|n| n.id)
            .collect()
    }

    /// Fraction of terminal nodes verified correct; `None` without terminals.
    pub fn success_rate(&self) -> Option<f64> {
        let terminals = self.terminal_leaves().len();
        if terminals == 0 {
            return None;
        }
        Some(self.correct_leaves().len() as f64 / terminals as f64)
    }

    /// Sum of visit counts over outgoing edges, `N(s)`.
    pub fn total_child_visits(&self, id: NodeId) -> u64 {
        self.nodes[id.0].children.iter().map(|c| self.nodes[c.0].edge.visits).sum()
    }
}

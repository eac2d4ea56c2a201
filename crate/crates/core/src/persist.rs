//! Line-delimited JSON file formats.
//!
//! A tree file starts with a header record followed by one record per node in
//! id order, so parents always precede their children and a single pass
//! rebuilds the tree. Floats go through shortest round-trip formatting and a
//! correctly rounded parser, which makes dump/load bit-exact.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ActionLabel;
use crate::geometry::{geodesic_distance_with, AmbientVector, BallPoint, GeoConfig, GeoError};
use crate::grpo::RolloutGroup;
use crate::tree::{EdgeStats, NodeId, SearchNode, SearchTree, Terminal, TerminalReason};
use crate::value_head::ValueHead;

pub const TREE_SCHEMA: &str = "hyperlatent.tree";
pub const TREE_VERSION: u64 = 1;
pub const HEAD_SCHEMA: &str = "hyperlatent.value_head";
pub const DISK_SCHEMA: &str = "hyperlatent.disk";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema version {}", .found.map(|v| v.to_string()).unwrap_or_else(|| "(missing)".into()))]
    VersionMismatch { found: Option<u64> },
    #[error(transparent)]
    Geometry(#[from] GeoError),
}

fn parse_err(line: usize, message: impl Into<String>) -> PersistError {
    PersistError::Parse { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeHeader {
    schema: String,
    version: u64,
    hidden_dim: usize,
    node_count: usize,
    root_pooled: Vec<f64>,
}

/// One node of a serialized tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeRecord {
    pub node_id: usize,
    pub parent_id: Option<usize>,
    pub child_index: usize,
    pub depth: usize,
    pub enabled: bool,
    pub terminal_reason: Option<TerminalReason>,
    pub terminal_reward: Option<f64>,
    #[serde(rename = "N")]
    pub visits: u64,
    #[serde(rename = "Q")]
    pub mean_value: f64,
    #[serde(rename = "Q0")]
    pub init_value: f64,
    #[serde(rename = "P")]
    pub prior: f64,
    pub value_pred: f64,
    pub potential: Option<f64>,
    pub step_reward: Option<f64>,
    pub action: Vec<u32>,
    pub token_logprobs: Vec<f64>,
    pub pooled: Vec<f64>,
    pub latent_coords: Vec<f64>,
}

impl TreeRecord {
    pub fn from_node(n: &SearchNode) -> Self {
        Self {
            node_id: n.id.0,
            parent_id: n.parent.map(|p| p.0),
            child_index: n.child_index,
            depth: n.depth,
            enabled: n.enabled,
            terminal_reason: n.terminal.map(|t| t.reason),
            terminal_reward: n.terminal.map(|t| t.reward),
            visits: n.edge.visits,
            mean_value: n.edge.mean_value,
            init_value: n.edge.init_value,
            prior: n.edge.prior,
            value_pred: n.value_pred,
            potential: n.potential,
            step_reward: n.step_reward,
            action: n.action.0.clone(),
            token_logprobs: n.token_logprobs.clone(),
            pooled: n.pooled.as_slice().to_vec(),
            latent_coords: n.latent.coords().to_vec(),
        }
    }
}

/// Serializes a tree to its line-delimited text form.
pub fn dump_tree_string(tree: &SearchTree) -> String {
    let header = TreeHeader {
        schema: TREE_SCHEMA.into(),
        version: TREE_VERSION,
        hidden_dim: tree.hidden_dim(),
        node_count: tree.len(),
        root_pooled: tree.root_pooled().as_slice().to_vec(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for node in tree.nodes() {
        out.push_str(&serde_json::to_string(&TreeRecord::from_node(node)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PersistError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| PersistError::Io(e.error))?;
    Ok(())
}

pub fn dump_tree(tree: &SearchTree, path: &Path) -> Result<(), PersistError> {
    write_atomic(path, dump_tree_string(tree).as_bytes())
}

pub fn load_tree(path: &Path) -> Result<SearchTree, PersistError> {
    load_tree_str(&fs::read_to_string(path)?)
}

pub fn load_tree_str(text: &str) -> Result<SearchTree, PersistError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(TREE_VERSION) => {}
        found => return Err(PersistError::VersionMismatch { found }),
    }
    let header: TreeHeader = serde_json::from_value(raw).map_err(|e| parse_err(1, e.to_string()))?;
    if header.schema != TREE_SCHEMA {
        return Err(parse_err(1, format!("unexpected schema `{}`", header.schema)));
    }
    if header.root_pooled.len() != header.hidden_dim {
        return Err(parse_err(1, "root_pooled width differs from hidden_dim"));
    }
    let root_pooled = AmbientVector::new(header.root_pooled).map_err(|e| parse_err(1, e.to_string()))?;

    let mut nodes: Vec<SearchNode> = Vec::with_capacity(header.node_count);
    let mut last_line = 1;
    for (line, text) in lines {
        last_line = line;
        if nodes.len() == header.node_count {
            if text.trim().is_empty() {
                continue;
            }
            return Err(parse_err(line, "more records than the header declares"));
        }
        let rec: TreeRecord = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
        let node = node_from_record(rec, &nodes, header.hidden_dim).map_err(|m| parse_err(line, m))?;
        if let Some(p) = node.parent {
            nodes[p.0].children.push(node.id);
        }
        nodes.push(node);
    }
    if nodes.len() != header.node_count {
        return Err(parse_err(
            last_line + 1,
            format!("truncated file: expected {} node records, found {}", header.node_count, nodes.len()),
        ));
    }
    Ok(SearchTree::from_parts(nodes, root_pooled))
}

fn node_from_record(rec: TreeRecord, prior_nodes: &[SearchNode], dim: usize) -> Result<SearchNode, String> {
    let id = prior_nodes.len();
    if rec.node_id != id {
        return Err(format!("expected node_id {id}, found {}", rec.node_id));
    }
    match (id, rec.parent_id) {
        (0, None) => {}
        (0, Some(_)) => return Err("root record must not have a parent".into()),
        (_, None) => return Err("non-root record without parent".into()),
        (_, Some(p)) if p >= id => return Err(format!("parent {p} does not precede child {id}")),
        (_, Some(p)) => {
            let siblings = prior_nodes[p].children.len();
            if rec.child_index != siblings {
                return Err(format!("child_index {} but parent has {siblings} earlier children", rec.child_index));
            }
            if rec.depth != prior_nodes[p].depth + 1 {
                return Err(format!("depth {} inconsistent with parent depth", rec.depth));
            }
        }
    }
    let terminal = match (rec.terminal_reason, rec.terminal_reward) {
        (Some(reason), Some(reward)) => Some(Terminal { reward, reason }),
        (None, None) => None,
        _ => return Err("terminal_reason and terminal_reward must both be present or both null".into()),
    };
    if rec.pooled.len() != dim || rec.latent_coords.len() != dim {
        return Err(format!("vector width differs from hidden_dim {dim}"));
    }
    Ok(SearchNode {
        id: NodeId(id),
        parent: rec.parent_id.map(NodeId),
        child_index: rec.child_index,
        depth: rec.depth,
        action: ActionLabel(rec.action),
        token_logprobs: rec.token_logprobs,
        pooled: AmbientVector::new(rec.pooled).map_err(|e| e.to_string())?,
        latent: BallPoint::new(rec.latent_coords).map_err(|e| e.to_string())?,
        value_pred: rec.value_pred,
        terminal,
        enabled: rec.enabled,
        children: Vec::new(),
        edge: EdgeStats {
            visits: rec.visits,
            mean_value: rec.mean_value,
            init_value: rec.init_value,
            prior: rec.prior,
        },
        potential: rec.potential,
        step_reward: rec.step_reward,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadRecord {
    schema: String,
    version: u64,
    weights: Vec<f64>,
    bias: f64,
}

pub fn value_head_string(head: &ValueHead) -> String {
    let rec = HeadRecord {
        schema: HEAD_SCHEMA.into(),
        version: 1,
        weights: head.weights.clone(),
        bias: head.bias,
    };
    let mut s = serde_json::to_string(&rec).expect("head serializes");
    s.push('\n');
    s
}

pub fn save_value_head(head: &ValueHead, path: &Path) -> Result<(), PersistError> {
    write_atomic(path, value_head_string(head).as_bytes())
}

pub fn load_value_head(path: &Path) -> Result<ValueHead, PersistError> {
    let text = fs::read_to_string(path)?;
    let line = text.lines().next().ok_or_else(|| parse_err(1, "empty checkpoint"))?;
    let raw: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(1, e.to_string()))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(1) => {}
        found => return Err(PersistError::VersionMismatch { found }),
    }
    let rec: HeadRecord = serde_json::from_value(raw).map_err(|e| parse_err(1, e.to_string()))?;
    if rec.schema != HEAD_SCHEMA {
        return Err(parse_err(1, format!("unexpected schema `{}`", rec.schema)));
    }
    Ok(ValueHead { weights: rec.weights, bias: rec.bias })
}

/// One group per line.
pub fn groups_string(groups: &[RolloutGroup]) -> String {
    groups
        .iter()
        .map(|g| serde_json::to_string(g).expect("group serializes") + "\n")
        .collect()
}

pub fn parse_groups(text: &str) -> Result<Vec<RolloutGroup>, PersistError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiskRecord {
    Header { schema: String, version: u64, node_count: usize, hidden_dim: usize },
    Node { node_id: usize, latent: Vec<f64>, dist_to_root: f64, potential: Option<f64>, value_pred: f64 },
    Row { node_id: usize, distances: Vec<f64> },
}

/// Per-node latents plus the full pairwise geodesic distance matrix, for
/// 2-D layout by external tools.
pub fn disk_records(tree: &SearchTree, geo: &GeoConfig) -> Result<Vec<DiskRecord>, PersistError> {
    let origin = BallPoint::origin(tree.hidden_dim());
    let mut out = vec![DiskRecord::Header {
        schema: DISK_SCHEMA.into(),
        version: 1,
        node_count: tree.len(),
        hidden_dim: tree.hidden_dim(),
    }];
    for n in tree.nodes() {
        out.push(DiskRecord::Node {
            node_id: n.id.0,
            latent: n.latent.coords().to_vec(),
            dist_to_root: geodesic_distance_with(&n.latent, &origin, geo)?,
            potential: n.potential,
            value_pred: n.value_pred,
        });
    }
    let points: Vec<&BallPoint> = tree.nodes().map(|n| &n.latent).collect();
    let matrix = crate::geometry::pairwise_geodesic(&points, geo)?;
    for (i, row) in matrix.into_iter().enumerate() {
        out.push(DiskRecord::Row { node_id: i, distances: row });
    }
    Ok(out)
}

pub fn disk_string(tree: &SearchTree, geo: &GeoConfig) -> Result<String, PersistError> {
    Ok(disk_records(tree, geo)?
        .iter()
        .map(|r| serde_json::to_string(r).expect("disk record serializes") + "\n")
        .collect())
}

pub fn parse_disk(text: &str) -> Result<Vec<DiskRecord>, PersistError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_tree() -> SearchTree {
        let mut t = SearchTree::new(AmbientVector::new(vec![0.1, -0.2]).unwrap(), 0.5);
        let child = SearchNode {
            id: NodeId(0),
            parent: Some(NodeId::ROOT),
            child_index: 0,
            depth: 1,
            action: ActionLabel(vec![3, 1]),
            token_logprobs: vec![-0.1, -0.7],
            pooled: AmbientVector::new(vec![1.0 / 3.0, 2.5e-300]).unwrap(),
            latent: BallPoint::new(vec![0.123_456_789_012_345_68, -0.0]).unwrap(),
            value_pred: 0.61,
            terminal: Some(Terminal { reward: 1.0, reason: TerminalReason::Answer }),
            enabled: false,
            children: vec![],
            edge: EdgeStats { visits: 3, mean_value: 2.0 / 3.0, init_value: 0.4, prior: 0.3 },
            potential: Some(1.0),
            step_reward: Some(1.0),
        };
        t.push_child(child);
        t
    }

    #[test]
    fn round_trip_is_exact() {
        let t = small_tree();
        let back = load_tree_str(&dump_tree_string(&t)).unwrap();
        assert_eq!(back, t);
        assert_eq!(dump_tree_string(&back), dump_tree_string(&t));
    }

    #[test]
    fn truncated_file_names_the_line() {
        let text = dump_tree_string(&small_tree());
        let first_two: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        match load_tree_str(&first_two) {
            Err(PersistError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let cut = &text[..text.len() - 20];
        match load_tree_str(cut) {
            Err(PersistError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_version_is_rejected() {
        let text = dump_tree_string(&small_tree()).replacen("\"version\":1,", "", 1);
        assert!(matches!(load_tree_str(&text), Err(PersistError::VersionMismatch { found: None })));
        let text = dump_tree_string(&small_tree()).replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(load_tree_str(&text), Err(PersistError::VersionMismatch { found: Some(7) })));
    }

    #[test]
    fn unknown_record_fields_rejected() {
        let text = dump_tree_string(&small_tree()).replacen("\"depth\":1", "\"depth\":1,\"extra\":0", 1);
        assert!(matches!(load_tree_str(&text), Err(PersistError::Parse { line: 3, .. })));
    }

    #[test]
    fn value_head_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        let head = ValueHead { weights: vec![0.1, 1.0 / 7.0, -3e-17], bias: -0.25 };
        save_value_head(&head, &path).unwrap();
        assert_eq!(load_value_head(&path).unwrap(), head);
    }

    #[test]
    fn disk_export_shape() {
        let t = small_tree();
        let recs = parse_disk(&disk_string(&t, &GeoConfig::default()).unwrap()).unwrap();
        assert_eq!(recs.len(), 1 + 2 * t.len());
        match &recs[1] {
            DiskRecord::Node { dist_to_root, .. } => assert_eq!(*dist_to_root, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}

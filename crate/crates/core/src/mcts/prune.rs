//! Latent-space pruning of near-duplicate branches.
//!
//! Enabled non-terminal nodes are grouped by single-linkage clustering on
//! their pairwise geodesic distances (merge when `d <= tau`). Inside every
//! cluster with more than one member, the `floor(rho * (|C| - 1))` members
//! with the lowest value predictions are disabled together with their
//! subtrees. The root is never disabled and every cluster keeps at least
//! one enabled member.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::{SearchConfig, SearchError};
use crate::geometry::{geodesic_distance_with, BallPoint, GeoConfig, GeoError};
use crate::tree::{NodeId, SearchTree};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub clusters: usize,
    /// Nodes disabled directly by the ratio rule.
    pub disabled: usize,
    pub disabled_nodes: Vec<NodeId>,
    /// Descendants switched off along with `disabled_nodes`.
    pub descendants_disabled: usize,
    /// Expandable nodes remaining after the prune.
    pub frontier: usize,
}

/// Connected components of the graph `{(i, j) : d(i, j) <= tau}`, each
/// sorted ascending and ordered by their smallest member.
pub fn cluster_single_linkage(points: &[&BallPoint], tau: f64, geo: &GeoConfig) -> Result<Vec<Vec<usize>>, GeoError> {
    let n = points.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if geodesic_distance_with(points[i], points[j], geo)? <= tau {
                uf.union(i, j);
            }
        }
    }
    let labels = uf.into_labeling();
    let mut by_label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match by_label[l] {
            Some(c) => clusters[c].push(i),
            None => {
                by_label[l] = Some(clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    Ok(clusters)
}

/// Enabled, reachable, non-terminal, unexpanded nodes below the depth limit.
pub fn frontier(tree: &SearchTree, cfg: &SearchConfig) -> Vec<NodeId> {
    tree.nodes()
        .filter(|n| n.enabled && !n.is_terminal() && !n.is_expanded() && n.depth < cfg.max_depth)
        .filter(|n| tree.is_reachable(n.id))
        .map(|n| n.id)
        .collect()
}

pub fn prune(tree: &mut SearchTree, cfg: &SearchConfig) -> Result<PruneReport, SearchError> {
    let members: Vec<NodeId> = tree
        .nodes()
        .filter(|n| n.enabled && !n.is_terminal())
        .map(|n| n.id)
        .collect();
    let points: Vec<&BallPoint> = members.iter().map(|&id| &tree.node(id).latent).collect();
    let clusters = cluster_single_linkage(&points, cfg.cluster_threshold, &cfg.geo)?;

    let mut report = PruneReport { clusters: clusters.len(), ..Default::default() };
    for cluster in &clusters {
        if cluster.len() < 2 {
            continue;
        }
        let quota = (cfg.prune_ratio * (cluster.len() - 1) as f64).floor() as usize;
        if quota == 0 {
            continue;
        }
        let ids: Vec<NodeId> = cluster.iter().map(|&i| members[i]).collect();
        let mut candidates: Vec<NodeId> = ids.iter().copied().filter(|&id| id != NodeId::ROOT).collect();
        // lowest value first; among equals the most recently created goes first
        candidates.sort_by(|a, b| {
            tree.node(*a)
                .value_pred
                .total_cmp(&tree.node(*b).value_pred)
                .then(b.cmp(a))
        });
        let mut done = 0;
        for id in candidates {
            if done == quota {
                break;
            }
            if !tree.node(id).enabled {
                continue;
            }
            let subtree = tree.descendants(id);
            let survivors = ids
                .iter()
                .filter(|&&m| m != id && tree.node(m).enabled && !subtree.contains(&m))
                .count();
            if survivors == 0 {
                continue;
            }
            tree.node_mut(id).enabled = false;
            for d in subtree {
                let node = tree.node_mut(d);
                if node.enabled {
                    node.enabled = false;
                    report.descendants_disabled += 1;
                }
            }
            report.disabled_nodes.push(id);
            done += 1;
        }
        report.disabled += done;
    }
    report.frontier = frontier(tree, cfg).len();
    Ok(report)
}

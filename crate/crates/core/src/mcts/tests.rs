use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::RngCore;

use super::*;
use crate::env::{ActionLabel, Candidate, PlantedTree, PlantedTreeSpec};
use crate::geometry::{AmbientVector, BallPoint};
use crate::value_head::ValueHead;

fn child(tree: &mut SearchTree, parent: NodeId, coords: &[f64], value_pred: f64, edge: EdgeStats) -> NodeId {
    let depth = tree.node(parent).depth + 1;
    tree.push_child(SearchNode {
        id: NodeId(0),
        parent: Some(parent),
        child_index: 0,
        depth,
        action: ActionLabel(vec![depth as u32, tree.node(parent).children.len() as u32]),
        token_logprobs: vec![-1.0],
        pooled: AmbientVector::new(coords.to_vec()).unwrap(),
        latent: BallPoint::new(coords.to_vec()).unwrap(),
        value_pred,
        terminal: None,
        enabled: true,
        children: Vec::new(),
        edge,
        potential: None,
        step_reward: None,
    })
}

fn edge(visits: u64, q: f64, q0: f64, prior: f64) -> EdgeStats {
    EdgeStats { visits, mean_value: q, init_value: q0, prior }
}

fn root2() -> SearchTree {
    SearchTree::new(AmbientVector::zeros(2), 0.5)
}

fn planted(b: usize, d: usize, path: Vec<usize>, noise: f64, seed: u64) -> PlantedTree {
    PlantedTree::new(PlantedTreeSpec::new(b, d, path, noise), seed).unwrap()
}

#[derive(Default)]
struct Trace {
    selections: Vec<Selection>,
    backups: Vec<(Vec<(NodeId, usize)>, f64)>,
    prunes: Vec<(usize, PruneReport)>,
}

impl SearchObserver for Trace {
    fn on_select(&mut self, _n: usize, s: &Selection) {
        self.selections.push(s.clone());
    }
    fn on_backup(&mut self, _n: usize, path: &[(NodeId, usize)], r: f64) {
        self.backups.push((path.to_vec(), r));
    }
    fn on_prune(&mut self, n: usize, report: &PruneReport) {
        self.prunes.push((n, report.clone()));
    }
}

#[test]
fn puct_score_worked_example() {
    let s0 = puct_score(&edge(1, 0.5, 0.0, 0.9), 2, 1.0);
    let s1 = puct_score(&edge(1, 0.5, 0.0, 0.1), 2, 1.0);
    assert_abs_diff_eq!(s0, 0.5 + 0.9 * 2f64.sqrt() / 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(s0, 1.1364, epsilon = 1e-4);
    assert_abs_diff_eq!(s1, 0.5707, epsilon = 1e-4);

    let mut t = root2();
    child(&mut t, NodeId::ROOT, &[0.1, 0.0], 0.5, edge(1, 0.5, 0.0, 0.9));
    child(&mut t, NodeId::ROOT, &[0.0, 0.1], 0.5, edge(1, 0.5, 0.0, 0.1));
    let cfg = SearchConfig { exploration_c: 1.0, ..Default::default() };
    assert_eq!(puct_select(&t, &cfg).unwrap().path, vec![(NodeId::ROOT, 0)]);
}

#[test]
fn unvisited_children_select_by_initial_value() {
    let mut t = root2();
    child(&mut t, NodeId::ROOT, &[0.1, 0.0], 0.5, edge(0, 0.0, 0.3, 0.9));
    child(&mut t, NodeId::ROOT, &[0.0, 0.1], 0.5, edge(0, 0.0, 0.6, 0.05));
    child(&mut t, NodeId::ROOT, &[0.1, 0.1], 0.5, edge(0, 0.0, 0.6, 0.05));
    let s = puct_select(&t, &SearchConfig::default()).unwrap();
    // the exploration term vanishes with sqrt(0); ties go to the lower index
    assert_eq!(s.path, vec![(NodeId::ROOT, 1)]);
    assert_eq!(s.leaf, NodeId(2));
}

#[test]
fn selection_skips_disabled_and_stops_at_terminal() {
    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.1, 0.0], 0.5, edge(0, 0.0, 0.1, 0.5));
    let b = child(&mut t, NodeId::ROOT, &[0.0, 0.1], 0.5, edge(0, 0.0, 0.9, 0.5));
    t.node_mut(a).terminal = Some(Terminal { reward: 1.0, reason: TerminalReason::Answer });
    t.node_mut(b).enabled = false;
    let s = puct_select(&t, &SearchConfig::default()).unwrap();
    assert_eq!(s.path, vec![(NodeId::ROOT, 0)]);
    assert_eq!(s.leaf, a);
}

#[test]
fn selection_errors() {
    let mut t = root2();
    t.node_mut(NodeId::ROOT).enabled = false;
    assert!(matches!(puct_select(&t, &SearchConfig::default()), Err(SearchError::RootDisabled)));

    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.1, 0.0], 0.5, EdgeStats::default());
    t.node_mut(a).enabled = false;
    match puct_select(&t, &SearchConfig::default()) {
        Err(SearchError::NoEnabledChildren { node, path }) => {
            assert_eq!(node, NodeId::ROOT);
            assert!(path.is_empty());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn prior_examples() {
    assert_eq!(candidate_priors(&[-2.0; 4]), vec![0.25; 4]);
    let p = candidate_priors(&[0.0, 3f64.ln()]);
    assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
    let shifted = candidate_priors(&[-700.0, 3f64.ln() - 700.0]);
    assert_abs_diff_eq!(shifted[1], 0.75, epsilon = 1e-12);
}

#[test]
fn init_value_examples() {
    assert_eq!(init_edge_value(0.8, 0.2, 1.0), 0.8);
    assert_eq!(init_edge_value(0.8, 0.2, 0.0), 0.2);
    assert_abs_diff_eq!(init_edge_value(0.8, 0.2, 0.5), 0.5, epsilon = 1e-15);
}

#[test]
fn backup_examples() {
    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.1, 0.0], 0.5, EdgeStats::default());
    let path = [(NodeId::ROOT, 0)];
    backup(&mut t, &path, 1.0).unwrap();
    assert_eq!((t.node(a).edge.visits, t.node(a).edge.mean_value), (1, 1.0));
    backup(&mut t, &path, 0.0).unwrap();
    assert_eq!((t.node(a).edge.visits, t.node(a).edge.mean_value), (2, 0.5));

    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.1, 0.0], 0.5, EdgeStats::default());
    for r in [0.2, 0.4, 0.9] {
        backup(&mut t, &path, r).unwrap();
    }
    assert_abs_diff_eq!(t.node(a).edge.mean_value, 0.5, epsilon = 1e-15);

    let before = t.clone();
    backup(&mut t, &[], 1.0).unwrap();
    assert_eq!(t, before);
    assert!(matches!(backup(&mut t, &path, 1.5), Err(SearchError::InvalidReturn(_))));
    assert!(matches!(backup(&mut t, &[(NodeId::ROOT, 3)], 1.0), Err(SearchError::InvalidPath(..))));
}

#[test]
fn terminal_predicate_precedence() {
    let env = planted(2, 6, vec![0; 6], 0.0, 0);
    let cfg = SearchConfig::default();
    let deep = PlantedTree::state_for(&[1, 1, 0, 1, 0, 1]);
    // the planted env extracts an answer at full depth, which outranks depth
    assert_eq!(is_terminal(&deep, 6, &env, &cfg), Some(TerminalReason::Answer));

    let echo = DialogueState::new(vec![ActionLabel(vec![7]), ActionLabel(vec![7])]);
    assert_eq!(is_terminal(&echo, 2, &env, &cfg), Some(TerminalReason::Echo));
    assert_eq!(is_terminal(&echo, 6, &env, &cfg), Some(TerminalReason::Echo));
    let plain = DialogueState::new(vec![ActionLabel(vec![7]), ActionLabel(vec![8])]);
    assert_eq!(is_terminal(&plain, 6, &env, &cfg), Some(TerminalReason::Depth));
    assert_eq!(is_terminal(&plain, 2, &env, &cfg), None);

    let long = DialogueState::new(vec![ActionLabel(vec![1; 10]), ActionLabel(vec![1; 10])]);
    let short_cap = SearchConfig { max_action_length: 15, ..Default::default() };
    assert_eq!(is_terminal(&long, 2, &env, &short_cap), Some(TerminalReason::Length));
}

#[test]
fn expand_creates_one_child_per_candidate() {
    let env = planted(6, 3, vec![1, 2, 3], 0.2, 5);
    let cfg = SearchConfig { max_depth: 3, ..Default::default() };
    let head = ValueHead::zeros(16);
    let mut t = SearchTree::new(env.root_pooled(), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kids = expand(&mut t, NodeId::ROOT, &env, &head, &env, &cfg, &mut rng).unwrap();
    assert_eq!(kids.len(), 6);
    let total: f64 = kids.iter().map(|&k| t.node(k).edge.prior).sum();
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    for (i, &k) in kids.iter().enumerate() {
        let n = t.node(k);
        assert_eq!(n.child_index, i);
        assert_eq!(n.action, PlantedTree::action_for(0, i));
        assert_abs_diff_eq!(n.edge.init_value, 0.5 * 0.5 + 0.5 * n.edge.prior, epsilon = 1e-15);
    }
    assert!(matches!(
        expand(&mut t, NodeId::ROOT, &env, &head, &env, &cfg, &mut rng),
        Err(SearchError::AlreadyExpanded(_))
    ));
}

#[test]
fn expand_labels_answer_children() {
    let env = planted(3, 1, vec![2], 0.0, 1);
    let cfg = SearchConfig { branching: 3, max_depth: 4, ..Default::default() };
    let mut t = SearchTree::new(env.root_pooled(), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kids = expand(&mut t, NodeId::ROOT, &env, &ValueHead::zeros(16), &env, &cfg, &mut rng).unwrap();
    for (i, k) in kids.into_iter().enumerate() {
        let term = t.node(k).terminal.unwrap();
        assert_eq!(term.reason, TerminalReason::Answer);
        assert_eq!(term.reward, if i == 2 { 1.0 } else { 0.0 });
    }
    assert!(matches!(
        expand(&mut t, NodeId(3), &env, &ValueHead::zeros(16), &env, &cfg, &mut rng),
        Err(SearchError::TerminalLeaf(_))
    ));
}

struct Faulty;

impl PolicyProvider for Faulty {
    fn hidden_dim(&self) -> usize {
        2
    }
    fn root_pooled(&self) -> AmbientVector {
        AmbientVector::zeros(2)
    }
    fn sample(&self, _: &DialogueState, b: usize, _: &mut dyn RngCore) -> Result<Vec<Candidate>, EnvError> {
        Ok((0..b)
            .map(|k| Candidate {
                action: ActionLabel(vec![k as u32]),
                token_logprobs: if k == 1 { vec![f64::NAN] } else { vec![-1.0] },
                pooled: AmbientVector::zeros(2),
            })
            .collect())
    }
    fn answer_extracted(&self, _: &DialogueState) -> bool {
        false
    }
}

impl Verifier for Faulty {
    fn verify(&self, _: &DialogueState) -> Result<f64, EnvError> {
        Ok(0.0)
    }
}

#[test]
fn provider_failures_carry_candidate_and_iteration() {
    let cfg = SearchConfig { branching: 3, ..Default::default() };
    match run_search(&Faulty, &ValueHead::zeros(2), &Faulty, &cfg) {
        Err(SearchError::AtIteration { iteration: 1, source }) => {
            assert!(matches!(*source, SearchError::Provider { candidate: Some(1), .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn prune_examples() {
    let mut t = root2();
    let ids: Vec<NodeId> = [0.7, 0.2, 0.9, 0.4]
        .iter()
        .map(|&v| child(&mut t, NodeId::ROOT, &[0.3, 0.3], v, EdgeStats::default()))
        .collect();
    let far = child(&mut t, NodeId::ROOT, &[-0.6, 0.0], 0.1, EdgeStats::default());

    let mut none = t.clone();
    let r = prune(&mut none, &SearchConfig { prune_ratio: 0.0, ..Default::default() }).unwrap();
    assert_eq!(r.disabled, 0);
    assert_eq!(none, t);

    let r = prune(&mut t, &SearchConfig { prune_ratio: 0.5, ..Default::default() }).unwrap();
    // root, the coincident four, and the far singleton
    assert_eq!(r.clusters, 3);
    assert_eq!(r.disabled_nodes, vec![ids[1]]);
    assert!(t.node(far).enabled && t.node(NodeId::ROOT).enabled);
    assert_eq!(ids.iter().filter(|&&i| t.node(i).enabled).count(), 3);
}

#[test]
fn prune_keeps_root_and_one_member() {
    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.0, 0.0], 0.0, EdgeStats::default());
    let b = child(&mut t, a, &[0.0, 0.0], 0.9, EdgeStats::default());
    let r = prune(&mut t, &SearchConfig { prune_ratio: 0.9, ..Default::default() }).unwrap();
    // quota floor(0.9 * 2) = 1: the lowest-valued member goes, with its subtree
    assert_eq!(r.clusters, 1);
    assert_eq!(r.disabled_nodes, vec![a]);
    assert_eq!(r.descendants_disabled, 1);
    assert!(t.node(NodeId::ROOT).enabled && !t.node(b).enabled);
}

#[test]
fn prune_disables_subtrees_and_breaks_ties_by_recency() {
    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.5, 0.0], 0.3, EdgeStats::default());
    let b = child(&mut t, NodeId::ROOT, &[0.5, 0.0], 0.3, EdgeStats::default());
    let c = child(&mut t, NodeId::ROOT, &[0.5, 0.0], 0.3, EdgeStats::default());
    let c1 = child(&mut t, c, &[0.0, 0.6], 0.9, EdgeStats::default());
    let r = prune(&mut t, &SearchConfig { prune_ratio: 0.5, ..Default::default() }).unwrap();
    assert_eq!(r.disabled_nodes, vec![c]);
    assert_eq!(r.descendants_disabled, 1);
    assert!(!t.node(c1).enabled);
    assert_eq!(frontier(&t, &SearchConfig::default()), vec![a, b]);
}

#[test]
fn dead_end_becomes_zero_reward_terminal() {
    let mut t = root2();
    let a = child(&mut t, NodeId::ROOT, &[0.5, 0.0], 0.3, EdgeStats::default());
    let a1 = child(&mut t, a, &[0.5, 0.1], 0.3, EdgeStats::default());
    t.node_mut(a1).enabled = false;
    let env = Faulty;
    let cfg = SearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    iterate(&mut t, 1, &env, &ValueHead::zeros(2), &env, &cfg, &mut rng, &mut NoopObserver).unwrap();
    let term = t.node(a).terminal.unwrap();
    assert_eq!((term.reason, term.reward), (TerminalReason::PrunedDeadEnd, 0.0));
    assert_eq!(t.node(a).edge.visits, 1);
}

#[test]
fn prune_schedule_follows_interval() {
    let env = planted(6, 6, vec![0; 6], 0.3, 2);
    let mut trace = Trace::default();
    run_search_observed(&env, &ValueHead::zeros(16), &env, &SearchConfig::default(), &mut trace).unwrap();
    assert_eq!(trace.prunes.iter().map(|p| p.0).collect::<Vec<_>>(), vec![8, 16, 24]);
}

#[test]
fn single_simulation_expands_root_only() {
    let env = planted(4, 3, vec![0, 1, 2], 0.3, 2);
    let cfg = SearchConfig { num_sim: 1, branching: 4, max_depth: 3, ..Default::default() };
    let t = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
    assert_eq!(t.len(), 5);
    assert!(t.nodes().all(|n| n.depth <= 1));
}

#[test]
fn planted_three_ary_recovery() {
    let path = vec![2, 0, 1];
    let env = planted(3, 3, path.clone(), 0.5, 11);
    let cfg = SearchConfig { num_sim: 256, branching: 3, max_depth: 3, ..Default::default() };
    let t = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
    let root = t.root();
    let best = (0..root.children.len())
        .max_by_key(|&i| (t.node(root.children[i]).edge.visits, std::cmp::Reverse(i)))
        .unwrap();
    assert_eq!(best, path[0]);
}

#[test]
fn search_is_deterministic() {
    let env = planted(5, 4, vec![4, 3, 2, 1], 0.7, 3);
    let cfg = SearchConfig { num_sim: 40, branching: 5, max_depth: 4, rng_seed: 9, ..Default::default() };
    let a = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
    let b = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(crate::persist::dump_tree_string(&a), crate::persist::dump_tree_string(&b));
}

/// Checks the trace-level invariants of one run.
fn check_trace(t: &SearchTree, trace: &Trace) {
    let mut through: HashMap<NodeId, u64> = HashMap::new();
    let mut returns: HashMap<NodeId, Vec<f64>> = HashMap::new();
    for (path, r) in &trace.backups {
        for &(p, i) in path {
            *through.entry(p).or_default() += 1;
            returns.entry(t.child(p, i).unwrap()).or_default().push(*r);
        }
    }
    for n in t.nodes() {
        if n.is_expanded() {
            assert_eq!(t.total_child_visits(n.id), through.get(&n.id).copied().unwrap_or(0));
            let total: f64 = n.children.iter().map(|&c| t.node(c).edge.prior).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let e = &n.edge;
        assert!(e.prior > 0.0);
        assert!((0.0..=1.0).contains(&e.effective_value()));
        match returns.get(&n.id) {
            Some(rs) => {
                let mean = rs.iter().sum::<f64>() / rs.len() as f64;
                assert_eq!(e.visits as usize, rs.len());
                assert!((e.mean_value - mean).abs() <= 1e-12);
            }
            None if n.id != NodeId::ROOT => assert_eq!(e.visits, 0),
            None => {}
        }
        if n.is_terminal() {
            assert!(n.children.iter().all(|&c| !t.node(c).enabled));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn search_invariants_hold(
        seed in 0u64..1000,
        b in 2usize..5,
        d in 2usize..5,
        noise in 0.0f64..1.5,
        num_sim in 1usize..60,
        rho in 0.0f64..0.9,
        tau in 0.05f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = PlantedTreeSpec::random(b, d, noise, &mut rng);
        let env = PlantedTree::new(spec, seed).unwrap();
        let cfg = SearchConfig {
            num_sim, branching: b, max_depth: d, prune_interval: 4,
            prune_ratio: rho, cluster_threshold: tau, rng_seed: seed, ..Default::default()
        };
        let mut trace = Trace::default();
        let t = run_search_observed(&env, &ValueHead::zeros(16), &env, &cfg, &mut trace).unwrap();
        check_trace(&t, &trace);

        // nodes disabled by a prune never show up in later selections
        let mut disabled_after: Vec<(usize, NodeId)> = Vec::new();
        for (n, report) in &trace.prunes {
            for &id in &report.disabled_nodes {
                disabled_after.push((*n, id));
            }
        }
        let per_iter = &trace.selections;
        for (i, sel) in per_iter.iter().enumerate() {
            let iteration = i + 1;
            for &(n, id) in &disabled_after {
                if iteration > n {
                    prop_assert!(sel.leaf != id);
                    prop_assert!(sel.path.iter().all(|&(p, c)| t.child(p, c) != Some(id) && p != id));
                }
            }
        }
    }
}

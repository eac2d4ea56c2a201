//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails or overruns its time budget.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use hyperlatent::bandit::{rollout_tree, train_step, BanditConfig, FactorizedPolicy};
use hyperlatent::env::{ParaphraseCluster, ParaphraseSpec, PlantedTree, PlantedTreeSpec};
use hyperlatent::geometry::{
    exp_map_origin, geodesic_distance, AmbientVector, BallPoint, GeoConfig,
};
use hyperlatent::grpo::{
    clipped_policy_loss, clipped_policy_loss_grad, filter_indices, group_advantages, FilterPolicy,
    RolloutGroup, ScoredTree, Trajectory,
};
use hyperlatent::mcts::{run_search, run_search_observed, PruneReport, SearchConfig, SearchObserver, Selection};
use hyperlatent::persist::{disk_string, dump_tree_string, load_tree_str, parse_disk, DiskRecord};
use hyperlatent::shaping::{shape_tree, RewardScheme};
use hyperlatent::tree::{NodeId, SearchTree};
use hyperlatent::value_head::{ValueBatch, ValueHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Name, time budget in seconds, and check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_ball_point(rng: &mut impl Rng, dim: usize, max_norm: f64) -> BallPoint {
    let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = rng.gen_range(0.0..max_norm);
    BallPoint::new(dir.iter().map(|x| x / n * r).collect()).unwrap()
}

fn planted_env(seed: u64, b: usize, d: usize, noise: f64) -> PlantedTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PlantedTree::new(PlantedTreeSpec::random(b, d, noise, &mut rng), seed).unwrap()
}

fn is_correct(t: &SearchTree, id: NodeId) -> bool {
    t.node(id).terminal.as_ref().is_some_and(|x| x.reward >= 1.0)
}

#[derive(Default)]
struct Trace {
    selections: Vec<(usize, Selection)>,
    backups: Vec<(Vec<(NodeId, usize)>, f64)>,
    prunes: Vec<(usize, PruneReport)>,
}

impl SearchObserver for Trace {
    fn on_select(&mut self, n: usize, s: &Selection) {
        self.selections.push((n, s.clone()));
    }
    fn on_backup(&mut self, _n: usize, path: &[(NodeId, usize)], r: f64) {
        self.backups.push((path.to_vec(), r));
    }
    fn on_prune(&mut self, n: usize, report: &PruneReport) {
        self.prunes.push((n, report.clone()));
    }
}

/// Visit conservation and running-mean Q, checked against the backup log.
fn check_statistics(t: &SearchTree, trace: &Trace) -> Result<(), String> {
    for node in t.nodes() {
        if node.children.is_empty() {
            continue;
        }
        let through = trace.backups.iter().filter(|(p, _)| p.iter().any(|&(s, _)| s == node.id)).count() as u64;
        ensure(t.total_child_visits(node.id) == through, || {
            format!("node {}: child visits {} vs {} backups", node.id.0, t.total_child_visits(node.id), through)
        })?;
        for (i, &c) in node.children.iter().enumerate() {
            let rs: Vec<f64> = trace
                .backups
                .iter()
                .filter(|(p, _)| p.contains(&(node.id, i)))
                .map(|(_, r)| *r)
                .collect();
            let e = &t.node(c).edge;
            ensure(e.visits == rs.len() as u64, || format!("edge ({}, {i}) visits", node.id.0))?;
            if !rs.is_empty() {
                let mean = rs.iter().sum::<f64>() / rs.len() as f64;
                ensure((e.mean_value - mean).abs() <= 1e-12, || {
                    format!("edge ({}, {i}): Q {} vs mean {}", node.id.0, e.mean_value, mean)
                })?;
            }
        }
    }
    Ok(())
}

fn disabled_never_reselected(t: &SearchTree, trace: &Trace) -> Result<usize, String> {
    let mut count = 0;
    for (n, report) in &trace.prunes {
        for &id in &report.disabled_nodes {
            count += 1;
            for (iteration, sel) in &trace.selections {
                if iteration > n {
                    let touches = sel.leaf == id || sel.path.iter().any(|&(p, c)| p == id || t.child(p, c) == Some(id));
                    ensure(!touches, || format!("node {} reselected at iteration {iteration}", id.0))?;
                }
            }
        }
    }
    Ok(count)
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_tri = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let u = random_ball_point(&mut rng, 8, 0.999);
        let v = random_ball_point(&mut rng, 8, 0.999);
        let w = random_ball_point(&mut rng, 8, 0.999);
        let duv = geodesic_distance(&u, &v).unwrap();
        ensure(duv == geodesic_distance(&v, &u).unwrap(), || "symmetry violated".into())?;
        ensure(geodesic_distance(&u, &u).unwrap() == 0.0, || "d(u,u) != 0".into())?;
        ensure(duv > 0.0, || "distinct points at distance 0".into())?;
        let excess = geodesic_distance(&u, &w).unwrap() - duv - geodesic_distance(&v, &w).unwrap();
        worst_tri = worst_tri.max(excess);
        ensure(excess <= 1e-9, || format!("triangle inequality violated by {excess:e}"))?;
    }
    // points on one diameter make the triangle inequality tight
    for _ in 0..1000 {
        let e = random_ball_point(&mut rng, 8, 1.0);
        let e: Vec<f64> = e.coords().iter().map(|x| x / e.norm()).collect();
        let mut t: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.999..0.999)).collect();
        t.sort_by(f64::total_cmp);
        let [u, v, w] = [t[0], t[1], t[2]].map(|s| BallPoint::new(e.iter().map(|x| x * s).collect()).unwrap());
        let excess = geodesic_distance(&u, &w).unwrap() - geodesic_distance(&u, &v).unwrap() - geodesic_distance(&v, &w).unwrap();
        worst_tri = worst_tri.max(excess);
        ensure(excess <= 1e-9, || format!("collinear triangle inequality violated by {excess:e}"))?;
    }
    let mut worst_closed = 0.0f64;
    for _ in 0..1000 {
        let v = random_ball_point(&mut rng, 8, 0.999);
        let d = geodesic_distance(&BallPoint::origin(8), &v).unwrap();
        let closed = 2.0 * v.norm().atanh();
        if closed > 0.0 {
            worst_closed = worst_closed.max((d - closed).abs() / closed);
        }
    }
    ensure(worst_closed <= 1e-9, || format!("d(0,v) vs 2 artanh relative error {worst_closed:e}"))?;
    let mut worst_exp = 0.0f64;
    for _ in 0..1000 {
        let r = rng.gen_range(0.0..5.0);
        let dir: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v = AmbientVector::new(dir.iter().map(|x| x / n * r).collect()).unwrap();
        let y = exp_map_origin(&v, &GeoConfig::default());
        worst_exp = worst_exp.max((y.norm() - v.norm().tanh()).abs());
    }
    ensure(worst_exp <= 1e-6, || format!("exp-map norm error {worst_exp:e}"))?;
    Ok(format!(
        "max triangle excess {worst_tri:.1e}, closed-form rel err {worst_closed:.1e}, exp norm err {worst_exp:.1e}"
    ))
}

fn shaping() -> Outcome {
    let geo = GeoConfig::default();
    let mut shaped = 0;
    let mut seed = 0u64;
    let mut worst_tel = 0.0f64;
    while shaped < 200 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, d) = (rng.gen_range(2..5), rng.gen_range(2..6));
        let env = planted_env(seed, b, d, rng.gen_range(0.0..1.5));
        let mut paths: Vec<Vec<usize>> = (0..rng.gen_range(2..12)).map(|_| (0..d).map(|_| rng.gen_range(0..b)).collect()).collect();
        paths.push(env.spec().planted_path.clone());
        let (tree, leaves) = rollout_tree(&env, &paths, &geo);
        for scheme in [RewardScheme::Poincare, RewardScheme::Euclidean] {
            let s = shape_tree(&tree, scheme, &[]).map_err(|e| format!("seed {seed}: {e}"))?;
            for n in tree.nodes() {
                let v = s.potential(n.id).unwrap().value();
                ensure((0.0..=1.0).contains(&v), || format!("seed {seed}: V = {v}"))?;
            }
            ensure(s.potential(NodeId::ROOT).unwrap().value() == 0.0, || "V(root) != 0".into())?;
            let best = leaves.iter().filter(|&&l| is_correct(&tree, l)).map(|&l| s.path_return(&tree, l)).fold(f64::NAN, f64::max);
            for &l in &leaves {
                let v = s.potential(l).unwrap().value();
                if is_correct(&tree, l) {
                    ensure(v == 1.0, || format!("seed {seed}: correct leaf V = {v}"))?;
                }
                let summed: f64 = tree.path_from_root(l).iter().skip(1).map(|n| s.edge_rewards[n.0].unwrap()).sum();
                let tel = (summed - (v - s.potential(NodeId::ROOT).unwrap().value())).abs();
                worst_tel = worst_tel.max(tel);
                ensure(tel <= 1e-12, || format!("seed {seed}: telescoping error {tel:e}"))?;
                ensure(s.path_return(&tree, l) <= best, || format!("seed {seed}: leaf beats correct leaf"))?;
            }
        }
        shaped += 1;
    }
    Ok(format!("200 trees x 2 schemes, max telescoping error {worst_tel:.1e}"))
}

fn ablation() -> Outcome {
    let geo = GeoConfig::default();
    let seeds = 0..50u64;
    let (steps, group_size, noise) = (100, 32, 0.5);
    let grid = [1.0, 4.0, 16.0, 64.0];
    let mut best = Vec::new();
    for scheme in RewardScheme::ALL {
        let mut rates = Vec::new();
        for &lr in &grid {
            let mut total = 0.0;
            for seed in seeds.clone() {
                let env = planted_env(seed, 6, 6, noise);
                let mut policy = FactorizedPolicy::from_provider_priors(&env).unwrap();
                let cfg = BanditConfig { group_size, lr, eps: 0.2, scheme };
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                for _ in 0..steps {
                    train_step(&env, &mut policy, &cfg, &geo, &mut rng).unwrap();
                }
                total += policy.path_probability(&env.spec().planted_path);
            }
            rates.push(total / seeds.clone().count() as f64);
        }
        let top = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best.push((scheme, top, rates));
    }
    let rate = |s: RewardScheme| best.iter().find(|b| b.0 == s).unwrap().1;
    let grid_line: Vec<String> = best
        .iter()
        .map(|(s, _, r)| format!("{s} [{}]", r.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")))
        .collect();

    let mut var = [0.0f64; 2];
    for seed in seeds.clone() {
        let env = planted_env(seed, 6, 6, noise);
        let pp = env.spec().planted_path.clone();
        let mut paths = vec![pp.clone()];
        for a in 0..6 {
            let mut p = pp[..4].to_vec();
            p.extend([a, 0]);
            paths.push(p);
        }
        let (tree, leaves) = rollout_tree(&env, &paths, &geo);
        let depth4 = tree.path_from_root(leaves[0])[4];
        let siblings = tree.node(depth4).children.clone();
        for (k, scheme) in [RewardScheme::Poincare, RewardScheme::Euclidean].into_iter().enumerate() {
            let s = shape_tree(&tree, scheme, &[]).unwrap();
            let vs: Vec<f64> = siblings.iter().map(|&c| s.potential(c).unwrap().value()).collect();
            let m = vs.iter().sum::<f64>() / vs.len() as f64;
            var[k] += vs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vs.len() as f64 / 50.0;
        }
    }
    let detail = format!(
        "best-of-grid planted-leaf rate poincare {:.4} euclidean {:.4} sparse01 {:.4}; grid {}; depth-5 sibling V variance poincare {:.5} euclidean {:.5}",
        rate(RewardScheme::Poincare),
        rate(RewardScheme::Euclidean),
        rate(RewardScheme::Sparse01),
        grid_line.join(", "),
        var[0],
        var[1]
    );
    ensure(rate(RewardScheme::Poincare) >= rate(RewardScheme::Sparse01), || detail.clone())?;
    ensure(var[1] < var[0], || detail.clone())?;
    Ok(detail)
}

fn greedy_path(t: &SearchTree) -> Vec<usize> {
    let mut cur = NodeId::ROOT;
    let mut out = Vec::new();
    while !t.node(cur).children.is_empty() {
        let ch = &t.node(cur).children;
        let i = (0..ch.len()).max_by_key(|&i| (t.node(ch[i]).edge.visits, std::cmp::Reverse(i))).unwrap();
        out.push(i);
        cur = ch[i];
    }
    out
}

fn mcts_oracle() -> Outcome {
    for seed in 0..20u64 {
        let env = planted_env(seed, 4, 4, 0.7);
        let cfg = SearchConfig { num_sim: 120, branching: 4, max_depth: 4, prune_ratio: 0.5, cluster_threshold: 0.5, rng_seed: seed, ..Default::default() };
        let a = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
        let b = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
        ensure(a == b && dump_tree_string(&a) == dump_tree_string(&b), || format!("seed {seed}: replay differs"))?;
        let mut trace = Trace::default();
        let t = run_search_observed(&env, &ValueHead::zeros(16), &env, &cfg, &mut trace).unwrap();
        ensure(t == a, || format!("seed {seed}: observed run differs"))?;
        check_statistics(&t, &trace).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let shapes = [(2usize, 6usize), (3, 4), (4, 3), (9, 2), (10, 2)];
    let mut recovered = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, d) = shapes[rng.gen_range(0..shapes.len())];
        let env = PlantedTree::new(PlantedTreeSpec::random(b, d, 1.0, &mut rng), seed).unwrap();
        let cfg = SearchConfig {
            num_sim: 10 * env.leaf_count(),
            branching: b,
            max_depth: d,
            mix_eta: 0.0,
            rng_seed: seed,
            ..Default::default()
        };
        let t = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
        if greedy_path(&t) == env.spec().planted_path {
            recovered += 1;
        }
    }
    ensure(recovered >= 190, || format!("planted optimum recovered in {recovered}/200"))?;
    Ok(format!("replay bit-identical on 20 seeds, statistics exact, planted optimum recovered {recovered}/200"))
}

fn pruning() -> Outcome {
    let (mut with, mut without, mut disabled) = (0usize, 0usize, 0usize);
    for seed in 0..100u64 {
        let env = ParaphraseCluster::new(ParaphraseSpec::new(6, 2, 6), seed).unwrap();
        for ratio in [0.5, 0.0] {
            let cfg = SearchConfig {
                num_sim: 24,
                prune_interval: 8,
                prune_ratio: ratio,
                cluster_threshold: env.spec().tau,
                rng_seed: seed,
                ..Default::default()
            };
            let mut trace = Trace::default();
            let t = run_search_observed(&env, &ValueHead::zeros(16), &env, &cfg, &mut trace).unwrap();
            disabled += disabled_never_reselected(&t, &trace).map_err(|e| format!("seed {seed}: {e}"))?;
            let groups: BTreeSet<Vec<usize>> = t
                .nodes()
                .filter(|n| n.edge.visits > 0)
                .map(|n| env.signature(&t.state_of(n.id)).unwrap())
                .collect();
            if ratio > 0.0 {
                with += groups.len();
            } else {
                without += groups.len();
            }
        }
    }
    let gain = with as f64 / without as f64 - 1.0;
    let detail = format!("distinct visited groups {with} with pruning vs {without} without (+{:.1}%), {disabled} disabled nodes never reselected", 100.0 * gain);
    ensure(gain >= 0.2, || detail.clone())?;
    Ok(detail)
}

fn value_head() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = rng.gen_range(1..8);
        let head = ValueHead {
            weights: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: rng.gen_range(-1.0..1.0),
        };
        let n = rng.gen_range(1..6);
        let inputs: Vec<AmbientVector> = (0..n)
            .map(|_| AmbientVector::new((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
            .collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let batch = ValueBatch::new(inputs, targets).unwrap();
        let g = head.value_grad(&batch).unwrap();
        let h = 1e-5;
        let fd = |perturb: &dyn Fn(&mut ValueHead, f64)| {
            let (mut p, mut m) = (head.clone(), head.clone());
            perturb(&mut p, h);
            perturb(&mut m, -h);
            (p.value_loss(&batch).unwrap() - m.value_loss(&batch).unwrap()) / (2.0 * h)
        };
        let mut pairs: Vec<(f64, f64)> = (0..dim).map(|k| (g.weights[k], fd(&|hd, e| hd.weights[k] += e))).collect();
        pairs.push((g.bias, fd(&|hd, e| hd.bias += e)));
        for (a, b) in pairs {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-3));
        }
    }
    ensure(worst <= 1e-6, || format!("value gradient relative error {worst:e}"))?;

    let (b, d, noise) = (4, 3, 0.5);
    let search = |seed: u64| {
        let env = planted_env(seed, b, d, noise);
        let cfg = SearchConfig { num_sim: 64, branching: b, max_depth: d, rng_seed: seed, ..Default::default() };
        run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap()
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for seed in 1000..1020u64 {
        let t = search(seed);
        if let Ok(s) = shape_tree(&t, RewardScheme::Poincare, &[]) {
            for n in t.nodes() {
                xs.push(n.pooled.clone());
                ys.push(s.potential(n.id).unwrap().value());
            }
        }
    }
    let (head, _) = ValueHead::zeros(16).fit(&ValueBatch::new(xs, ys).unwrap(), 0.1, 500).unwrap();
    let (mut hits, mut mean_rate) = (0, 0.0);
    for seed in 0..50u64 {
        let t = search(seed);
        let top = t
            .terminal_leaves()
            .into_iter()
            .max_by(|&x, &y| head.predict(&t.node(x).pooled).unwrap().total_cmp(&head.predict(&t.node(y).pooled).unwrap()))
            .unwrap();
        hits += is_correct(&t, top) as usize;
        mean_rate += t.success_rate().unwrap_or(0.0) / 50.0;
    }
    let detail = format!("gradient rel err {worst:.1e}; top-1 correct {hits}/50 vs mean leaf correctness {mean_rate:.3}");
    ensure(hits >= 45 && hits as f64 / 50.0 > mean_rate, || detail.clone())?;
    Ok(detail)
}

fn grpo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let g = rng.gen_range(2..17);
        let returns: Vec<f64> = (0..g).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let s: f64 = group_advantages(&returns).unwrap().iter().sum();
        ensure(s.abs() <= 1e-12, || format!("advantages sum to {s:e}"))?;
    }

    let eps = 0.2;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..100 {
        let g = rng.gen_range(2..6);
        let trajs: Vec<Trajectory> = (0..g)
            .map(|_| {
                let t = rng.gen_range(1..5);
                let old: Vec<f64> = (0..t).map(|_| rng.gen_range(-3.0..-0.1)).collect();
                let new: Vec<f64> = old.iter().map(|o| o + rng.gen_range(-0.4..0.4)).collect();
                Trajectory::new(vec![], new, old, rng.gen_range(0.0..1.0)).unwrap()
            })
            .collect();
        let group = RolloutGroup::new("p", trajs).unwrap();
        let grad = clipped_policy_loss_grad(&group, eps).unwrap();
        let h = 1e-6;
        for (i, (tr, g_row)) in group.trajectories.iter().zip(&grad).enumerate() {
            for (k, &a) in g_row.iter().enumerate() {
                let ratio = (tr.token_logprobs_new[k] - tr.token_logprobs_old[k]).exp();
                if (ratio - (1.0 + eps)).abs() < 1e-3 || (ratio - (1.0 - eps)).abs() < 1e-3 {
                    continue;
                }
                let eval = |delta: f64| {
                    let mut g2 = group.clone();
                    g2.trajectories[i].token_logprobs_new[k] += delta;
                    clipped_policy_loss(&g2, eps).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
                checked += 1;
            }
        }
    }
    ensure(worst <= 1e-6, || format!("clipped-loss gradient relative error {worst:e}"))?;

    let mut policy = FactorizedPolicy::uniform(1, 2);
    let mut prev = policy.probs(0)[1];
    let start = prev;
    for _ in 0..100 {
        let paths: Vec<Vec<usize>> = (0..8).map(|_| policy.sample(&mut rng)).collect();
        let returns: Vec<f64> = paths.iter().map(|p| p[0] as f64).collect();
        policy.grpo_update(&paths, &returns, eps, 0.5).unwrap();
        let p = policy.probs(0)[1];
        ensure(p >= prev, || format!("better-arm probability fell from {prev} to {p}"))?;
        prev = p;
    }
    ensure(prev > start, || "no learning on the 2-arm bandit".into())?;

    let empty = SearchTree::new(AmbientVector::zeros(4), 0.5);
    let scored = |rate: f64| ScoredTree {
        tree: empty.clone(),
        success_rate: rate,
        returns: vec![(NodeId(1), 0.0), (NodeId(2), 1.0)],
    };
    let policy_f = FilterPolicy::default();
    let trees: Vec<ScoredTree> = [0.0, 0.8, 0.81, 0.5].into_iter().map(scored).collect();
    ensure(filter_indices(&trees, &policy_f) == vec![1, 3], || "rate 0 dropped / 0.8 kept failed".into())?;
    let nine: Vec<ScoredTree> = (0..9).map(|_| scored(0.5)).collect();
    ensure(filter_indices(&nine, &policy_f) == (0..8).collect::<Vec<_>>(), || "9th group not truncated".into())?;
    let mut flat = scored(0.5);
    flat.returns = vec![(NodeId(1), 0.5), (NodeId(2), 0.505)];
    ensure(filter_indices(&[flat], &policy_f).is_empty(), || "reward range filter".into())?;

    Ok(format!("advantages centered, gradient rel err {worst:.1e} over {checked} tokens, bandit {start:.3} -> {prev:.3} monotone, filter boundaries exact"))
}

fn test_time_scaling() -> Outcome {
    let (b, d, noise) = (6, 4, 0.5);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for seed in 10_000..10_020u64 {
        let env = planted_env(seed, b, d, noise);
        let cfg = SearchConfig { num_sim: 256, branching: b, max_depth: d, rng_seed: seed, ..Default::default() };
        let t = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
        if let Ok(s) = shape_tree(&t, RewardScheme::Poincare, &[]) {
            for n in t.nodes() {
                xs.push(n.pooled.clone());
                ys.push(s.potential(n.id).unwrap().value());
            }
        }
    }
    let (head, _) = ValueHead::zeros(16).fit(&ValueBatch::new(xs, ys).unwrap(), 0.1, 500).unwrap();
    let mut rates = Vec::new();
    for num_sim in [1usize, 4, 16, 64] {
        let mut solved = 0;
        for seed in 0..200u64 {
            let env = planted_env(seed, b, d, noise);
            let cfg = SearchConfig { num_sim, branching: b, max_depth: d, rng_seed: seed, ..Default::default() };
            let t = run_search(&env, &head, &env, &cfg).unwrap();
            let answer = t
                .terminal_leaves()
                .into_iter()
                .max_by(|&x, &y| t.node(x).value_pred.total_cmp(&t.node(y).value_pred).then(y.cmp(&x)));
            solved += answer.is_some_and(|l| is_correct(&t, l)) as usize;
        }
        rates.push(100.0 * solved as f64 / 200.0);
    }
    let drops: Vec<f64> = rates.windows(2).map(|w| w[0] - w[1]).filter(|&x| x > 0.0).collect();
    let detail = format!("success % at N_sim 1/4/16/64: {:?}", rates);
    ensure(drops.is_empty() || (drops.len() == 1 && drops[0] <= 2.0), || detail.clone())?;
    Ok(detail)
}

fn persistence() -> Outcome {
    let geo = GeoConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, d) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let env = planted_env(seed, b, d, rng.gen_range(0.0..1.0));
        let cfg = SearchConfig { num_sim: rng.gen_range(1..60), branching: b, max_depth: d, rng_seed: seed, ..Default::default() };
        let mut t = run_search(&env, &ValueHead::zeros(16), &env, &cfg).unwrap();
        if let Ok(s) = shape_tree(&t, RewardScheme::Poincare, &[]) {
            s.annotate(&mut t);
        }
        let text = dump_tree_string(&t);
        let back = load_tree_str(&text).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(back == t && dump_tree_string(&back) == text, || format!("seed {seed}: round trip not bit-exact"))?;

        let records = parse_disk(&disk_string(&t, &geo).unwrap()).unwrap();
        let latents: Vec<BallPoint> = t.nodes().map(|n| n.latent.clone()).collect();
        for r in records {
            if let DiskRecord::Row { node_id, distances } = r {
                for (j, dist) in distances.iter().enumerate() {
                    let again = geodesic_distance(&latents[node_id], &latents[j]).unwrap();
                    worst = worst.max((dist - again).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("distance matrix error {worst:e}"))?;
    Ok(format!("100 trees round-trip bit-exact, distance matrix max error {worst:.1e}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("geometry", 5, geometry),
        ("shaping", 10, shaping),
        ("ablation-direction", 120, ablation),
        ("mcts-oracle", 60, mcts_oracle),
        ("pruning", 60, pruning),
        ("value-head", 60, value_head),
        ("grpo", 30, grpo),
        ("test-time-scaling", 180, test_time_scaling),
        ("persistence", 30, persistence),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (ok, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let budget = if in_time { String::new() } else { " OVER BUDGET".into() };
        println!(
            "{} {name} ({:.2}s / {limit}s{budget}): {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += !ok as usize;
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

//! Depth-limited Monte-Carlo tree search with softmax-over-UCB selection and
//! progressive widening.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{check_state, oracle, ActionId, FiniteMdp, Mdp, StateVec};
use crate::rng::{fork, RngStream};
use crate::rollout::{leaf_eval, LeafEvaluator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RootRule {
    /// Largest `q(a)` among actions with at least `min_visits` visits.
    /// `None` means `max(1, m1 / (10·|A|))`.
    MaxQGuarded { min_visits: Option<u64> },
    VisitWeightedMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub m1: usize,
    pub d: usize,
    pub c_ucb: f64,
    /// Absolute softmax temperature over UCB scores.
    pub softmax_temp: f64,
    pub dpw_alpha: f64,
    pub dpw_c: f64,
    pub root_rule: RootRule,
}

impl MctsConfig {
    /// Defaults: `c_ucb = 1`, temperature `0.1·v_max`, widening `(0.5, 1.0)`,
    /// guarded max root rule.
    pub fn new(m1: usize, d: usize, v_max: f64) -> Self {
        MctsConfig {
            m1,
            d,
            c_ucb: 1.0,
            softmax_temp: 0.1 * v_max,
            dpw_alpha: 0.5,
            dpw_c: 1.0,
            root_rule: RootRule::MaxQGuarded { min_visits: None },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m1 == 0 {
            return Err(invalid("m1 must be at least 1"));
        }
        if self.d == 0 {
            return Err(invalid("search depth d must be at least 1"));
        }
        if !(self.c_ucb > 0.0 && self.c_ucb.is_finite()) {
            return Err(invalid("c_ucb must be positive"));
        }
        if !(self.softmax_temp > 0.0 && self.softmax_temp.is_finite()) {
            return Err(invalid("softmax_temp must be positive"));
        }
        if !(self.dpw_alpha > 0.0 && self.dpw_alpha <= 1.0) {
            return Err(invalid("dpw_alpha must lie in (0, 1]"));
        }
        if !(self.dpw_c > 0.0 && self.dpw_c.is_finite()) {
            return Err(invalid("dpw_c must be positive"));
        }
        if let RootRule::MaxQGuarded { min_visits: Some(0) } = self.root_rule {
            return Err(invalid("min_visits must be at least 1"));
        }
        Ok(())
    }

    pub fn min_visits(&self, action_count: usize) -> u64 {
        match self.root_rule {
            RootRule::MaxQGuarded { min_visits: Some(m) } => m,
            _ => (self.m1 / (10 * action_count.max(1))).max(1) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootResult {
    pub u_hat: f64,
    pub action_values: Vec<f64>,
    pub visit_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Child {
    key: Option<u64>,
    node: usize,
    count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub state: StateVec,
    pub depth: usize,
    pub n: Vec<u64>,
    pub q: Vec<f64>,
    children: Vec<Vec<Child>>,
}

impl TreeNode {
    fn new(state: StateVec, depth: usize, action_count: usize) -> Self {
        TreeNode {
            state,
            depth,
            n: vec![0; action_count],
            q: vec![0.0; action_count],
            children: vec![Vec::new(); action_count],
        }
    }

    pub fn visits(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn child_count(&self, a: usize) -> usize {
        self.children[a].len()
    }

    /// Node ids of the children reached through `a`, in creation order.
    pub fn children_of(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.children[a].iter().map(|c| c.node)
    }
}

/// One backed-up return: `(node id, action, return from that node)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackupRecord {
    pub node: usize,
    pub action: usize,
    pub ret: f64,
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    pub nodes: Vec<TreeNode>,
    pub d: usize,
    /// Filled when tracing is enabled.
    pub trace: Option<Vec<BackupRecord>>,
}

impl SearchTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Indented text listing of every node: state, depth and per-action `n`/`q`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_node(0, &mut out);
        out
    }

    fn dump_node(&self, id: usize, out: &mut String) {
        let node = &self.nodes[id];
        let pad = "  ".repeat(node.depth);
        let _ = write!(out, "{pad}node {id} depth {} state {:?}", node.depth, node.state.coords());
        for a in 0..node.n.len() {
            let _ = write!(out, " | a{a} n={} q={:.6}", node.n[a], node.q[a]);
        }
        out.push('\n');
        for kids in &node.children {
            for c in kids {
                self.dump_node(c.node, out);
            }
        }
    }
}

/// Runs `cfg.m1` simulations from `root` and reads off the root estimate.
pub fn run_mcts<M: Mdp + ?Sized>(
    mdp: &M,
    ev: &LeafEvaluator,
    root: &StateVec,
    cfg: &MctsConfig,
    rng: &mut RngStream,
) -> Result<RootResult> {
    run_mcts_tree(mdp, ev, root, cfg, false, rng).map(|(r, _)| r)
}

/// Like [`run_mcts`] but also returns the tree, optionally with a backup trace.
pub fn run_mcts_tree<M: Mdp + ?Sized>(
    mdp: &M,
    ev: &LeafEvaluator,
    root: &StateVec,
    cfg: &MctsConfig,
    trace: bool,
    rng: &mut RngStream,
) -> Result<(RootResult, SearchTree)> {
    cfg.validate()?;
    check_state(mdp, root)?;
    let na = mdp.action_count();
    let gamma = mdp.gamma();
    let v_max = mdp.v_max();
    let mut tree = SearchTree {
        nodes: vec![TreeNode::new(root.clone(), 0, na)],
        d: cfg.d,
        trace: trace.then(Vec::new),
    };
    let mut path: Vec<(usize, usize, f64)> = Vec::with_capacity(cfg.d);
    for _ in 0..cfg.m1 {
        path.clear();
        let mut id = 0;
        let leaf = loop {
            let node = &tree.nodes[id];
            if node.depth == cfg.d {
                break leaf_eval(mdp, ev, &node.state, rng);
            }
            let a = select_action(node, cfg, v_max, rng);
            let r = mdp.reward(&node.state, ActionId(a));
            path.push((id, a, r));
            id = descend(&mut tree, id, a, mdp, cfg, rng);
        };
        let mut g = leaf;
        for &(node_id, a, r) in path.iter().rev() {
            g = r + gamma * g;
            let node = &mut tree.nodes[node_id];
            node.n[a] += 1;
            node.q[a] += (g - node.q[a]) / node.n[a] as f64;
            if let Some(t) = tree.trace.as_mut() {
                t.push(BackupRecord { node: node_id, action: a, ret: g });
            }
        }
    }
    let rootn = tree.root();
    let u_hat = root_estimate(rootn, cfg, na).clamp(0.0, v_max);
    let result = RootResult { u_hat, action_values: rootn.q.clone(), visit_counts: rootn.n.clone() };
    Ok((result, tree))
}

fn root_estimate(root: &TreeNode, cfg: &MctsConfig, na: usize) -> f64 {
    let weighted = || {
        let total = root.visits() as f64;
        root.n.iter().zip(&root.q).map(|(n, q)| *n as f64 * q).sum::<f64>() / total
    };
    match cfg.root_rule {
        RootRule::VisitWeightedMean => weighted(),
        RootRule::MaxQGuarded { .. } => {
            let min = cfg.min_visits(na);
            let mut best: Option<f64> = None;
            for a in 0..na {
                if root.n[a] >= min && best.is_none_or(|b| root.q[a] > b) {
                    best = Some(root.q[a]);
                }
            }
            best.unwrap_or_else(weighted)
        }
    }
}

fn select_action(node: &TreeNode, cfg: &MctsConfig, v_max: f64, rng: &mut RngStream) -> usize {
    if let Some(a) = node.n.iter().position(|&n| n == 0) {
        return a;
    }
    let ln_n = (node.visits() as f64).ln();
    let scale = cfg.c_ucb * v_max;
    let scores: Vec<f64> = node
        .n
        .iter()
        .zip(&node.q)
        .map(|(&n, &q)| q + scale * (ln_n / n as f64).sqrt())
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - top) / cfg.softmax_temp).exp()).collect();
    pick_weighted(&weights, rng)
}

fn pick_weighted(weights: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Moves from `id` through action `a`, creating or reusing a child.
fn descend<M: Mdp + ?Sized>(
    tree: &mut SearchTree,
    id: usize,
    a: usize,
    mdp: &M,
    cfg: &MctsConfig,
    rng: &mut RngStream,
) -> usize {
    let depth = tree.nodes[id].depth + 1;
    let na = mdp.action_count();
    let visits = tree.nodes[id].n[a] + 1;
    let kids = tree.nodes[id].children[a].len();
    let keyed = mdp.state_key(&tree.nodes[id].state).is_some();
    let widen = keyed || (kids as f64) < cfg.dpw_c * (visits as f64).powf(cfg.dpw_alpha);
    if widen || kids == 0 {
        let next = mdp.sample_next(&tree.nodes[id].state, ActionId(a), rng);
        let key = mdp.state_key(&next);
        if let Some(k) = key {
            if let Some(pos) = tree.nodes[id].children[a].iter().position(|c| c.key == Some(k)) {
                let c = &mut tree.nodes[id].children[a][pos];
                c.count += 1;
                return c.node;
            }
        }
        let child = tree.nodes.len();
        tree.nodes.push(TreeNode::new(next, depth, na));
        tree.nodes[id].children[a].push(Child { key, node: child, count: 1 });
        return child;
    }
    let counts: Vec<f64> = tree.nodes[id].children[a].iter().map(|c| c.count as f64).collect();
    let pos = pick_weighted(&counts, rng);
    let c = &mut tree.nodes[id].children[a][pos];
    c.count += 1;
    c.node
}

/// Exact `(T^d J)(s)` where `J = T_π^h V` for a tabular-evaluable leaf evaluator.
pub fn exact_search_target(mdp: &FiniteMdp, ev: &LeafEvaluator, s: usize, d: usize) -> Result<f64> {
    let j = oracle::apply_policy_op(mdp, &ev.policy.table(mdp), &ev.vfa.table(mdp), ev.h)?;
    Ok(oracle::apply_bellman(mdp, &j, d)?[s])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub m: usize,
    pub success_fraction: f64,
    pub median_error: f64,
}

/// For each `m` in `m_grid`, runs `trials` independent searches of depth `d`
/// from state `s` and measures `|Û − (T^d J)(s)|` against the exact oracle.
#[allow(clippy::too_many_arguments)]
pub fn empirical_accuracy_curve(
    mdp: &FiniteMdp,
    ev: &LeafEvaluator,
    s: usize,
    d: usize,
    m_grid: &[usize],
    trials: usize,
    eps: f64,
    base: &MctsConfig,
    rng: &mut RngStream,
) -> Result<Vec<AccuracyPoint>> {
    if trials < 30 {
        return Err(invalid("accuracy curves need at least 30 trials"));
    }
    let target = exact_search_target(mdp, ev, s, d)?;
    let root = mdp.embed(s);
    let mut out = Vec::with_capacity(m_grid.len());
    for (mi, &m) in m_grid.iter().enumerate() {
        let cfg = MctsConfig { m1: m, d, ..*base };
        let mut level = fork(rng, mi as u64);
        let mut errors = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut r = fork(&mut level, t as u64);
            let res = run_mcts(mdp, ev, &root, &cfg, &mut r)?;
            errors.push((res.u_hat - target).abs());
        }
        let hits = errors.iter().filter(|e| **e <= eps).count();
        errors.sort_by(f64::total_cmp);
        out.push(AccuracyPoint { m, success_fraction: hits as f64 / trials as f64, median_error: median_sorted(&errors) });
    }
    Ok(out)
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{PolicyModel, TabularIndex, Vfa, VfaFamily};
    use crate::mdp::{chain_mdp, puddle_nav_mdp, random_finite_mdp, CHAIN_LEFT};
    use crate::rng::stream;

    fn evaluator(m: &FiniteMdp, actions: Vec<ActionId>, values: Vec<f64>, h: usize) -> LeafEvaluator {
        LeafEvaluator {
            policy: PolicyModel::tabular(TabularIndex::for_mdp(m), actions, m.action_count()).unwrap(),
            vfa: Vfa { family: VfaFamily::Tabular(TabularIndex::for_mdp(m)), params: values, v_max: m.v_max() },
            h,
        }
    }

    /// One decision state whose two actions pay 0 and 1, both absorbing into a sink.
    fn two_arm() -> FiniteMdp {
        let t = vec![
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ];
        let r = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        FiniteMdp::new(t, r, 0.9, 1.0, crate::mdp::Embedding::OneHot).unwrap()
    }

    #[test]
    fn dominant_arm_is_exact() {
        let m = two_arm();
        let ev = evaluator(&m, vec![ActionId(0); 2], vec![0.0; 2], 0);
        let cfg = MctsConfig::new(200, 1, m.v_max());
        let res = run_mcts(&m, &ev, &m.embed(0), &cfg, &mut stream(1, &[])).unwrap();
        assert_eq!(res.u_hat, 1.0);
        assert!(res.visit_counts[1] > res.visit_counts[0]);
        assert_eq!(res.visit_counts.iter().sum::<u64>(), 200);
    }

    #[test]
    fn chain_one_step_lookahead() {
        let m = chain_mdp(3, 0.9).unwrap();
        let vstar = oracle::value_iteration(&m, oracle::DEFAULT_VI_TOL).unwrap().v_star;
        let ev = evaluator(&m, vec![CHAIN_LEFT; 3], vstar.clone(), 0);
        let target = oracle::apply_bellman(&m, &vstar, 1).unwrap()[1];
        assert!((target - 9.0).abs() < 1e-9);
        let cfg = MctsConfig::new(2000, 1, m.v_max());
        let hits = (0..100)
            .filter(|i| {
                let res = run_mcts(&m, &ev, &m.embed(1), &cfg, &mut stream(*i, &[4])).unwrap();
                (res.u_hat - 9.0).abs() <= 0.1
            })
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn visit_conservation_and_depth_bound() {
        let mut rng = stream(5, &[]);
        let m = random_finite_mdp(4, 3, 0.8, &mut rng).unwrap();
        let ev = evaluator(&m, vec![ActionId(1); 4], vec![1.0, 2.0, 0.0, 3.0], 1);
        for d in 1..=3 {
            let cfg = MctsConfig::new(333, d, m.v_max());
            let (res, tree) = run_mcts_tree(&m, &ev, &m.embed(2), &cfg, false, &mut rng).unwrap();
            assert_eq!(res.visit_counts.iter().sum::<u64>(), 333);
            assert_eq!(tree.max_depth(), d);
            for node in &tree.nodes {
                if node.depth == d {
                    assert_eq!(node.visits(), 0);
                    assert!((0..3).all(|a| node.child_count(a) == 0));
                }
                for a in 0..3 {
                    assert!(node.q[a] >= 0.0 && node.q[a] <= m.v_max() + 1e-9);
                    assert!(node.child_count(a) as u64 <= node.n[a]);
                }
            }
            assert!(res.u_hat >= 0.0 && res.u_hat <= m.v_max());
        }
    }

    #[test]
    fn backups_replay_to_means() {
        let mut rng = stream(6, &[]);
        let m = random_finite_mdp(3, 2, 0.9, &mut rng).unwrap();
        let ev = evaluator(&m, vec![ActionId(0); 3], vec![4.0, 1.0, 2.0], 2);
        let cfg = MctsConfig::new(150, 3, m.v_max());
        let (_, tree) = run_mcts_tree(&m, &ev, &m.embed(0), &cfg, true, &mut rng).unwrap();
        let trace = tree.trace.as_ref().unwrap();
        for (id, node) in tree.nodes.iter().enumerate() {
            for a in 0..2 {
                let rets: Vec<f64> = trace.iter().filter(|b| b.node == id && b.action == a).map(|b| b.ret).collect();
                assert_eq!(rets.len() as u64, node.n[a]);
                if !rets.is_empty() {
                    let mean = rets.iter().sum::<f64>() / rets.len() as f64;
                    assert!((mean - node.q[a]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn keyed_children_merge() {
        let m = chain_mdp(4, 0.9).unwrap();
        let ev = evaluator(&m, vec![CHAIN_LEFT; 4], vec![0.0; 4], 0);
        let cfg = MctsConfig::new(500, 2, m.v_max());
        let (_, tree) = run_mcts_tree(&m, &ev, &m.embed(1), &cfg, false, &mut stream(0, &[])).unwrap();
        // deterministic moves: one child per action, one grandchild per action pair
        assert_eq!(tree.nodes.len(), 1 + 2 + 4);
        assert!(tree.dump().contains("node 0 depth 0"));
    }

    #[test]
    fn continuous_successors_are_widened() {
        let m = puddle_nav_mdp(0.05, 0.9).unwrap();
        let vfa = Vfa::zero(VfaFamily::Linear { features: crate::approx::FeatureMap::Constant }, m.v_max());
        let ev = LeafEvaluator { policy: PolicyModel::LinearScores {
            features: crate::approx::FeatureMap::Constant,
            weights: vec![vec![0.0]; 5],
        }, vfa, h: 0 };
        let cfg = MctsConfig::new(400, 1, m.v_max());
        let root = StateVec(vec![0.2, 0.2]);
        let (res, tree) = run_mcts_tree(&m, &ev, &root, &cfg, false, &mut stream(2, &[])).unwrap();
        let r = tree.root();
        for a in 0..5 {
            let bound = cfg.dpw_c * (r.n[a] as f64).powf(cfg.dpw_alpha);
            assert!(r.child_count(a) as f64 <= bound.ceil());
            assert!(r.child_count(a) >= 1);
        }
        assert_eq!(res.visit_counts.iter().sum::<u64>(), 400);
    }

    #[test]
    fn seeded_determinism() {
        let mut rng = stream(7, &[]);
        let m = random_finite_mdp(4, 2, 0.9, &mut rng).unwrap();
        let ev = evaluator(&m, vec![ActionId(0); 4], vec![1.0; 4], 1);
        let cfg = MctsConfig::new(300, 2, m.v_max());
        let a = run_mcts(&m, &ev, &m.embed(1), &cfg, &mut stream(9, &[1, 2])).unwrap();
        let b = run_mcts(&m, &ev, &m.embed(1), &cfg, &mut stream(9, &[1, 2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = chain_mdp(3, 0.9).unwrap();
        let ev = evaluator(&m, vec![CHAIN_LEFT; 3], vec![0.0; 3], 0);
        let good = MctsConfig::new(10, 1, m.v_max());
        for bad in [
            MctsConfig { m1: 0, ..good },
            MctsConfig { d: 0, ..good },
            MctsConfig { c_ucb: 0.0, ..good },
            MctsConfig { softmax_temp: -1.0, ..good },
            MctsConfig { dpw_alpha: 1.5, ..good },
            MctsConfig { dpw_c: 0.0, ..good },
            MctsConfig { root_rule: RootRule::MaxQGuarded { min_visits: Some(0) }, ..good },
        ] {
            assert!(run_mcts(&m, &ev, &m.embed(0), &bad, &mut stream(0, &[])).is_err());
        }
    }

    #[test]
    fn root_rules() {
        let m = two_arm();
        let ev = evaluator(&m, vec![ActionId(0); 2], vec![0.0; 2], 0);
        let cfg = MctsConfig { root_rule: RootRule::VisitWeightedMean, ..MctsConfig::new(100, 1, m.v_max()) };
        let res = run_mcts(&m, &ev, &m.embed(0), &cfg, &mut stream(0, &[])).unwrap();
        let expect = res.visit_counts[1] as f64 / 100.0;
        assert!((res.u_hat - expect).abs() < 1e-12);
    }

    #[test]
    fn vacuous_and_trivial_accuracy_curves() {
        let m = two_arm();
        let ev = evaluator(&m, vec![ActionId(0); 2], vec![0.0; 2], 0);
        let base = MctsConfig::new(1, 1, m.v_max());
        let curve = empirical_accuracy_curve(&m, &ev, 0, 1, &[2, 10, 50], 30, 0.01, &base, &mut stream(0, &[])).unwrap();
        assert!(curve.iter().all(|p| p.success_fraction == 1.0));
        let chain = chain_mdp(3, 0.9).unwrap();
        let ev = evaluator(&chain, vec![CHAIN_LEFT; 3], vec![5.0; 3], 1);
        let curve = empirical_accuracy_curve(&chain, &ev, 1, 2, &[1, 20], 30, chain.v_max(), &base, &mut stream(0, &[]))
            .unwrap();
        assert!(curve.iter().all(|p| p.success_fraction == 1.0));
        assert!(empirical_accuracy_curve(&chain, &ev, 1, 2, &[1], 10, 1.0, &base, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn chain_accuracy_improves_with_budget() {
        let m = chain_mdp(3, 0.9).unwrap();
        let ev = evaluator(&m, vec![CHAIN_LEFT; 3], vec![3.0, 5.0, 8.0], 0);
        let base = MctsConfig::new(1, 2, m.v_max());
        let curve =
            empirical_accuracy_curve(&m, &ev, 1, 2, &[50, 200, 800, 3200], 40, 0.5, &base, &mut stream(11, &[])).unwrap();
        let mut inversions = 0;
        for w in curve.windows(2) {
            if w[1].success_fraction < w[0].success_fraction {
                inversions += 1;
                assert!(w[0].success_fraction - w[1].success_fraction <= 0.05, "{curve:?}");
            }
        }
        assert!(inversions <= 1, "{curve:?}");
    }
}

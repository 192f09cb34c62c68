//! Generation-by-generation expansion of the weighted branching process.
//!
//! Every node `v` draws its copy of `(C(v), T(v))` from the substream
//! addressed by its label, so the realization does not depend on the order in
//! which nodes are visited. Only the current generation is kept in memory.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BasicSequenceModel;
use crate::output::fmt17;
use crate::rng::RngStream;

pub const DEFAULT_PRUNE_EPS: f64 = 1e-12;
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// Ulam-Harris label `v_1 ... v_n`; the empty label is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeLabel(pub Vec<u32>);

impl NodeLabel {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, i: u32) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        Self(v)
    }

    /// `v|k`, the ancestor at depth `k` (or `v` itself when `k ≥ |v|`).
    pub fn prefix(&self, k: usize) -> Self {
        Self(self.0[..k.min(self.0.len())].to_vec())
    }

    /// Substream of `root` addressed by this label.
    pub fn stream(&self, root: &RngStream) -> RngStream {
        self.0.iter().fold(*root, |s, &i| s.spawn(u64::from(i)))
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "∅");
        }
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// Alive node of a generation. In lumped mode `count` nodes share one weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierNode {
    pub weight: f64,
    pub count: f64,
    pub stream: RngStream,
}

/// How nodes are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Lumped for deterministic models, per-node otherwise.
    Auto,
    PerNode,
    /// Merge nodes of equal weight; exact only for deterministic models.
    Lumped,
}

/// The alive nodes at depth `n` with their path weights `L(v)`.
#[derive(Debug, Clone)]
pub struct GenerationFrontier {
    pub depth: usize,
    pub nodes: Vec<FrontierNode>,
    /// Labels parallel to `nodes`, when tracked (per-node mode only).
    pub labels: Option<Vec<NodeLabel>>,
    pub lumped: bool,
}

impl GenerationFrontier {
    pub fn root(stream: RngStream) -> Self {
        Self {
            depth: 0,
            nodes: vec![FrontierNode { weight: 1.0, count: 1.0, stream }],
            labels: None,
            lumped: false,
        }
    }

    pub fn root_labeled(stream: RngStream) -> Self {
        Self { labels: Some(vec![NodeLabel::root()]), ..Self::root(stream) }
    }

    pub fn root_lumped(stream: RngStream) -> Self {
        Self { lumped: true, ..Self::root(stream) }
    }

    /// Alive population `W_n^{(0)}`.
    pub fn size(&self) -> f64 {
        self.nodes.iter().map(|n| n.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `W_n^{(θ)} = Σ_{|v|=n} L(v)^θ`.
    pub fn w_theta(&self, theta: f64) -> f64 {
        if theta == 0.0 {
            return self.size();
        }
        self.nodes.iter().map(|n| n.count * n.weight.powf(theta)).sum()
    }

    /// `L_n^* = max_{|v|=n} L(v)` (0 when extinct).
    pub fn sup_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).fold(0.0, f64::max)
    }

    /// Number of stored entries (distinct weights in lumped mode).
    pub fn entries(&self) -> usize {
        self.nodes.len()
    }
}

/// Result of one generation step.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub next: GenerationFrontier,
    /// `Σ_{|v|=n} L(v) C(v)` over the expanded generation.
    pub contribution: f64,
    /// Total child weight discarded by pruning.
    pub pruned_mass: f64,
    /// Draws whose support exceeded `n_cap`.
    pub truncated_draws: usize,
}

/// Expands every node of `frontier` by one generation.
///
/// Children with `L(vi) ≤ prune_eps` are dropped and their weight is added to
/// `pruned_mass`. The lumped engine never prunes. Exceeding `node_budget`
/// entries yields [`Error::Budget`] with the contribution collected so far.
pub fn expand_frontier(
    frontier: &GenerationFrontier,
    model: &BasicSequenceModel,
    prune_eps: f64,
    node_budget: usize,
) -> Result<Expansion> {
    assert!(prune_eps >= 0.0, "prune_eps must be nonnegative");
    if frontier.lumped {
        return expand_lumped(frontier, model, node_budget);
    }
    let mut next = Vec::new();
    let mut labels = frontier.labels.as_ref().map(|_| Vec::new());
    let mut buf = Vec::new();
    let mut contribution = 0.0;
    let mut pruned_mass = 0.0;
    let mut truncated_draws = 0;
    for (idx, node) in frontier.nodes.iter().enumerate() {
        let mut gen = node.stream.rng();
        let (c, truncated) = model.draw_into(&mut gen, &mut buf);
        truncated_draws += usize::from(truncated);
        contribution += node.weight * c;
        for (i, &t) in buf.iter().enumerate() {
            let w = node.weight * t;
            if !(w > 0.0) {
                continue;
            }
            if w <= prune_eps {
                pruned_mass += w;
                continue;
            }
            if next.len() >= node_budget {
                return Err(Error::Budget {
                    budget: node_budget,
                    depth: frontier.depth + 1,
                    frontier_size: next.len() + 1,
                    partial_value: contribution,
                });
            }
            let label = (i + 1) as u32;
            next.push(FrontierNode { weight: w, count: 1.0, stream: node.stream.spawn(u64::from(label)) });
            if let (Some(out), Some(parent)) = (labels.as_mut(), frontier.labels.as_ref()) {
                out.push(parent[idx].child(label));
            }
        }
    }
    Ok(Expansion {
        next: GenerationFrontier { depth: frontier.depth + 1, nodes: next, labels, lumped: false },
        contribution,
        pruned_mass,
        truncated_draws,
    })
}

fn expand_lumped(frontier: &GenerationFrontier, model: &BasicSequenceModel, node_budget: usize) -> Result<Expansion> {
    let Some(root) = frontier.nodes.first() else {
        return Ok(Expansion {
            next: GenerationFrontier { depth: frontier.depth + 1, ..frontier.clone() },
            contribution: 0.0,
            pruned_mass: 0.0,
            truncated_draws: 0,
        });
    };
    let mut buf = Vec::new();
    let (c, truncated) = model.draw_into(&mut root.stream.rng(), &mut buf);
    let weights: Vec<f64> = buf.into_iter().filter(|&t| t > 0.0).collect();
    let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
    let mut contribution = 0.0;
    for node in &frontier.nodes {
        contribution += node.count * node.weight * c;
        for &t in &weights {
            let w = node.weight * t;
            *merged.entry(w.to_bits()).or_insert(0.0) += node.count;
            if merged.len() > node_budget {
                return Err(Error::Budget {
                    budget: node_budget,
                    depth: frontier.depth + 1,
                    frontier_size: merged.len(),
                    partial_value: contribution,
                });
            }
        }
    }
    let nodes = merged
        .into_iter()
        .map(|(bits, count)| FrontierNode { weight: f64::from_bits(bits), count, stream: root.stream })
        .collect();
    Ok(Expansion {
        next: GenerationFrontier { depth: frontier.depth + 1, nodes, labels: None, lumped: true },
        contribution,
        pruned_mass: 0.0,
        truncated_draws: usize::from(truncated) * frontier.nodes.len(),
    })
}

/// Truncation policy for a single tree realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub prune_eps: f64,
    pub node_budget: usize,
    /// θ values at which `W_n^{(θ)}` is recorded for every generation.
    pub theta_grid: Vec<f64>,
    pub engine: Engine,
    /// When set to `μ = E W*`, each pruned child of weight `w` adds `w μ`,
    /// its subtree's expected contribution.
    pub prune_completion: Option<f64>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 30,
            prune_eps: DEFAULT_PRUNE_EPS,
            node_budget: DEFAULT_NODE_BUDGET,
            theta_grid: vec![1.0],
            engine: Engine::Auto,
            prune_completion: None,
        }
    }
}

impl TreeConfig {
    pub fn depth(max_depth: usize) -> Self {
        Self { max_depth, ..Self::default() }
    }

    pub fn with_theta(mut self, theta: &[f64]) -> Self {
        self.theta_grid = theta.to_vec();
        self
    }

    pub fn with_prune(mut self, eps: f64) -> Self {
        self.prune_eps = eps;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.node_budget = budget;
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_completion(mut self, mean_wstar: Option<f64>) -> Self {
        self.prune_completion = mean_wstar;
        self
    }

    fn lumped_for(&self, model: &BasicSequenceModel) -> bool {
        match self.engine {
            Engine::Auto => model.is_deterministic(),
            Engine::PerNode => false,
            Engine::Lumped => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    DepthReached,
    Extinct,
    BudgetExceeded,
}

/// Aggregates of generation `depth`, recorded before it is expanded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationStats {
    pub depth: usize,
    pub frontier_size: f64,
    /// `Σ_{|v|=n} L(v) C(v)`; `None` for the final, unexpanded generation.
    pub sum_lc: Option<f64>,
    pub w1: f64,
    /// `W_n^{(θ)}` on the configured θ-grid.
    pub w_theta: Vec<f64>,
    pub sup_weight: f64,
    /// Weight pruned while producing this generation.
    pub pruned_mass: f64,
}

/// Truncated minimal solution `Σ_{|u|<n} L(u) C(u)` for one realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialSum {
    /// Partial sum plus the pruning completion.
    pub value: f64,
    pub contributions: Vec<f64>,
    /// One entry per generation `0..=depth_reached`.
    pub generations: Vec<GenerationStats>,
    pub pruned_mass: f64,
    /// `μ ×` pruned mass, included in `value` when completion is enabled.
    pub completion: f64,
    pub truncated_draws: usize,
    pub termination: Termination,
    pub depth_reached: usize,
    pub theta_grid: Vec<f64>,
}

impl PartialSum {
    pub fn final_generation(&self) -> &GenerationStats {
        self.generations.last().expect("at least the root generation")
    }

    /// `W_n^{(θ)}` at the final depth for grid entry `theta`.
    pub fn final_w(&self, theta: f64) -> Option<f64> {
        let idx = self.theta_grid.iter().position(|&t| t == theta)?;
        Some(self.final_generation().w_theta[idx])
    }

    /// `W_k^{(θ)}` for a grid θ at every recorded generation `k`.
    pub fn w_path(&self, theta: f64) -> Option<Vec<f64>> {
        let idx = self.theta_grid.iter().position(|&t| t == theta)?;
        Some(self.generations.iter().map(|g| g.w_theta[idx]).collect())
    }

    /// Partial sums `Σ_{|u|<k} L(u) C(u)` for `k = 1..=depth_reached`.
    pub fn cumulative(&self) -> Vec<f64> {
        self.contributions
            .iter()
            .scan(0.0, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }
}

fn stats(frontier: &GenerationFrontier, grid: &[f64], pruned: f64) -> GenerationStats {
    GenerationStats {
        depth: frontier.depth,
        frontier_size: frontier.size(),
        sum_lc: None,
        w1: frontier.w_theta(1.0),
        w_theta: grid.iter().map(|&t| frontier.w_theta(t)).collect(),
        sup_weight: frontier.sup_weight(),
        pruned_mass: pruned,
    }
}

/// Expands one realization rooted at `rng` to `cfg.max_depth` generations.
pub fn partial_wstar(model: &BasicSequenceModel, rng: RngStream, cfg: &TreeConfig) -> PartialSum {
    assert!(cfg.max_depth >= 1, "max_depth must be at least 1");
    let mut frontier = if cfg.lumped_for(model) {
        GenerationFrontier::root_lumped(rng)
    } else {
        GenerationFrontier::root(rng)
    };
    let mut out = PartialSum {
        value: 0.0,
        contributions: Vec::new(),
        generations: vec![stats(&frontier, &cfg.theta_grid, 0.0)],
        pruned_mass: 0.0,
        completion: 0.0,
        truncated_draws: 0,
        termination: Termination::DepthReached,
        depth_reached: 0,
        theta_grid: cfg.theta_grid.clone(),
    };
    while frontier.depth < cfg.max_depth {
        if frontier.is_empty() {
            out.termination = Termination::Extinct;
            return out;
        }
        match expand_frontier(&frontier, model, cfg.prune_eps, cfg.node_budget) {
            Ok(step) => {
                out.value += step.contribution;
                out.contributions.push(step.contribution);
                out.pruned_mass += step.pruned_mass;
                if let Some(mu) = cfg.prune_completion {
                    out.completion += step.pruned_mass * mu;
                    out.value += step.pruned_mass * mu;
                }
                out.truncated_draws += step.truncated_draws;
                out.generations.last_mut().expect("nonempty").sum_lc = Some(step.contribution);
                frontier = step.next;
                out.generations.push(stats(&frontier, &cfg.theta_grid, step.pruned_mass));
                out.depth_reached = frontier.depth;
            }
            Err(Error::Budget { partial_value, .. }) => {
                out.value += partial_value;
                out.termination = Termination::BudgetExceeded;
                return out;
            }
            Err(e) => unreachable!("expansion only fails on budget: {e}"),
        }
    }
    if frontier.is_empty() {
        out.termination = Termination::Extinct;
    }
    out
}

/// Writes one CSV row per generation:
/// `n, frontier_size, sum_lc, W_n^(1), W_n^(alpha), L_n*, pruned_mass`.
pub fn write_trace_csv<W: Write>(out: &mut W, partial: &PartialSum, alpha: Option<f64>) -> io::Result<()> {
    writeln!(out, "n,frontier_size,sum_lc,w1,w_alpha,sup_weight,pruned_mass")?;
    let alpha_col = alpha.and_then(|a| partial.w_path(a));
    for (k, g) in partial.generations.iter().enumerate() {
        let sum_lc = g.sum_lc.map(fmt17).unwrap_or_default();
        let wa = alpha_col.as_ref().map(|col| fmt17(col[k])).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g.depth,
            fmt17(g.frontier_size),
            sum_lc,
            fmt17(g.w1),
            wa,
            fmt17(g.sup_weight),
            fmt17(g.pruned_mass)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::Law;
    use crate::model::{ModelKind, WeightLaw};

    fn det_quarter() -> BasicSequenceModel {
        BasicSequenceModel::deterministic(1.0, &[0.25, 0.25]).unwrap()
    }

    #[test]
    fn one_step_by_hand() {
        let root = GenerationFrontier::root_labeled(RngStream::new(1));
        let step = expand_frontier(&root, &det_quarter(), 0.0, 100).unwrap();
        assert_eq!(step.contribution, 1.0);
        let labels = step.next.labels.clone().unwrap();
        assert_eq!(labels, vec![NodeLabel(vec![1]), NodeLabel(vec![2])]);
        assert!(step.next.nodes.iter().all(|n| n.weight == 0.25));
        let two = expand_frontier(&step.next, &det_quarter(), 0.0, 100).unwrap();
        assert_eq!(two.next.size(), 4.0);
        assert!(two.next.nodes.iter().all(|n| n.weight == 1.0 / 16.0));
        assert_eq!(two.next.w_theta(1.0), 0.25);
        assert_eq!(two.next.w_theta(0.0), 4.0);
    }

    #[test]
    fn geometric_partial_sums() {
        for engine in [Engine::PerNode, Engine::Lumped] {
            let cfg = TreeConfig::depth(4).with_prune(0.0).with_engine(engine);
            let p = partial_wstar(&det_quarter(), RngStream::new(1), &cfg);
            assert!((p.value - 1.875).abs() < 1e-15);
            assert_eq!(p.termination, Termination::DepthReached);
            let doubling = BasicSequenceModel::deterministic(1.0, &[2.0, 2.0]).unwrap();
            let cfg = TreeConfig::depth(5).with_prune(0.0).with_engine(engine);
            let p = partial_wstar(&doubling, RngStream::new(1), &cfg);
            assert_eq!(p.value, 341.0);
            assert_eq!(p.contributions, vec![1.0, 4.0, 16.0, 64.0, 256.0]);
        }
    }

    #[test]
    fn lumped_matches_per_node_on_unequal_weights() {
        let m = BasicSequenceModel::deterministic(0.7, &[0.3, 0.5, 0.1]).unwrap();
        let grid = [0.5, 1.0];
        let a = partial_wstar(&m, RngStream::new(2), &TreeConfig::depth(7).with_theta(&grid).with_prune(0.0).with_engine(Engine::PerNode));
        let b = partial_wstar(&m, RngStream::new(2), &TreeConfig::depth(7).with_theta(&grid).with_engine(Engine::Lumped));
        assert!((a.value - b.value).abs() < 1e-12);
        for (x, y) in a.generations.iter().zip(&b.generations) {
            assert!((x.frontier_size - y.frontier_size).abs() < 1e-9);
            for (u, v) in x.w_theta.iter().zip(&y.w_theta) {
                assert!((u - v).abs() < 1e-12 * u.abs().max(1.0));
            }
            assert_eq!(x.sup_weight, y.sup_weight);
        }
    }

    #[test]
    fn budget_is_a_reported_outcome() {
        let doubling = BasicSequenceModel::deterministic(1.0, &[2.0, 2.0]).unwrap();
        let cfg = TreeConfig::depth(30).with_budget(1000).with_engine(Engine::PerNode);
        let p = partial_wstar(&doubling, RngStream::new(1), &cfg);
        assert_eq!(p.termination, Termination::BudgetExceeded);
        assert!(p.value >= 1.0 + 4.0 + 16.0 + 64.0 + 256.0);
    }

    #[test]
    fn pruning_is_accounted() {
        let m = det_quarter();
        let cfg = TreeConfig::depth(6).with_prune(1e-3).with_engine(Engine::PerNode);
        let p = partial_wstar(&m, RngStream::new(1), &cfg);
        // 4^-5 < 1e-3 < 4^-4: generation 5 is pruned entirely (32 nodes of 4^-5).
        assert_eq!(p.termination, Termination::Extinct);
        assert!((p.pruned_mass - 32.0 / 1024.0).abs() < 1e-15);
        assert_eq!(p.depth_reached, 5);
    }

    #[test]
    fn completion_restores_the_pruned_mean() {
        // E W* = 1 / (1 − 1/2) = 2; the pruned generation 5 carries mass 1/32.
        let cfg = TreeConfig::depth(6).with_prune(1e-3).with_engine(Engine::PerNode).with_completion(Some(2.0));
        let p = partial_wstar(&det_quarter(), RngStream::new(1), &cfg);
        assert!((p.completion - 1.0 / 16.0).abs() < 1e-15);
        assert!((p.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_split_keeps_unit_mass() {
        let m = BasicSequenceModel::new(ModelKind::Explicit {
            c_law: Law::point(1.0),
            t_law: WeightLaw::Split { u: Law::uniform(0.0, 1.0) },
        })
        .unwrap();
        let p = partial_wstar(&m, RngStream::new(4), &TreeConfig::depth(10).with_prune(0.0));
        for g in &p.generations {
            assert!((g.w1 - 1.0).abs() < 1e-12);
        }
        for g in p.generations.windows(2) {
            assert!(g[1].sup_weight <= g[0].sup_weight);
        }
    }

    fn dfs(model: &BasicSequenceModel, root: &RngStream, label: NodeLabel, depth: usize, out: &mut Vec<(NodeLabel, f64, Vec<f64>)>) {
        let r = crate::model::draw_basic_sequence(model, &label.stream(root));
        if depth > 0 {
            for (i, &t) in r.t.iter().enumerate() {
                if t > 0.0 {
                    dfs(model, root, label.child(i as u32 + 1), depth - 1, out);
                }
            }
        }
        out.push((label, r.c, r.t));
    }

    #[test]
    fn breadth_and_depth_first_agree_per_label() {
        let m = BasicSequenceModel::new(ModelKind::Explicit {
            c_law: Law::exponential(1.0),
            t_law: WeightLaw::Counted {
                count: crate::law::Pmf::new(vec![0.2, 0.3, 0.5]).unwrap(),
                weight: crate::model::CountedWeight::Iid { law: Law::uniform(0.1, 0.9) },
            },
        })
        .unwrap();
        let root = RngStream::new(77);
        let mut by_dfs = Vec::new();
        dfs(&m, &root, NodeLabel::root(), 4, &mut by_dfs);
        let by_dfs: std::collections::HashMap<_, _> = by_dfs.into_iter().map(|(l, c, t)| (l, (c, t))).collect();

        let mut frontier = GenerationFrontier::root_labeled(root);
        let mut seen = 0;
        for _ in 0..=4 {
            let labels = frontier.labels.clone().unwrap();
            for (label, node) in labels.iter().zip(&frontier.nodes) {
                let r = crate::model::draw_basic_sequence(&m, &node.stream);
                assert_eq!(by_dfs[label], (r.c, r.t));
                seen += 1;
            }
            frontier = expand_frontier(&frontier, &m, 0.0, 1 << 20).unwrap().next;
        }
        assert_eq!(seen, by_dfs.len());
    }

    #[test]
    fn trace_csv_has_one_row_per_generation() {
        let p = partial_wstar(&det_quarter(), RngStream::new(1), &TreeConfig::depth(3).with_theta(&[1.0, 0.5]));
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &p, Some(0.5)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,1.0000000000000000e0,1.0000000000000000e0,"));
    }

    #[test]
    fn label_prefix() {
        let v = NodeLabel(vec![2, 1, 3]);
        assert_eq!(v.prefix(2), NodeLabel(vec![2, 1]));
        assert_eq!(v.prefix(9), v);
        assert_eq!(v.to_string(), "2.1.3");
        assert_eq!(NodeLabel::root().depth(), 0);
    }
}

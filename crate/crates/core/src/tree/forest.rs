use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::leaf::LeafModel;
use super::moves::{choose_move, propose, Move, Proposal};
use super::node::{DecisionTree, NodeId, ROOT};
use super::prior::{log_rule_prior, TreePrior};
use crate::error::{Error, Result};

/// Proposal and acceptance tallies per move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

impl MoveStats {
    pub fn record(&mut self, mv: Move, accepted: bool) {
        self.proposed[mv.index()] += 1;
        if accepted {
            self.accepted[mv.index()] += 1;
        }
    }

    pub fn merge(&mut self, other: &MoveStats) {
        for i in 0..4 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub mv: Move,
    /// False when the move was unavailable on the current tree.
    pub proposed: bool,
    pub accepted: bool,
}

/// Settings for one structural update.
#[derive(Debug, Clone, Copy)]
pub struct MhContext<'a> {
    pub design: &'a Design,
    pub prior: &'a TreePrior,
    pub leaf: &'a LeafModel,
    /// When false the likelihood is replaced by a constant (prior sampling).
    pub use_likelihood: bool,
}

struct LeafSums {
    counts: Vec<usize>,
    sums: Vec<f64>,
    p: usize,
}

impl LeafSums {
    fn new(capacity: usize, p: usize) -> Self {
        LeafSums {
            counts: vec![0; capacity],
            sums: vec![0.0; capacity * p],
            p,
        }
    }

    fn add(&mut self, leaf: NodeId, resid: &DMatrix<f64>, row: usize) {
        self.counts[leaf] += 1;
        for j in 0..self.p {
            self.sums[leaf * self.p + j] += resid[(row, j)];
        }
    }

    fn sum(&self, leaf: NodeId) -> &[f64] {
        &self.sums[leaf * self.p..(leaf + 1) * self.p]
    }
}

fn subtree_rule_prior(
    tree: &DecisionTree,
    root: NodeId,
    rows: &[usize],
    leaves: &[NodeId],
    design: &Design,
) -> Option<f64> {
    let mut total = 0.0;
    for node in tree.subtree(root) {
        if let Some(rule) = tree.rule(node) {
            let at: Vec<usize> = rows
                .iter()
                .zip(leaves)
                .filter(|(_, &l)| tree.is_ancestor_or_self(node, l))
                .map(|(&r, _)| r)
                .collect();
            total += log_rule_prior(design, &at, rule)?;
        }
    }
    Some(total)
}

/// Evaluated proposal: log acceptance ratio and the re-routed rows.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_ratio: f64,
    rows: Vec<usize>,
    new_leaves: Vec<NodeId>,
}

/// Log MH ratio of `prop` against the current `tree`.
///
/// `None` means the current state's rules are not valid for its rows and the
/// move should be skipped; a ratio of `-inf` marks a proposal that leaves a
/// leaf empty or carries an invalid rule.
pub fn evaluate_proposal(
    tree: &DecisionTree,
    leaf_of: &[NodeId],
    resid: &DMatrix<f64>,
    ctx: &MhContext<'_>,
    prop: &Proposal,
) -> Option<Evaluation> {
    let root = prop.root;
    let new = &prop.tree;
    let p = resid.ncols();

    let mut inside = vec![false; tree.capacity()];
    for id in tree.subtree(root) {
        inside[id] = true;
    }
    let rows: Vec<usize> = (0..leaf_of.len()).filter(|&i| inside[leaf_of[i]]).collect();
    let old_leaves: Vec<NodeId> = rows.iter().map(|&i| leaf_of[i]).collect();
    let new_leaves: Vec<NodeId> = rows
        .iter()
        .map(|&i| new.route_from(root, |v| ctx.design.value(i, v)))
        .collect();
    let rejected = |rows, new_leaves| {
        Some(Evaluation {
            log_ratio: f64::NEG_INFINITY,
            rows,
            new_leaves,
        })
    };

    let mut old_sums = LeafSums::new(tree.capacity(), p);
    let mut new_sums = LeafSums::new(new.capacity(), p);
    for (k, &i) in rows.iter().enumerate() {
        old_sums.add(old_leaves[k], resid, i);
        new_sums.add(new_leaves[k], resid, i);
    }
    let new_subtree = new.subtree(root);
    if new_subtree
        .iter()
        .any(|&id| new.node(id).is_leaf() && new_sums.counts[id] == 0)
    {
        return rejected(rows, new_leaves);
    }

    let old_rule_lp = subtree_rule_prior(tree, root, &rows, &old_leaves, ctx.design)?;
    let Some(new_rule_lp) = subtree_rule_prior(new, root, &rows, &new_leaves, ctx.design) else {
        return rejected(rows, new_leaves);
    };

    let mut log_ratio = prop.log_q_ratio + new_rule_lp - old_rule_lp
        + ctx.prior.log_tree_prior(new)
        - ctx.prior.log_tree_prior(tree);
    if ctx.use_likelihood {
        for id in tree.subtree(root) {
            if tree.node(id).is_leaf() {
                log_ratio -= ctx.leaf.log_marginal(old_sums.counts[id], old_sums.sum(id));
            }
        }
        for &id in &new_subtree {
            if new.node(id).is_leaf() {
                log_ratio += ctx.leaf.log_marginal(new_sums.counts[id], new_sums.sum(id));
            }
        }
    }
    Some(Evaluation {
        log_ratio,
        rows,
        new_leaves,
    })
}

/// One Metropolis-Hastings structural update of `tree` against the partial
/// residuals `resid`, with leaf parameters integrated out.
///
/// On acceptance `tree` and `leaf_of` are replaced; new leaves carry zero
/// parameters until the next call to [`sample_node_params`].
pub fn mh_tree_update<R: Rng + ?Sized>(
    tree: &mut DecisionTree,
    leaf_of: &mut [NodeId],
    resid: &DMatrix<f64>,
    ctx: &MhContext<'_>,
    rng: &mut R,
) -> MhOutcome {
    let mv = choose_move(&ctx.prior.moves, rng);
    let noop = MhOutcome {
        mv,
        proposed: false,
        accepted: false,
    };
    let Some(prop) = propose(tree, mv, ctx.design, leaf_of, ctx.prior, rng) else {
        return noop;
    };
    let Some(eval) = evaluate_proposal(tree, leaf_of, resid, ctx, &prop) else {
        return noop;
    };
    let accepted = eval.log_ratio >= 0.0 || rng.random::<f64>().ln() < eval.log_ratio;
    if accepted {
        for (k, &i) in eval.rows.iter().enumerate() {
            leaf_of[i] = eval.new_leaves[k];
        }
        *tree = prop.tree;
    }
    MhOutcome {
        mv,
        proposed: true,
        accepted,
    }
}

/// Draws every leaf vector of `tree` from its conjugate posterior given the
/// partial residuals of the rows routed to it.
pub fn sample_node_params<R: Rng + ?Sized>(
    tree: &mut DecisionTree,
    leaf_of: &[NodeId],
    resid: &DMatrix<f64>,
    leaf: &LeafModel,
    rng: &mut R,
) {
    let p = resid.ncols();
    let mut sums = LeafSums::new(tree.capacity(), p);
    for (i, &l) in leaf_of.iter().enumerate() {
        sums.add(l, resid, i);
    }
    for id in tree.leaves() {
        let mu = leaf.sample(sums.counts[id], sums.sum(id), rng);
        tree.set_leaf_mu(id, mu);
    }
}

/// Sum-of-trees state: trees, per-tree row-to-leaf maps and the fitted matrix.
#[derive(Debug, Clone)]
pub struct ForestState {
    trees: Vec<DecisionTree>,
    leaf_of: Vec<Vec<NodeId>>,
    fitted: DMatrix<f64>,
}

impl ForestState {
    /// `k` single-leaf trees with zero parameters over `n` rows.
    pub fn new(k: usize, n: usize, p: usize) -> Self {
        ForestState {
            trees: vec![DecisionTree::stump(p); k],
            leaf_of: vec![vec![ROOT; n]; k],
            fitted: DMatrix::zeros(n, p),
        }
    }

    pub fn from_trees(trees: Vec<DecisionTree>, design: &Design, p: usize) -> Result<Self> {
        if trees.iter().any(|t| t.response_dim() != p) {
            return Err(Error::Dimension("tree response dims disagree".into()));
        }
        let n = design.n_rows();
        let leaf_of = trees
            .iter()
            .map(|t| (0..n).map(|i| t.route(design, i)).collect())
            .collect();
        let mut state = ForestState {
            trees,
            leaf_of,
            fitted: DMatrix::zeros(n, p),
        };
        state.fitted = state.recompute_fitted();
        Ok(state)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_rows(&self) -> usize {
        self.fitted.nrows()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn leaf_of(&self, k: usize) -> &[NodeId] {
        &self.leaf_of[k]
    }

    pub fn fitted(&self) -> &DMatrix<f64> {
        &self.fitted
    }

    /// Fitted values rebuilt from the leaf maps.
    pub fn recompute_fitted(&self) -> DMatrix<f64> {
        let (n, p) = self.fitted.shape();
        let mut out = DMatrix::zeros(n, p);
        for (tree, map) in self.trees.iter().zip(&self.leaf_of) {
            for (i, &l) in map.iter().enumerate() {
                let mu = tree.leaf_mu(l);
                for j in 0..p {
                    out[(i, j)] += mu[j];
                }
            }
        }
        out
    }

    /// Sum of leaf vectors for fresh rows.
    pub fn predict(&self, design: &Design) -> DMatrix<f64> {
        predict_trees(&self.trees, design, self.fitted.ncols())
    }

    /// Leaf sizes of tree `k`, indexed by node id.
    pub fn leaf_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; self.trees[k].capacity()];
        for &l in &self.leaf_of[k] {
            counts[l] += 1;
        }
        counts
    }

    /// Leaf each tree would send row values `x` to.
    pub fn route_values(&self, x: impl Fn(usize) -> f64 + Copy) -> Vec<NodeId> {
        self.trees.iter().map(|t| t.route_from(ROOT, x)).collect()
    }

    /// Sum of leaf vectors at the given per-tree leaves.
    pub fn sum_at(&self, leaves: &[NodeId]) -> DVector<f64> {
        let p = self.fitted.ncols();
        let mut out = DVector::zeros(p);
        for (t, &l) in self.trees.iter().zip(leaves) {
            out += t.leaf_mu(l);
        }
        out
    }

    /// Moves row `i` to the given per-tree leaves and refreshes its fitted row.
    pub fn assign_row(&mut self, i: usize, leaves: &[NodeId]) {
        for (k, &l) in leaves.iter().enumerate() {
            self.leaf_of[k][i] = l;
        }
        let fit = self.sum_at(leaves);
        for j in 0..fit.len() {
            self.fitted[(i, j)] = fit[j];
        }
    }

    /// One backfitting pass: each tree gets an MH structural update and a
    /// leaf draw against `target` minus the other trees' fit.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        target: &DMatrix<f64>,
        ctx: &MhContext<'_>,
        rng: &mut R,
    ) -> MoveStats {
        let (n, p) = self.fitted.shape();
        assert_eq!(target.shape(), (n, p), "target shape mismatch");
        let mut stats = MoveStats::default();
        let mut resid = DMatrix::zeros(n, p);
        for k in 0..self.trees.len() {
            let tree = &mut self.trees[k];
            let map = &mut self.leaf_of[k];
            for i in 0..n {
                let mu = tree.leaf_mu(map[i]);
                for j in 0..p {
                    resid[(i, j)] = target[(i, j)] - self.fitted[(i, j)] + mu[j];
                }
            }
            let outcome = mh_tree_update(tree, map, &resid, ctx, rng);
            if outcome.proposed {
                stats.record(outcome.mv, outcome.accepted);
            }
            sample_node_params(tree, map, &resid, ctx.leaf, rng);
            for i in 0..n {
                let mu = tree.leaf_mu(map[i]);
                for j in 0..p {
                    self.fitted[(i, j)] = target[(i, j)] - resid[(i, j)] + mu[j];
                }
            }
        }
        self.fitted = self.recompute_fitted();
        stats
    }
}

pub fn predict_trees(trees: &[DecisionTree], design: &Design, p: usize) -> DMatrix<f64> {
    let n = design.n_rows();
    let mut out = DMatrix::zeros(n, p);
    for tree in trees {
        for i in 0..n {
            let mu = tree.leaf_mu(tree.route(design, i));
            for j in 0..p {
                out[(i, j)] += mu[j];
            }
        }
    }
    out
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::leaf::LeafModel;
use super::moves::draw_rule;
use super::node::{DecisionTree, NodeId, SplitRule, ROOT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs {
            grow: 0.25,
            prune: 0.25,
            change: 0.4,
            swap: 0.1,
        }
    }
}

/// Depth-penalizing split prior `P(split at depth d) = alpha (1 + d)^(-beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
    pub moves: MoveProbs,
}

impl Default for TreePrior {
    fn default() -> Self {
        TreePrior {
            alpha: 0.95,
            beta: 2.0,
            moves: MoveProbs::default(),
        }
    }
}

impl TreePrior {
    pub fn validate(&self) -> Result<()> {
        let m = &self.moves;
        let probs = [m.grow, m.prune, m.change, m.swap];
        if probs.iter().any(|&x| !(0.0..=1.0).contains(&x)) || ((probs.iter().sum::<f64>()) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("move probabilities must sum to 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta >= 0.0) {
            return Err(Error::Domain("need 0 < alpha < 1 and beta >= 0".into()));
        }
        if m.grow == 0.0 || m.prune == 0.0 {
            return Err(Error::Domain("grow and prune must both be possible".into()));
        }
        Ok(())
    }

    pub fn p_split(&self, depth: usize) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }

    /// Topology part of the prior: internal nodes contribute `ln p_split(d)`,
    /// leaves `ln(1 - p_split(d))`.
    pub fn log_tree_prior(&self, tree: &DecisionTree) -> f64 {
        tree.node_ids()
            .map(|id| {
                let node = tree.node(id);
                let ps = self.p_split(node.depth);
                if node.is_leaf() {
                    (1.0 - ps).ln()
                } else {
                    ps.ln()
                }
            })
            .sum()
    }
}

/// Log prior probability of `rule` at a node reached by `rows`:
/// uniform over splittable variables, then uniform over that variable's cut grid.
///
/// `None` when the rule's variable cannot be split on these rows.
pub fn log_rule_prior(design: &Design, rows: &[usize], rule: &SplitRule) -> Option<f64> {
    if !design.is_splittable(rows, rule.var) {
        return None;
    }
    let n_vars = design.splittable_vars(rows).len();
    let n_cuts = design.cut_grid(rows, rule.var).len();
    Some(-(n_vars as f64).ln() - (n_cuts as f64).ln())
}

/// Exact draw of a topology and rules from the tree prior on `design`;
/// leaves carry zero vectors of length `p`.
///
/// Nodes with no splittable variable are forced leaves, so draws are
/// accepted with probability `∏ (1 - p_split(d))` over such leaves.
pub fn sample_prior_tree<R: Rng + ?Sized>(
    design: &Design,
    prior: &TreePrior,
    p: usize,
    rng: &mut R,
) -> DecisionTree {
    let all: Vec<usize> = (0..design.n_rows()).collect();
    loop {
        let mut tree = DecisionTree::stump(p);
        let mut stack: Vec<(NodeId, Vec<usize>)> = vec![(ROOT, all.clone())];
        let mut log_accept = 0.0;
        while let Some((id, rows)) = stack.pop() {
            let ps = prior.p_split(tree.node(id).depth);
            match draw_rule(design, &rows, rng) {
                None => log_accept += (1.0 - ps).ln(),
                Some((rule, _, _)) => {
                    if rng.random::<f64>() >= ps {
                        continue;
                    }
                    let (l, r) = tree.grow(id, rule);
                    let (lr, rr): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| rule.goes_left(design.value(i, rule.var)));
                    stack.push((r, rr));
                    stack.push((l, lr));
                }
            }
        }
        if log_accept == 0.0 || rng.random::<f64>().ln() < log_accept {
            return tree;
        }
    }
}

/// Replaces every leaf vector with a draw from the leaf prior.
pub fn sample_prior_leaves<R: Rng + ?Sized>(tree: &mut DecisionTree, leaf: &LeafModel, rng: &mut R) {
    for id in tree.leaves() {
        tree.set_leaf_mu(id, leaf.sample_prior(rng));
    }
}

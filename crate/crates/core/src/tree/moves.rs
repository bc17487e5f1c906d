use rand::Rng;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::node::{DecisionTree, NodeId, SplitRule};
use super::prior::{log_rule_prior, MoveProbs, TreePrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Grow,
    Prune,
    Change,
    Swap,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Grow, Move::Prune, Move::Change, Move::Swap];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn choose_move<R: Rng + ?Sized>(probs: &MoveProbs, rng: &mut R) -> Move {
    let u: f64 = rng.random();
    if u < probs.grow {
        Move::Grow
    } else if u < probs.grow + probs.prune {
        Move::Prune
    } else if u < probs.grow + probs.prune + probs.change {
        Move::Change
    } else {
        Move::Swap
    }
}

/// Candidate tree plus the root of the subtree it modifies.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub tree: DecisionTree,
    pub root: NodeId,
    /// `ln q(reverse) - ln q(forward)`.
    pub log_q_ratio: f64,
    pub kind: Move,
}

/// Training rows currently routed into the subtree rooted at `node`.
pub fn rows_at(tree: &DecisionTree, leaf_of: &[NodeId], node: NodeId) -> Vec<usize> {
    let mut inside = vec![false; tree.capacity()];
    for id in tree.subtree(node) {
        inside[id] = true;
    }
    leaf_of
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| inside[l].then_some(i))
        .collect()
}

fn pick<T: Copy, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> T {
    items[rng.random_range(0..items.len())]
}

/// Draws a rule uniformly: variable among the splittable ones, then a cut
/// from its grid, then a fair coin for the missing direction.
/// Returns the rule, the number of splittable variables and the grid size.
pub fn draw_rule<R: Rng + ?Sized>(
    design: &Design,
    rows: &[usize],
    rng: &mut R,
) -> Option<(SplitRule, usize, usize)> {
    let vars = design.splittable_vars(rows);
    if vars.is_empty() {
        return None;
    }
    let var = pick(&vars, rng);
    let grid = design.cut_grid(rows, var);
    let cut = pick(&grid, rng);
    let missing_left = rng.random_bool(0.5);
    Some((
        SplitRule {
            var,
            cut,
            missing_left,
        },
        vars.len(),
        grid.len(),
    ))
}

/// Grow proposal at `leaf` with a given rule, with the same proposal ratio
/// the random grow move would assign it.
pub fn grow_proposal(
    tree: &DecisionTree,
    leaf: NodeId,
    rule: SplitRule,
    design: &Design,
    leaf_of: &[NodeId],
    prior: &TreePrior,
) -> Option<Proposal> {
    let rows = rows_at(tree, leaf_of, leaf);
    let n_vars = design.splittable_vars(&rows).len();
    if !design.is_splittable(&rows, rule.var) {
        return None;
    }
    let n_cuts = design.cut_grid(&rows, rule.var).len();
    let b = tree.n_leaves() as f64;
    let mut new = tree.clone();
    new.grow(leaf, rule);
    let w2 = new.singly_internal().len() as f64;
    let probs = &prior.moves;
    Some(Proposal {
        tree: new,
        root: leaf,
        log_q_ratio: (probs.prune / w2).ln() - (probs.grow / b).ln()
            + (n_vars as f64).ln()
            + (n_cuts as f64).ln(),
        kind: Move::Grow,
    })
}

/// Builds a proposal for `mv`, or `None` when the move is not available on
/// this tree (which the sampler treats as staying put).
pub fn propose<R: Rng + ?Sized>(
    tree: &DecisionTree,
    mv: Move,
    design: &Design,
    leaf_of: &[NodeId],
    prior: &TreePrior,
    rng: &mut R,
) -> Option<Proposal> {
    let probs = &prior.moves;
    match mv {
        Move::Grow => {
            let leaves = tree.leaves();
            let node = pick(&leaves, rng);
            let rows = rows_at(tree, leaf_of, node);
            let (rule, n_vars, n_cuts) = draw_rule(design, &rows, rng)?;
            let mut new = tree.clone();
            new.grow(node, rule);
            let w2 = new.singly_internal().len() as f64;
            let log_q_ratio = (probs.prune / w2).ln() - (probs.grow / leaves.len() as f64).ln()
                + (n_vars as f64).ln()
                + (n_cuts as f64).ln();
            Some(Proposal {
                tree: new,
                root: node,
                log_q_ratio,
                kind: mv,
            })
        }
        Move::Prune => {
            let w2 = tree.singly_internal();
            if w2.is_empty() {
                return None;
            }
            let node = pick(&w2, rng);
            let rows = rows_at(tree, leaf_of, node);
            let rule_lp = log_rule_prior(design, &rows, tree.rule(node)?)?;
            let b = tree.n_leaves() as f64;
            let mut new = tree.clone();
            new.prune(node);
            let log_q_ratio =
                (probs.grow / (b - 1.0)).ln() + rule_lp - (probs.prune / w2.len() as f64).ln();
            Some(Proposal {
                tree: new,
                root: node,
                log_q_ratio,
                kind: mv,
            })
        }
        Move::Change => {
            let w2 = tree.singly_internal();
            if w2.is_empty() {
                return None;
            }
            let node = pick(&w2, rng);
            let rows = rows_at(tree, leaf_of, node);
            let old = *tree.rule(node)?;
            if !design.is_splittable(&rows, old.var) {
                return None;
            }
            let old_cuts = design.cut_grid(&rows, old.var).len();
            let (rule, _, new_cuts) = draw_rule(design, &rows, rng)?;
            let mut new = tree.clone();
            new.set_rule(node, rule);
            Some(Proposal {
                tree: new,
                root: node,
                log_q_ratio: (new_cuts as f64).ln() - (old_cuts as f64).ln(),
                kind: mv,
            })
        }
        Move::Swap => {
            let pairs: Vec<(NodeId, NodeId)> = tree
                .internal_nodes()
                .into_iter()
                .filter_map(|u| {
                    let parent = tree.node(u).parent?;
                    Some((parent, u))
                })
                .collect();
            if pairs.is_empty() {
                return None;
            }
            let (v, u) = pick(&pairs, rng);
            let rule_v = *tree.rule(v)?;
            let rule_u = *tree.rule(u)?;
            let (l, r) = tree.children(v)?;
            let sibling = if l == u { r } else { l };
            let sibling_rule = tree.rule(sibling).copied();
            let mut new = tree.clone();
            new.set_rule(v, rule_u);
            new.set_rule(u, rule_v);
            match sibling_rule {
                Some(s) if s == rule_u => new.set_rule(sibling, rule_v),
                // would make the siblings identical only after the move; not reversible
                Some(s) if s == rule_v => return None,
                _ => {}
            }
            Some(Proposal {
                tree: new,
                root: v,
                log_q_ratio: 0.0,
                kind: mv,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chain_rng;
    use crate::tree::node::ROOT;

    fn grid_design() -> Design {
        Design::from_columns(vec![(0..10).map(|i| i as f64).collect()]).unwrap()
    }

    #[test]
    fn prune_on_root_is_noop() {
        let t = DecisionTree::stump(1);
        let d = grid_design();
        let leaf_of = vec![ROOT; 10];
        let mut rng = chain_rng(0, 0);
        assert!(propose(&t, Move::Prune, &d, &leaf_of, &TreePrior::default(), &mut rng).is_none());
        assert!(propose(&t, Move::Swap, &d, &leaf_of, &TreePrior::default(), &mut rng).is_none());
        assert!(propose(&t, Move::Change, &d, &leaf_of, &TreePrior::default(), &mut rng).is_none());
    }

    #[test]
    fn grow_ratio_from_root() {
        let t = DecisionTree::stump(1);
        let d = grid_design();
        let leaf_of = vec![ROOT; 10];
        let mut rng = chain_rng(1, 0);
        let prop = propose(&t, Move::Grow, &d, &leaf_of, &TreePrior::default(), &mut rng).unwrap();
        // one leaf, one variable with 9 cuts, one prunable node afterwards
        assert!((prop.log_q_ratio - 9f64.ln()).abs() < 1e-12);
        assert_eq!(prop.tree.n_leaves(), 2);
    }

    #[test]
    fn swap_exchanges_parent_and_child_rules() {
        let d = Design::from_columns(vec![
            (0..10).map(|i| i as f64).collect(),
            (0..10).map(|i| (i * 7 % 10) as f64).collect(),
        ])
        .unwrap();
        let mut t = DecisionTree::stump(1);
        let r0 = SplitRule { var: 0, cut: 6.0, missing_left: true };
        let r1 = SplitRule { var: 1, cut: 4.0, missing_left: false };
        let (l, _) = t.grow(ROOT, r0);
        t.grow(l, r1);
        let leaf_of: Vec<_> = (0..10).map(|i| t.route(&d, i)).collect();
        let mut rng = chain_rng(2, 0);
        let prop = propose(&t, Move::Swap, &d, &leaf_of, &TreePrior::default(), &mut rng).unwrap();
        assert_eq!(prop.tree.rule(ROOT), Some(&r1));
        assert_eq!(prop.tree.rule(l), Some(&r0));
    }
}
